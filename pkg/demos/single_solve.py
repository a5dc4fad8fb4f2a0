"""One collocated solve, start to finish.

Builds the affine-coefficient benchmark, solves the PDE at a single
parameter point, and prints the hierarchical error indicator that drives
mesh refinement.  Run with: python3 demos/single_solve.py
"""

from scfem import fem, mesh, problems
from scfem.estimators import spatial_indicator
from scfem.sparse_grid import grid_points
from scfem.multiindex import MultiIndexSet

problem = problems.test_case_1(dim=4)
coarse = mesh.initial_mesh(problem.domain, problem.default_resolution)
print(f"problem {problem.name}: {problem.dim} parameters on "
      f"{problem.domain}, coarse mesh has {coarse.num_vertices} vertices")

# the one-point grid of the root index set sits at the parameter origin
point = grid_points(MultiIndexSet.root(problem.dim))[0]
print(f"collocation point y = {point.coords}")

solution = fem.solve(coarse, problem.coefficient_at(point.coords),
                     problem.rhs_at(point.coords))
print(f"solution: {solution.size} values, "
      f"max {solution.max():.6f}, energy norm "
      f"{fem.energy_norm(coarse, solution):.6f}")

indicator = spatial_indicator(coarse, solution, problem, point)
largest = sorted(indicator.local.items(), key=lambda kv: -kv[1])[:3]
print(f"error indicator total: {indicator.total:.6f}")
print("three largest local contributions:")
for rec, value in largest:
    x, y = rec.midpoint
    print(f"  edge midpoint ({x:.3f}, {y:.3f}): {value:.2e}")
