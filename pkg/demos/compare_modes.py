"""Multilevel against single-level on the same problem.

Runs both modes of the adaptive loop on a one-parameter diffusion problem
and compares cost at the tightest tolerance both reached.  The multilevel
mode keeps an independent mesh per collocation point, so points whose
solutions are cheap to resolve stay on coarse meshes.  Run with:
python3 demos/compare_modes.py
"""

from scfem import adaptive, problems
from scfem.cli import fit_convergence_slope

problem = problems.custom_problem(
    dim=1, coefficient_expr="2 + y1*sin(pi*x1)*sin(pi*x2)",
    rhs_expr="1 + x1", resolution=4)

results = {}
for mode in adaptive.MODES:
    config = adaptive.AdaptiveConfig(tolerance=4e-3, max_iterations=40,
                                     mode=mode)
    results[mode] = adaptive.run(problem, config)
    final = results[mode].trace.records[-1]
    print(f"{mode:12s}: {len(results[mode].trace)} iterations, "
          f"{final.n_points} points, {final.total_dofs} total dofs, "
          f"meshes {list(final.mesh_dofs)}")

rows = {mode: [(r.total_dofs, r.mu + r.tau) for r in res.trace
               if r.mu is not None]
        for mode, res in results.items()}
matched = max(min(v for _, v in r) for r in rows.values())
at_match = {mode: next(d for d, v in r if v <= matched)
            for mode, r in rows.items()}
print(f"\nmatched tolerance {matched:.4e}:")
for mode, dofs in at_match.items():
    slope = fit_convergence_slope(*zip(*rows[mode]))
    print(f"  {mode:12s} {dofs:6d} dofs, fitted slope {slope:+.3f}")
ratio = at_match["multilevel"] / at_match["single-level"]
print(f"multilevel uses {ratio:.2f}x the dofs of single-level "
      f"(below 1 means cheaper)")
