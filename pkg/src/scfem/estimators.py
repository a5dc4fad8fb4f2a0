"""Hierarchical spatial and sparse-grid parametric error estimation.

Spatial accuracy of one collocated solve is measured by a detail-space
problem: the mesh is refined uniformly, the residual of the lifted solution
is restricted to the hat functions at new interior vertices, and a Laplace
Galerkin solve on that block yields a global value and one local indicator
per interior edge midpoint.  Parametric accuracy is measured, per reduced
margin index, by how badly the current sparse interpolant predicts the
coarse-mesh solves at the points the index would activate.

Global estimates combine per-point differences through the exact Lagrange
Gram matrix, with all spatial inner products taken on the overlay of the
participating meshes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import fem
from .errors import ContractViolationError
from .mesh import (EdgeMidpoint, Triangulation, interior_midpoints, overlay,
                   prolongate, uniform_refine)
from .multiindex import Index, MultiIndexSet
from .sparse_grid import (CollocationPoint, SparseGridBasis, generated_points)

__all__ = [
    "SpatialIndicator", "ParametricIndicator", "GlobalEstimates",
    "spatial_indicator", "parametric_indicators", "global_spatial_estimate",
    "global_parametric_estimate", "qoi_estimate", "reference_error",
]

LOCAL_SCALINGS = ("energy", "raw")


@dataclass(frozen=True)
class SpatialIndicator:
    """Detail-space estimate for one collocated solve.

    ``local`` maps each interior edge midpoint of the solve's mesh to a
    nonnegative refinement indicator; ``total`` is the energy norm of the
    detail solution.
    """

    point: CollocationPoint
    total: float
    local: dict

    def local_vector(self) -> np.ndarray:
        """Local values in midpoint order (sorted by edge ids)."""
        return np.array([self.local[m] for m in sorted(self.local, key=lambda r: r.edge)])


@dataclass(frozen=True)
class ParametricIndicator:
    """Interpolation-deficit estimate for one reduced-margin index."""

    index: Index
    value: float


@dataclass(frozen=True)
class GlobalEstimates:
    """Combined spatial and parametric estimates at one iteration."""

    mu: float
    tau: float
    iteration: int
    dofs: int

    @property
    def total(self) -> float:
        return self.mu + self.tau


def _overlay_all(meshes) -> Triangulation:
    common = meshes[0]
    for m in meshes[1:]:
        if m is not common:
            common = overlay(common, m)
    return common


def _frozen_data(problem, point: CollocationPoint):
    return problem.coefficient_at(point.coords), problem.rhs_at(point.coords)


def spatial_indicator(mesh: Triangulation, solution: np.ndarray, problem,
                      point: CollocationPoint, local_scaling: str = "energy",
                      rel_tol: float = fem.CG_REL_TOL) -> SpatialIndicator:
    """Hierarchical estimate of the spatial error of one collocated solve.

    The detail space consists of hat functions at the interior midpoints;
    its Galerkin system always uses the plain Laplacian, while the residual
    carries the sample's coefficient and load.
    """
    if local_scaling not in LOCAL_SCALINGS:
        raise ContractViolationError(
            f"local_scaling must be one of {LOCAL_SCALINGS}, got {local_scaling!r}")
    solution = np.asarray(solution, dtype=float)
    if solution.shape != (mesh.num_vertices,):
        raise ContractViolationError(
            f"solution has shape {solution.shape}, expected ({mesh.num_vertices},)")
    fine = uniform_refine(mesh)
    lifted = prolongate(solution, mesh, fine)
    coeff, load_fn = _frozen_data(problem, point)
    resid_matrix = fem.unit_stiffness(fine) if coeff is None \
        else fem.assemble_stiffness(fine, coeff)
    residual = fem.assemble_load(fine, load_fn) - resid_matrix @ lifted
    laplace = fem.unit_stiffness(fine)
    detail = np.zeros(fine.num_vertices, dtype=bool)
    detail[mesh.num_vertices:] = True
    detail &= ~fine.boundary_vertex_mask()
    err = fem.solve_system(laplace, residual, detail, rel_tol)
    total = float(np.sqrt(max(float(err @ residual), 0.0)))
    diag = laplace.diagonal()
    local = {}
    for rec in interior_midpoints(mesh):
        vid = fine.midpoint_vertex(rec.edge)
        value = abs(float(err[vid]))
        if local_scaling == "energy":
            value *= float(np.sqrt(diag[vid]))
        local[rec] = value
    return SpatialIndicator(point=point, total=total, local=local)


def _solution_matrix(basis: SparseGridBasis, mesh: Triangulation,
                     solutions: Mapping) -> np.ndarray:
    rows = []
    for z in basis.points:
        rows.append(_lookup(solutions, z, mesh))
    return np.stack(rows)


def _lookup(solutions: Mapping, z: CollocationPoint,
            mesh: Triangulation) -> np.ndarray:
    try:
        vec = solutions[z]
    except KeyError:
        raise ContractViolationError(
            f"coarse solution missing for collocation point {z.coords}") from None
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (mesh.num_vertices,):
        raise ContractViolationError(
            f"coarse solution for {z.coords} has shape {vec.shape}, "
            f"expected ({mesh.num_vertices},)")
    return vec


def _margin_bases(index_set: MultiIndexSet, basis, enhanced_basis):
    if basis is None:
        basis = SparseGridBasis(index_set)
    margin = index_set.reduced_margin()
    if enhanced_basis is None:
        enhanced_basis = SparseGridBasis(index_set.union(margin))
    return margin, basis, enhanced_basis


def parametric_indicators(index_set: MultiIndexSet, mesh: Triangulation,
                          coarse_solutions: Mapping,
                          basis: SparseGridBasis | None = None,
                          enhanced_basis: SparseGridBasis | None = None,
                          ) -> list[ParametricIndicator]:
    """One interpolation-deficit indicator per reduced-margin index.

    ``coarse_solutions`` must hold solves on ``mesh`` for every current grid
    point and every point the margin would activate.  Deficits are measured
    in the plain energy norm; each is weighted by the L2 norm of the point's
    Lagrange function in the margin-enhanced basis.
    """
    margin, basis, enhanced_basis = _margin_bases(index_set, basis, enhanced_basis)
    stacked = _solution_matrix(basis, mesh, coarse_solutions)
    out = []
    for nu in margin:
        new_pts = generated_points(index_set, nu)
        weights = enhanced_basis.norms(new_pts)
        value = 0.0
        for zp, lag_norm in zip(new_pts, weights):
            interp = stacked.T @ basis.lagrange_weights(zp.coords)
            deficit = _lookup(coarse_solutions, zp, mesh) - interp
            value += fem.energy_norm(mesh, deficit) * float(lag_norm)
        out.append(ParametricIndicator(index=nu, value=float(value)))
    return out


def _sorted_states(states) -> list:
    ordered = sorted(states, key=lambda s: s.point.key)
    if len({s.point.key for s in ordered}) != len(ordered):
        raise ContractViolationError("duplicate collocation points in states")
    return ordered


def _gram_quadratic(gram: np.ndarray, inner: np.ndarray) -> float:
    return float(np.sum(gram * inner))


def global_spatial_estimate(states, enhanced: Mapping,
                            basis: SparseGridBasis) -> float:
    """Sparse-interpolant energy norm of the per-point enhancement gains.

    ``enhanced`` maps each collocation point to ``(fine_mesh, fine_solution)``
    with ``fine_mesh = uniform_refine`` of the state's mesh.  Differences are
    prolongated to the overlay of all fine meshes and combined through the
    Lagrange Gram matrix.
    """
    ordered = _sorted_states(states)
    if {s.point for s in ordered} != set(basis.points):
        raise ContractViolationError(
            "states do not match the basis grid points")
    fines, diffs = [], []
    for st in ordered:
        fine, fine_sol = enhanced[st.point]
        fine_sol = np.asarray(fine_sol, dtype=float)
        if fine_sol.shape != (fine.num_vertices,):
            raise ContractViolationError(
                f"enhanced solution for {st.point.coords} has wrong shape")
        fines.append(fine)
        diffs.append(fine_sol - prolongate(st.solution, st.mesh, fine))
    common = _overlay_all(fines)
    stacked = np.stack([prolongate(d, fm, common)
                        for fm, d in zip(fines, diffs)])
    inner = stacked @ (fem.unit_stiffness(common) @ stacked.T)
    gram = basis.gram(subset=[s.point for s in ordered])
    return float(np.sqrt(max(_gram_quadratic(gram, inner), 0.0)))


def global_parametric_estimate(index_set: MultiIndexSet, mesh: Triangulation,
                               coarse_solutions: Mapping,
                               basis: SparseGridBasis | None = None,
                               enhanced_basis: SparseGridBasis | None = None,
                               ) -> float:
    """Norm of the full margin interpolation deficit.

    Unlike the per-index indicators this couples all newly activated points
    through the Gram matrix of the enhanced basis, so it is not simply the
    sum of the indicator values.
    """
    _, basis, enhanced_basis = _margin_bases(index_set, basis, enhanced_basis)
    current = {z.key for z in basis.points}
    new_pts = [z for z in enhanced_basis.points if z.key not in current]
    if not new_pts:
        return 0.0
    stacked = _solution_matrix(basis, mesh, coarse_solutions)
    deficits = []
    for zp in new_pts:
        interp = stacked.T @ basis.lagrange_weights(zp.coords)
        deficits.append(_lookup(coarse_solutions, zp, mesh) - interp)
    deficits = np.stack(deficits)
    inner = deficits @ (fem.unit_stiffness(mesh) @ deficits.T)
    gram = enhanced_basis.gram(subset=new_pts)
    return float(np.sqrt(max(_gram_quadratic(gram, inner), 0.0)))


def qoi_estimate(states, basis: SparseGridBasis, scale: float = 1.0) -> float:
    """Exact parametric mean of the squared L2 norm of the interpolant."""
    ordered = _sorted_states(states)
    if {s.point for s in ordered} != set(basis.points):
        raise ContractViolationError(
            "states do not match the basis grid points")
    common = _overlay_all([s.mesh for s in ordered])
    stacked = np.stack([prolongate(s.solution, s.mesh, common)
                        for s in ordered])
    inner = stacked @ (fem.mass_matrix(common) @ stacked.T)
    gram = basis.gram(subset=[s.point for s in ordered])
    return scale * max(_gram_quadratic(gram, inner), 0.0)


def reference_error(states, index_set: MultiIndexSet, problem,
                    rel_tol: float = fem.CG_REL_TOL) -> float:
    """Bochner energy distance to a richer reference approximation.

    The reference uses the margin-enhanced index set with every sample
    solved on the once-uniformly-refined overlay of the current meshes.
    """
    ordered = _sorted_states(states)
    basis = SparseGridBasis(index_set)
    if {s.point for s in ordered} != set(basis.points):
        raise ContractViolationError(
            "states do not match the index set grid points")
    enhanced_basis = SparseGridBasis(index_set.union(index_set.reduced_margin()))
    ref_mesh = uniform_refine(_overlay_all([s.mesh for s in ordered]))
    lifted = np.stack([prolongate(s.solution, s.mesh, ref_mesh)
                       for s in ordered])
    deficits = []
    for zhat in enhanced_basis.points:
        weights = basis.lagrange_weights(zhat.coords)
        interp = lifted.T @ weights
        coeff, load_fn = _frozen_data(problem, zhat)
        ref_sol = fem.solve(ref_mesh, coeff, load_fn, rel_tol,
                            initial_guess=interp)
        deficits.append(ref_sol - interp)
    deficits = np.stack(deficits)
    inner = deficits @ (fem.unit_stiffness(ref_mesh) @ deficits.T)
    gram = enhanced_basis.gram()
    return float(np.sqrt(max(_gram_quadratic(gram, inner), 0.0)))
