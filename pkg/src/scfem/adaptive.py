"""Adaptive refinement drivers.

Both drivers alternate collocated solves, hierarchical indicator assembly,
and one refinement per iteration.  Quantity sums decide the refinement
type: when the weighted spatial indicator total dominates the parametric
total, a cumulative bulk criterion over all (point, midpoint) pairs marks
mesh edges; otherwise a minimal-cardinality bulk criterion over the reduced
margin enriches the index set.

The multilevel driver keeps one mesh per collocation point and equips each
newly activated point with its own adaptively initialized mesh, grown from
the coarse mesh until the point's weighted indicator drops below the mean
weighted indicator of the existing points.  The single-level driver shares
one mesh across all points.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import estimators, fem
from .errors import (CannotEnrichError, ConfigError, ContractViolationError,
                     MeshInitFailureError)
from .estimators import (GlobalEstimates, ParametricIndicator,
                         SpatialIndicator, global_parametric_estimate,
                         global_spatial_estimate, parametric_indicators,
                         qoi_estimate, spatial_indicator)
from .mesh import Triangulation, initial_mesh, prolongate, uniform_refine
from .multiindex import MultiIndexSet
from .sparse_grid import CollocationPoint, SparseGridBasis, grid_points

__all__ = [
    "MODES", "TRACE_COLUMNS", "AdaptiveConfig", "CollocationState",
    "TraceRecord", "AdaptiveTrace", "MarkResult", "AdaptiveResult", "mark",
    "init_mesh_for_point", "run", "run_multilevel", "run_single_level",
    "trace_row",
]

MODES = ("multilevel", "single-level")


@dataclass
class AdaptiveConfig:
    """Knobs of the adaptive loop; defaults mirror the benchmark runs."""

    tolerance: float = 1e-2
    theta_x: float = 0.3
    theta_c: float = 0.3
    vartheta: float = 1.0
    theta_init: float | None = None
    estimate_period: int = 1
    mode: str = "multilevel"
    max_iterations: int = 100
    init_cap: int = 40
    local_scaling: str = "energy"
    max_total_dofs: int | None = None
    solver_rel_tol: float = fem.CG_REL_TOL
    resolution: int | None = None

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise ConfigError("tolerance must be positive")
        for name in ("theta_x", "theta_c"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.theta_init is not None and not 0.0 < self.theta_init <= 1.0:
            raise ConfigError(f"theta_init must lie in (0, 1], got {self.theta_init}")
        if not self.vartheta > 0.0:
            raise ConfigError("vartheta must be positive")
        if self.estimate_period < 1:
            raise ConfigError("estimate_period must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.init_cap < 1:
            raise ConfigError("init_cap must be at least 1")
        if self.local_scaling not in estimators.LOCAL_SCALINGS:
            raise ConfigError(
                f"local_scaling must be one of {estimators.LOCAL_SCALINGS}")
        if self.max_total_dofs is not None and self.max_total_dofs < 1:
            raise ConfigError("max_total_dofs must be positive when set")
        if not self.solver_rel_tol > 0.0:
            raise ConfigError("solver_rel_tol must be positive")
        if self.resolution is not None and self.resolution < 1:
            raise ConfigError("resolution must be positive when set")

    @property
    def init_theta(self) -> float:
        """Bulk parameter of per-point mesh initialization."""
        return self.theta_x if self.theta_init is None else self.theta_init


@dataclass
class CollocationState:
    """Everything the loop tracks for one active collocation point."""

    point: CollocationPoint
    mesh: Triangulation
    solution: np.ndarray | None = None
    indicator: SpatialIndicator | None = None
    enhanced: tuple | None = None
    warm: np.ndarray | None = None


# ------------------------------------------------------------------ trace

TRACE_COLUMNS = ("iteration", "refine_type", "n_points", "total_dofs",
                 "mesh_dofs", "index_set", "mu_bar", "tau_bar", "mu", "tau",
                 "qoi", "wall_time")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    refine_type: str
    n_points: int
    total_dofs: int
    mesh_dofs: tuple
    index_set: tuple
    mu_bar: float
    tau_bar: float
    mu: float | None
    tau: float | None
    qoi: float | None
    wall_time: float


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return json.dumps([list(v) if isinstance(v, tuple) else v
                           for v in value])
    return str(value)


def trace_row(record: TraceRecord, include_wall_time: bool = True) -> list:
    names = TRACE_COLUMNS if include_wall_time else TRACE_COLUMNS[:-1]
    return [_cell(getattr(record, name)) for name in names]


class AdaptiveTrace:
    """Per-iteration log of an adaptive run, round-trippable through CSV."""

    def __init__(self, records: Sequence[TraceRecord] = ()):
        self.records: list[TraceRecord] = list(records)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ContractViolationError("trace iterations must increase")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, include_wall_time: bool = True) -> str:
        """Serialize the trace; timing can be dropped for byte-stable files."""
        names = TRACE_COLUMNS if include_wall_time else TRACE_COLUMNS[:-1]
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(names)
        for r in self.records:
            writer.writerow(trace_row(r, include_wall_time))
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AdaptiveTrace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) not in (TRACE_COLUMNS,
                                              TRACE_COLUMNS[:-1]):
            raise ContractViolationError("unrecognized trace header")
        names = tuple(rows[0])
        records = []
        for row in rows[1:]:
            if len(row) != len(names):
                raise ContractViolationError("malformed trace row")
            data = dict(zip(names, row))
            records.append(TraceRecord(
                iteration=int(data["iteration"]),
                refine_type=data["refine_type"],
                n_points=int(data["n_points"]),
                total_dofs=int(data["total_dofs"]),
                mesh_dofs=tuple(json.loads(data["mesh_dofs"])),
                index_set=tuple(tuple(v) for v in json.loads(data["index_set"])),
                mu_bar=float(data["mu_bar"]),
                tau_bar=float(data["tau_bar"]),
                mu=float(data["mu"]) if data["mu"] else None,
                tau=float(data["tau"]) if data["tau"] else None,
                qoi=float(data["qoi"]) if data["qoi"] else None,
                wall_time=float(data.get("wall_time", 0.0)),
            ))
        return cls(records)

    def equivalent(self, other: "AdaptiveTrace", tol: float = 1e-12,
                   ignore: Sequence[str] = ("wall_time",)) -> bool:
        """Field-wise comparison; timing fields are skipped by default."""
        if len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            for f in fields(TraceRecord):
                if f.name in ignore:
                    continue
                va, vb = getattr(a, f.name), getattr(b, f.name)
                if isinstance(va, float) and isinstance(vb, float):
                    if abs(va - vb) > tol:
                        return False
                elif va != vb:
                    return False
        return True


# ---------------------------------------------------------------- marking

@dataclass(frozen=True)
class MarkResult:
    refine_type: str
    mu_bar: float
    tau_bar: float
    spatial: dict
    parametric: tuple


def _bulk_prefix(items: list, fraction: float) -> list:
    """Shortest prefix of the sorted items reaching the bulk fraction.

    ``items`` are (value, tiebreak, payload) with nonnegative values; ties
    resolve on the tiebreak so the selection is reproducible.
    """
    ordered = sorted(items, key=lambda it: (-it[0], it[1]))
    total = 0.0
    for value, _, _ in ordered:
        total += value
    if total <= 0.0:
        return []
    target = fraction * total
    acc = 0.0
    out = []
    for item in ordered:
        out.append(item)
        acc += item[0]
        if acc >= target:
            break
    return out


def mark(indicators: Sequence[SpatialIndicator], weights: Sequence[float],
         param: Sequence[ParametricIndicator],
         config: AdaptiveConfig) -> MarkResult:
    """Choose the refinement type and the marked entities.

    Spatial branch: cumulative bulk criterion over all (point, midpoint)
    pairs, weighted locals to the first power.  Parametric branch:
    minimal-cardinality bulk criterion over the margin indicators.
    """
    if len(indicators) != len(weights):
        raise ContractViolationError("one weight per spatial indicator required")
    mu_bar = float(sum(ind.total * w for ind, w in zip(indicators, weights)))
    tau_bar = float(sum(p.value for p in param))
    if mu_bar >= config.vartheta * tau_bar:
        items = []
        for ind, w in zip(indicators, weights):
            for rec, value in ind.local.items():
                items.append((value * w, (ind.point.key, rec.midpoint),
                              (ind.point.key, rec)))
        chosen = _bulk_prefix(items, config.theta_x)
        marked: dict = {}
        for _, _, (key, rec) in chosen:
            marked.setdefault(key, []).append(rec)
        spatial = {key: tuple(sorted(recs, key=lambda r: r.edge))
                   for key, recs in marked.items()}
        return MarkResult("spatial", mu_bar, tau_bar, spatial, ())
    return MarkResult("parametric", mu_bar, tau_bar, {},
                      _mark_parametric(param, config.theta_c))


def _mark_parametric(param: Sequence[ParametricIndicator],
                     theta_c: float) -> tuple:
    if not param:
        raise CannotEnrichError("no margin indices available for enrichment")
    items = [(p.value, (p.index,), p.index) for p in param]
    chosen = _bulk_prefix(items, theta_c)
    return tuple(sorted(it[2] for it in chosen))


# --------------------------------------------------- per-point mesh setup

def init_mesh_for_point(problem, point: CollocationPoint, weight: float,
                        tol: float, coarse_mesh: Triangulation,
                        config: AdaptiveConfig,
                        warm: np.ndarray | None = None) -> CollocationState:
    """Grow a starting mesh for a newly activated collocation point.

    Repeats solve, estimate, bulk-mark on squared locals, refine, beginning
    from the coarse mesh, until the weighted indicator total drops below
    the handed-down tolerance.  A zero indicator stops immediately (nothing
    left to refine), covering the degenerate all-exact case.
    """
    mesh = coarse_mesh
    history = []
    for _ in range(config.init_cap):
        solution = fem.solve(mesh, problem.coefficient_at(point.coords),
                             problem.rhs_at(point.coords),
                             config.solver_rel_tol, warm)
        indicator = spatial_indicator(mesh, solution, problem, point,
                                      config.local_scaling,
                                      config.solver_rel_tol)
        history.append((mesh.num_vertices, indicator.total))
        if indicator.total == 0.0 or indicator.total * weight < tol:
            return CollocationState(point=point, mesh=mesh, solution=solution,
                                    indicator=indicator)
        items = [(value * value, (rec.midpoint,), rec)
                 for rec, value in indicator.local.items()]
        chosen = _bulk_prefix(items, config.init_theta)
        refined = mesh.refine(sorted((it[2] for it in chosen),
                                     key=lambda r: r.edge))
        warm = prolongate(solution, mesh, refined)
        mesh = refined
    raise MeshInitFailureError(
        f"mesh initialization for point {point.coords} did not reach "
        f"tolerance {tol:.3e} within {config.init_cap} iterations", history)


# ---------------------------------------------------------------- results

@dataclass
class AdaptiveResult:
    trace: AdaptiveTrace
    states: list[CollocationState]
    index_set: MultiIndexSet
    config: AdaptiveConfig
    problem: object
    converged: bool
    stop_reason: str
    estimates: GlobalEstimates | None
    coarse_solve_counts: dict = field(default_factory=dict)

    @property
    def qoi(self) -> float | None:
        for record in reversed(self.trace.records):
            if record.qoi is not None:
                return record.qoi
        return None


class _CoarseCache:
    """Solutions on a fixed mesh, each point solved at most once."""

    def __init__(self, problem, mesh: Triangulation, rel_tol: float):
        self.problem = problem
        self.mesh = mesh
        self.rel_tol = rel_tol
        self.values: dict = {}
        self.counts: dict = {}

    def seed(self, point: CollocationPoint, solution: np.ndarray) -> None:
        if point.key not in self.values:
            self.values[point.key] = solution

    def get(self, point: CollocationPoint) -> np.ndarray:
        if point.key not in self.values:
            self.values[point.key] = fem.solve(
                self.mesh, self.problem.coefficient_at(point.coords),
                self.problem.rhs_at(point.coords), self.rel_tol)
            self.counts[point.key] = self.counts.get(point.key, 0) + 1
        return self.values[point.key]

    def mapping(self, points) -> dict:
        return {z: self.get(z) for z in points}


def _solve_states(problem, states: list, rel_tol: float) -> None:
    for st in states:
        if st.solution is None:
            st.solution = fem.solve(
                st.mesh, problem.coefficient_at(st.point.coords),
                problem.rhs_at(st.point.coords), rel_tol, st.warm)
            st.warm = None


def _spatial_indicators(problem, states: list, config: AdaptiveConfig) -> None:
    for st in states:
        if st.indicator is None:
            st.indicator = spatial_indicator(
                st.mesh, st.solution, problem, st.point,
                config.local_scaling, config.solver_rel_tol)


def _enhanced_solutions(problem, states: list, rel_tol: float) -> dict:
    out = {}
    for st in states:
        if st.enhanced is None:
            fine = uniform_refine(st.mesh)
            guess = prolongate(st.solution, st.mesh, fine)
            st.enhanced = (fine, fem.solve(
                fine, problem.coefficient_at(st.point.coords),
                problem.rhs_at(st.point.coords), rel_tol, guess))
        out[st.point] = st.enhanced
    return out


def run(problem, config: AdaptiveConfig,
        observer: Callable[[TraceRecord], None] | None = None,
        state_observer: Callable | None = None) -> AdaptiveResult:
    """Dispatch on the configured mode."""
    if config.mode == "multilevel":
        return run_multilevel(problem, config, observer, state_observer)
    return run_single_level(problem, config, observer, state_observer)


def run_multilevel(problem, config: AdaptiveConfig,
                   observer: Callable[[TraceRecord], None] | None = None,
                   state_observer: Callable | None = None,
                   ) -> AdaptiveResult:
    """Adaptive loop with one independently refined mesh per point."""
    coarse = initial_mesh(problem.domain,
                          config.resolution or problem.default_resolution)
    index_set = MultiIndexSet.root(problem.dim)
    coarse_cache = _CoarseCache(problem, coarse, config.solver_rel_tol)
    states: dict = {z.key: CollocationState(point=z, mesh=coarse)
                    for z in grid_points(index_set)}
    trace = AdaptiveTrace()
    converged = False
    stop_reason = "max_iterations"
    last_estimates = None

    for iteration in range(config.max_iterations):
        started = time.perf_counter()
        ordered = [states[k] for k in sorted(states)]
        basis = SparseGridBasis(index_set)
        margin = index_set.reduced_margin()
        hat_basis = SparseGridBasis(index_set.union(margin))

        _solve_states(problem, ordered, config.solver_rel_tol)
        for st in ordered:
            if st.mesh is coarse:
                coarse_cache.seed(st.point, st.solution)
        coarse_map = coarse_cache.mapping(hat_basis.points)

        _spatial_indicators(problem, ordered, config)
        weights = basis.norms()
        param = parametric_indicators(index_set, coarse, coarse_map,
                                      basis, hat_basis)
        marks = mark([st.indicator for st in ordered], weights, param, config)

        total_dofs = int(sum(st.mesh.num_vertices for st in ordered))
        mu = tau = qoi = None
        if iteration % config.estimate_period == 0:
            enhanced = _enhanced_solutions(problem, ordered,
                                           config.solver_rel_tol)
            mu = global_spatial_estimate(ordered, enhanced, basis)
            tau = global_parametric_estimate(index_set, coarse, coarse_map,
                                             basis, hat_basis)
            if problem.qoi_scale is not None:
                qoi = qoi_estimate(ordered, basis, problem.qoi_scale)
            last_estimates = GlobalEstimates(mu=mu, tau=tau,
                                             iteration=iteration,
                                             dofs=total_dofs)

        record = TraceRecord(
            iteration=iteration, refine_type=marks.refine_type,
            n_points=len(ordered), total_dofs=total_dofs,
            mesh_dofs=tuple(st.mesh.num_vertices for st in ordered),
            index_set=tuple(index_set), mu_bar=marks.mu_bar,
            tau_bar=marks.tau_bar, mu=mu, tau=tau, qoi=qoi,
            wall_time=time.perf_counter() - started)
        trace.append(record)
        if observer is not None:
            observer(record)
        if state_observer is not None:
            # states are still in the configuration the record describes
            state_observer(record, ordered, index_set)

        if mu is not None and mu + tau < config.tolerance:
            converged = True
            stop_reason = "tolerance"
            break
        if config.max_total_dofs is not None \
                and total_dofs >= config.max_total_dofs:
            stop_reason = "dof_cap"
            break

        if marks.refine_type == "spatial":
            for key, recs in marks.spatial.items():
                st = states[key]
                refined = st.mesh.refine(recs)
                st.warm = prolongate(st.solution, st.mesh, refined)
                st.mesh = refined
                st.solution = None
                st.indicator = None
                st.enhanced = None
        else:
            enriched = index_set.union(marks.parametric)
            new_basis = SparseGridBasis(enriched)
            survivors = [states[k] for k in sorted(states)]
            new_weights = new_basis.norms([st.point for st in survivors])
            tol = sum(st.indicator.total * w
                      for st, w in zip(survivors, new_weights)) / len(survivors)
            fresh = [z for z in new_basis.points if z.key not in states]
            for zp in fresh:
                w = float(new_basis.norms([zp])[0])
                states[zp.key] = init_mesh_for_point(
                    problem, zp, w, tol, coarse, config,
                    coarse_cache.values.get(zp.key))
            index_set = enriched

    result_states = [states[k] for k in sorted(states)]
    return AdaptiveResult(trace=trace, states=result_states,
                          index_set=index_set, config=config, problem=problem,
                          converged=converged, stop_reason=stop_reason,
                          estimates=last_estimates,
                          coarse_solve_counts=dict(coarse_cache.counts))


def run_single_level(problem, config: AdaptiveConfig,
                     observer: Callable[[TraceRecord], None] | None = None,
                     state_observer: Callable | None = None,
                     ) -> AdaptiveResult:
    """Adaptive loop with one mesh shared by every collocation point."""
    mesh = initial_mesh(problem.domain,
                        config.resolution or problem.default_resolution)
    index_set = MultiIndexSet.root(problem.dim)
    states: dict = {z.key: CollocationState(point=z, mesh=mesh)
                    for z in grid_points(index_set)}
    margin_cache: dict = {}
    solve_counts: dict = {}
    trace = AdaptiveTrace()
    converged = False
    stop_reason = "max_iterations"
    last_estimates = None

    def margin_solution(z: CollocationPoint) -> np.ndarray:
        cached = margin_cache.get(z.key)
        if cached is not None and cached[0] is mesh:
            return cached[1]
        guess = None
        if cached is not None:
            guess = prolongate(cached[1], cached[0], mesh)
        sol = fem.solve(mesh, problem.coefficient_at(z.coords),
                        problem.rhs_at(z.coords), config.solver_rel_tol, guess)
        solve_counts[z.key] = solve_counts.get(z.key, 0) + 1
        margin_cache[z.key] = (mesh, sol)
        return sol

    for iteration in range(config.max_iterations):
        started = time.perf_counter()
        ordered = [states[k] for k in sorted(states)]
        basis = SparseGridBasis(index_set)
        margin = index_set.reduced_margin()
        hat_basis = SparseGridBasis(index_set.union(margin))

        _solve_states(problem, ordered, config.solver_rel_tol)
        coarse_map = {}
        for st in ordered:
            coarse_map[st.point] = st.solution
        for z in hat_basis.points:
            if z not in coarse_map:
                coarse_map[z] = margin_solution(z)

        _spatial_indicators(problem, ordered, config)
        weights = basis.norms()
        param = parametric_indicators(index_set, mesh, coarse_map,
                                      basis, hat_basis)
        marks = mark([st.indicator for st in ordered], weights, param, config)

        total_dofs = int(len(ordered) * mesh.num_vertices)
        mu = tau = qoi = None
        if iteration % config.estimate_period == 0:
            enhanced = _enhanced_solutions(problem, ordered,
                                           config.solver_rel_tol)
            mu = global_spatial_estimate(ordered, enhanced, basis)
            tau = global_parametric_estimate(index_set, mesh, coarse_map,
                                             basis, hat_basis)
            if problem.qoi_scale is not None:
                qoi = qoi_estimate(ordered, basis, problem.qoi_scale)
            last_estimates = GlobalEstimates(mu=mu, tau=tau,
                                             iteration=iteration,
                                             dofs=total_dofs)

        record = TraceRecord(
            iteration=iteration, refine_type=marks.refine_type,
            n_points=len(ordered), total_dofs=total_dofs,
            mesh_dofs=tuple(st.mesh.num_vertices for st in ordered),
            index_set=tuple(index_set), mu_bar=marks.mu_bar,
            tau_bar=marks.tau_bar, mu=mu, tau=tau, qoi=qoi,
            wall_time=time.perf_counter() - started)
        trace.append(record)
        if observer is not None:
            observer(record)
        if state_observer is not None:
            state_observer(record, ordered, index_set)

        if mu is not None and mu + tau < config.tolerance:
            converged = True
            stop_reason = "tolerance"
            break
        if config.max_total_dofs is not None \
                and total_dofs >= config.max_total_dofs:
            stop_reason = "dof_cap"
            break

        if marks.refine_type == "spatial":
            union: dict = {}
            for recs in marks.spatial.values():
                for rec in recs:
                    union[rec.edge] = rec
            refined = mesh.refine([union[e] for e in sorted(union)])
            for st in ordered:
                st.warm = prolongate(st.solution, st.mesh, refined)
                st.mesh = refined
                st.solution = None
                st.indicator = None
                st.enhanced = None
            mesh = refined
        else:
            index_set = index_set.union(marks.parametric)
            for z in grid_points(index_set):
                if z.key not in states:
                    st = CollocationState(point=z, mesh=mesh)
                    cached = margin_cache.get(z.key)
                    if cached is not None and cached[0] is mesh:
                        st.solution = cached[1]
                    states[z.key] = st

    result_states = [states[k] for k in sorted(states)]
    return AdaptiveResult(trace=trace, states=result_states,
                          index_set=index_set, config=config, problem=problem,
                          converged=converged, stop_reason=stop_reason,
                          estimates=last_estimates,
                          coarse_solve_counts=dict(solve_counts))
