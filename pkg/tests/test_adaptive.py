"""Marking rules, per-point mesh initialization, and the adaptive loops."""

from fractions import Fraction

import numpy as np
import pytest

from scfem import adaptive, fem, problems
from scfem.adaptive import (AdaptiveConfig, AdaptiveTrace, TraceRecord,
                            init_mesh_for_point, mark)
from scfem.errors import (CannotEnrichError, ConfigError,
                          ContractViolationError, MeshInitFailureError)
from scfem.estimators import ParametricIndicator, SpatialIndicator
from scfem.mesh import EdgeMidpoint, initial_mesh
from scfem.multiindex import MultiIndexSet, is_monotone
from scfem.sparse_grid import CollocationPoint

make_case1 = problems.test_case_1
make_case3 = problems.test_case_3

LEFT = CollocationPoint.from_key((Fraction(1),))
CENTER = CollocationPoint.from_key((Fraction(1, 2),))
RIGHT = CollocationPoint.from_key((Fraction(0),))


def affine_problem():
    return problems.custom_problem(
        dim=1, coefficient_expr="2 + y1*sin(pi*x1)*sin(pi*x2)",
        rhs_expr="1 + x1", resolution=4)


def rec(i, j, x=0.0):
    return EdgeMidpoint(edge=(i, j), midpoint=(x, 0.0), triangles=(0, 1))


def indicator(point, locals_):
    total = float(np.sqrt(sum(v * v for v in locals_.values())))
    return SpatialIndicator(point=point, total=total, local=dict(locals_))


# ------------------------------------------------------------------ config

def test_config_defaults():
    cfg = AdaptiveConfig()
    assert cfg.mode == "multilevel"
    assert cfg.init_theta == cfg.theta_x
    assert AdaptiveConfig(theta_init=0.55).init_theta == 0.55


@pytest.mark.parametrize("kwargs", [
    {"tolerance": 0.0},
    {"theta_x": 0.0},
    {"theta_x": 1.5},
    {"theta_c": -0.1},
    {"theta_init": 0.0},
    {"vartheta": 0.0},
    {"estimate_period": 0},
    {"mode": "hierarchic"},
    {"max_iterations": 0},
    {"init_cap": 0},
    {"local_scaling": "linfty"},
    {"max_total_dofs": 0},
    {"solver_rel_tol": 0.0},
    {"resolution": 0},
])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        AdaptiveConfig(**kwargs)


# ----------------------------------------------------------------- marking

def test_mark_spatial_bulk_prefix():
    recs = [rec(0, 1), rec(1, 2), rec(2, 3), rec(3, 4)]
    ind = indicator(CENTER, dict(zip(recs, [4.0, 3.0, 2.0, 1.0])))
    res = mark([ind], [1.0], [], AdaptiveConfig(theta_x=0.3))
    assert res.refine_type == "spatial"
    assert res.parametric == ()
    # 4 alone reaches 30 percent of the mass 10
    assert res.spatial == {CENTER.key: (recs[0],)}

    res_all = mark([ind], [1.0], [], AdaptiveConfig(theta_x=1.0))
    assert res_all.spatial == {CENTER.key: tuple(recs)}


def test_mark_spatial_cumulative_across_points():
    a, b, c, d = rec(0, 1), rec(1, 2), rec(2, 3), rec(3, 4)
    ind1 = indicator(CENTER, {a: 4.0, b: 1.0})
    ind2 = indicator(LEFT, {c: 3.0, d: 2.0})
    res = mark([ind1, ind2], [1.0, 1.0], [], AdaptiveConfig(theta_x=0.5))
    # prefix 4 + 3 of the pooled mass 10 first reaches 5
    assert res.spatial == {CENTER.key: (a,), LEFT.key: (c,)}


def test_mark_weights_rescale_local_values():
    a, b = rec(0, 1), rec(1, 2)
    c, d = rec(2, 3), rec(3, 4)
    ind1 = indicator(CENTER, {a: 4.0, b: 1.0})
    ind2 = indicator(LEFT, {c: 3.0, d: 2.0})
    res = mark([ind1, ind2], [1.0, 2.0], [], AdaptiveConfig(theta_x=0.3))
    # weighted pool is 4,1 and 6,4 so the single largest entry moves to LEFT
    assert res.spatial == {LEFT.key: (c,)}
    assert res.mu_bar == pytest.approx(ind1.total + 2.0 * ind2.total)


def test_mark_branch_selection_against_scaled_parametric_total():
    ind = indicator(CENTER, {rec(0, 1): 10.0})
    param = [ParametricIndicator((2,), 5.0)]
    assert mark([ind], [1.0], param,
                AdaptiveConfig()).refine_type == "spatial"
    res = mark([ind], [1.0], param, AdaptiveConfig(vartheta=3.0))
    assert res.refine_type == "parametric"
    assert res.parametric == ((2,),)
    # exact tie goes to the spatial branch
    tie = [ParametricIndicator((2,), 10.0)]
    assert mark([ind], [1.0], tie, AdaptiveConfig()).refine_type == "spatial"


def test_mark_parametric_minimal_cardinality():
    param = [ParametricIndicator((1, 2), 5.0),
             ParametricIndicator((2, 1), 4.0),
             ParametricIndicator((3, 1), 1.0)]
    res = mark([], [], param, AdaptiveConfig(theta_c=0.3))
    assert res.refine_type == "parametric"
    assert res.parametric == ((1, 2),)
    res9 = mark([], [], param, AdaptiveConfig(theta_c=0.9))
    assert res9.parametric == ((1, 2), (2, 1))


def test_mark_parametric_ties_resolve_lexicographically():
    param = [ParametricIndicator((2, 1), 2.0),
             ParametricIndicator((1, 2), 2.0)]
    res = mark([], [], param, AdaptiveConfig(theta_c=0.4))
    assert res.parametric == ((1, 2),)


def test_mark_spatial_ties_resolve_on_point_then_midpoint():
    a, b = rec(0, 1, x=0.25), rec(1, 2, x=0.75)
    ind1 = indicator(CENTER, {b: 2.0, a: 2.0})
    ind2 = indicator(LEFT, {rec(2, 3): 2.0})
    res = mark([ind1, ind2], [1.0, 1.0], [], AdaptiveConfig(theta_x=0.2))
    # CENTER's key 1/2 sorts before LEFT's key 1, then a's midpoint wins
    assert res.spatial == {CENTER.key: (a,)}
    swapped = mark([ind2, ind1], [1.0, 1.0], [], AdaptiveConfig(theta_x=0.2))
    assert swapped.spatial == res.spatial


def test_mark_zero_indicators_mark_nothing():
    ind = indicator(CENTER, {rec(0, 1): 0.0})
    res = mark([ind], [1.0], [], AdaptiveConfig())
    assert res.refine_type == "spatial"
    assert res.spatial == {}


def test_mark_full_fraction_selects_everything():
    vals = [1.0, 1.0, 1.0]
    items = [(v, (i,), i) for i, v in enumerate(vals)]
    assert len(adaptive._bulk_prefix(items, 1.0)) == 3


def test_mark_requires_weight_per_indicator():
    ind = indicator(CENTER, {rec(0, 1): 1.0})
    with pytest.raises(ContractViolationError):
        mark([ind], [], [], AdaptiveConfig())


def test_empty_margin_cannot_enrich():
    with pytest.raises(CannotEnrichError):
        adaptive._mark_parametric([], 0.5)


# -------------------------------------------------- per-point mesh setup

def test_init_mesh_generous_tolerance_keeps_coarse_mesh():
    prob = affine_problem()
    coarse = initial_mesh(prob.domain, prob.default_resolution)
    state = init_mesh_for_point(prob, CENTER, 1.0, 1e9, coarse,
                                AdaptiveConfig())
    assert state.mesh is coarse
    assert state.solution is not None
    assert state.indicator is not None


def test_init_mesh_zero_solution_stops_at_coarse_mesh():
    prob = problems.custom_problem(dim=1, kind="rhs", rhs_expr="0",
                                   resolution=4)
    coarse = initial_mesh(prob.domain, prob.default_resolution)
    state = init_mesh_for_point(prob, CENTER, 1.0, 0.0, coarse,
                                AdaptiveConfig())
    assert state.mesh is coarse
    assert state.indicator.total == 0.0


def test_init_mesh_cap_exhaustion_reports_history():
    prob = affine_problem()
    coarse = initial_mesh(prob.domain, prob.default_resolution)
    with pytest.raises(MeshInitFailureError) as err:
        init_mesh_for_point(prob, CENTER, 1.0, 1e-12, coarse,
                            AdaptiveConfig(init_cap=3))
    history = err.value.trace
    assert len(history) == 3
    sizes = [n for n, _ in history]
    assert sizes == sorted(sizes) and sizes[0] < sizes[-1]


def test_init_mesh_concentrates_vertices_near_peak():
    prob = make_case3()
    coarse = initial_mesh(prob.domain, prob.default_resolution)
    point = CollocationPoint.from_key((Fraction(1, 2), Fraction(1, 2)))
    sol = fem.solve(coarse, prob.coefficient_at(point.coords),
                    prob.rhs_at(point.coords))
    from scfem.estimators import spatial_indicator
    base = spatial_indicator(coarse, sol, prob, point)
    state = init_mesh_for_point(prob, point, 1.0, 0.3 * base.total, coarse,
                                AdaptiveConfig())
    assert state.mesh.num_vertices > coarse.num_vertices
    fresh = state.mesh.vertices[coarse.num_vertices:]
    dist = np.hypot(fresh[:, 0], fresh[:, 1])
    # peak width is about 0.6 while the domain radius is 4; uniformly
    # placed vertices would average about 3.1 from the origin
    assert dist.mean() < 2.0


# --------------------------------------------------------------- the loop

def test_multilevel_run_converges_with_invariants():
    prob = affine_problem()
    cfg = AdaptiveConfig(tolerance=1e-2, max_iterations=16)
    res = adaptive.run_multilevel(prob, cfg)
    assert res.converged and res.stop_reason == "tolerance"
    last = res.trace.records[-1]
    assert last.mu + last.tau < cfg.tolerance
    assert res.estimates.total == last.mu + last.tau

    dofs = res.trace.column("total_dofs")
    assert all(a < b for a, b in zip(dofs, dofs[1:]))
    previous = None
    for record in res.trace:
        assert record.refine_type == (
            "spatial" if record.mu_bar >= cfg.vartheta * record.tau_bar
            else "parametric")
        assert is_monotone(record.index_set)
        assert len(record.mesh_dofs) == record.n_points
        assert record.mu_bar >= 0.0 and record.tau_bar >= 0.0
        assert record.mu is not None and record.tau is not None
        if previous is not None:
            assert set(previous.index_set) <= set(record.index_set)
        previous = record

    # the run passes through at least one enrichment step
    par = [r.iteration for r in res.trace if r.refine_type == "parametric"]
    assert par and par[0] < res.trace.records[-1].iteration
    counts = res.coarse_solve_counts.values()
    assert counts and max(counts) == 1
    keys = [st.point.key for st in res.states]
    assert keys == sorted(keys)
    assert res.qoi is None


def test_multilevel_estimates_follow_period():
    prob = affine_problem()
    cfg = AdaptiveConfig(tolerance=1e-12, max_iterations=7,
                         estimate_period=3)
    res = adaptive.run_multilevel(prob, cfg)
    assert res.stop_reason == "max_iterations"
    for record in res.trace:
        if record.iteration % 3 == 0:
            assert record.mu is not None
        else:
            assert record.mu is None and record.tau is None
    assert res.estimates.iteration == 6


def test_multilevel_stops_at_dof_cap():
    prob = affine_problem()
    res = adaptive.run_multilevel(
        prob, AdaptiveConfig(tolerance=1e-12, max_iterations=30,
                             max_total_dofs=60))
    assert res.stop_reason == "dof_cap"
    assert not res.converged
    assert res.trace.records[-1].total_dofs >= 60
    assert all(r.total_dofs < 60 for r in res.trace.records[:-1])


def test_parameter_independent_problem_never_enriches():
    prob = problems.custom_problem(dim=1, coefficient_expr="2 + x1*x2",
                                   rhs_expr="1", resolution=4)
    res = adaptive.run_multilevel(
        prob, AdaptiveConfig(tolerance=1e-12, max_iterations=4))
    for record in res.trace:
        assert record.refine_type == "spatial"
        assert record.tau_bar == 0.0
        assert record.index_set == ((1,),)
        assert record.n_points == 1
    assert len(res.index_set) == 1


def test_multilevel_reruns_are_identical():
    prob = make_case1(dim=2)
    cfg = AdaptiveConfig(tolerance=1e-12, max_iterations=5)
    first = adaptive.run_multilevel(prob, cfg)
    second = adaptive.run_multilevel(prob, cfg)
    assert first.trace.equivalent(second.trace, tol=0.0)
    assert first.index_set.to_json() == second.index_set.to_json()


def test_single_level_shares_one_mesh():
    prob = affine_problem()
    cfg = AdaptiveConfig(tolerance=1e-2, max_iterations=16,
                         mode="single-level")
    res = adaptive.run_single_level(prob, cfg)
    assert res.converged and res.stop_reason == "tolerance"
    shared = res.states[0].mesh
    assert all(st.mesh is shared for st in res.states)
    for record in res.trace:
        assert len(set(record.mesh_dofs)) == 1
        assert record.total_dofs == record.n_points * record.mesh_dofs[0]
    par = [r for r in res.trace if r.refine_type == "parametric"]
    assert par


def test_run_dispatches_on_mode():
    prob = affine_problem()
    res = adaptive.run(prob, AdaptiveConfig(tolerance=1e-12,
                                            max_iterations=2,
                                            mode="single-level"))
    assert len(set(res.trace.records[-1].mesh_dofs)) == 1
    res_ml = adaptive.run(prob, AdaptiveConfig(tolerance=1e-12,
                                               max_iterations=2))
    assert res_ml.config.mode == "multilevel"


# ------------------------------------------------------------------ trace

def test_trace_csv_round_trip():
    prob = affine_problem()
    res = adaptive.run_multilevel(
        prob, AdaptiveConfig(tolerance=1e-12, max_iterations=9,
                             estimate_period=4))
    text = res.trace.to_csv()
    back = AdaptiveTrace.from_csv(text)
    assert back.records == res.trace.records


def test_trace_rejects_malformed_input():
    with pytest.raises(ContractViolationError):
        AdaptiveTrace.from_csv("nope\n1\n")
    header = ",".join(adaptive.TRACE_COLUMNS)
    with pytest.raises(ContractViolationError):
        AdaptiveTrace.from_csv(header + "\n1,spatial\n")


def test_trace_append_requires_increasing_iterations():
    record = TraceRecord(iteration=0, refine_type="spatial", n_points=1,
                         total_dofs=5, mesh_dofs=(5,), index_set=((1,),),
                         mu_bar=1.0, tau_bar=0.0, mu=None, tau=None,
                         qoi=None, wall_time=0.0)
    trace = AdaptiveTrace([record])
    with pytest.raises(ContractViolationError):
        trace.append(record)


def test_trace_equivalence_ignores_wall_time_only():
    record = TraceRecord(iteration=0, refine_type="spatial", n_points=1,
                         total_dofs=5, mesh_dofs=(5,), index_set=((1,),),
                         mu_bar=1.0, tau_bar=0.0, mu=0.5, tau=0.1,
                         qoi=None, wall_time=0.25)
    other = TraceRecord(iteration=0, refine_type="spatial", n_points=1,
                        total_dofs=5, mesh_dofs=(5,), index_set=((1,),),
                        mu_bar=1.0, tau_bar=0.0, mu=0.5, tau=0.1,
                        qoi=None, wall_time=99.0)
    assert AdaptiveTrace([record]).equivalent(AdaptiveTrace([other]))
    bumped = TraceRecord(iteration=0, refine_type="spatial", n_points=1,
                         total_dofs=5, mesh_dofs=(5,), index_set=((1,),),
                         mu_bar=1.0, tau_bar=0.0, mu=0.5 + 1e-6, tau=0.1,
                         qoi=None, wall_time=0.25)
    assert not AdaptiveTrace([record]).equivalent(AdaptiveTrace([bumped]))
