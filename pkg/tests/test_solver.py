import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoci.mdp import Kernel, Lattice, Policy, SystemParams, ValueFunction, pr_table_for
from aoci.process import build_custom, build_equiprobable, build_random_walk
from aoci.solver import (
    SingularEvaluation,
    column_shape,
    policy_evaluation,
    policy_threshold_shape,
    recurrent_states,
    relative_policy_iteration,
    relative_value_iteration,
    structural_condition,
    structural_lower_boundary,
    verify_value_properties,
)
from aoci.threshold import average_cost_closed_form


def caps(p_s, n=60, **kw):
    return SystemParams(p_s=p_s, delta_cap=n, aoi_cap=n, **kw)


def brute_force_gain(params, model, policy):
    """Average cost from the stationary law of the induced chain, solved densely."""
    kernel = Kernel(params, pr_table_for(model, params))
    P = kernel.policy_matrix(policy.actions).toarray()
    n = len(P)
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(pi @ kernel.policy_cost(policy.actions))


# ---- policy evaluation -------------------------------------------------------


def test_evaluate_always_update_with_certain_change():
    p = caps(1.0, 30)
    lat = Lattice.for_params(p)
    V = policy_evaluation(p, np.zeros(30), Policy.constant(lat, 1))
    assert V.theta == pytest.approx(1 + 12, abs=1e-12)
    assert V[(1, 1)] == 0.0


def test_evaluate_always_idle_absorbs_at_cap():
    p = caps(0.8, 40)
    V = policy_evaluation(p, build_equiprobable(2), Policy.constant(Lattice.for_params(p), 0))
    assert V.theta == pytest.approx(40, abs=1e-9)


@pytest.mark.parametrize("W", [2, 6, 8, 11])
def test_evaluate_case1_threshold_against_closed_form(W):
    p = caps(1.0, 200)
    V = policy_evaluation(p, build_equiprobable(2), Policy.threshold(Lattice.for_params(p), W))
    assert V.theta == pytest.approx(average_cost_closed_form(W, 0.5, 12)[0], abs=1e-9)


@pytest.mark.parametrize("model", [build_random_walk(4, 0.5), build_custom([[0.7, 0.3], [0.3, 0.7]])])
def test_evaluate_matches_dense_stationary_law(model):
    p = caps(0.7, 25, C_u=5)
    lat = Lattice.for_params(p)
    rng = np.random.default_rng(0)
    for _ in range(3):
        acts = (rng.random(lat.size) < 0.5).astype(np.int8)
        pol = Policy(acts, lat)
        assert policy_evaluation(p, model, pol).theta == pytest.approx(brute_force_gain(p, model, pol), abs=1e-9)


def test_evaluate_residual_is_tight():
    p = caps(0.8, 60)
    model = build_random_walk(6, 0.5)
    kernel = Kernel(p, model)
    pol = Policy.threshold(kernel.lattice, 9)
    V = policy_evaluation(p, model, pol)
    P = kernel.policy_matrix(pol.actions)
    resid = V.theta + V.values - kernel.policy_cost(pol.actions) - P @ V.values
    assert np.max(np.abs(resid)) < 1e-9


def test_evaluate_multichain_policy_is_singular():
    # p_r = 1, update only in the first AoI column: (cap, 1) and (cap, cap) both absorb
    p = caps(1.0, 6)
    lat = Lattice.for_params(p)
    with pytest.raises(SingularEvaluation):
        policy_evaluation(p, np.ones(6), Policy((lat.aoi == 1).astype(np.int8), lat))


# ---- relative value iteration ------------------------------------------------


def test_rvi_free_certain_updates():
    p = caps(1.0, 20, C_u=0)
    rep = relative_value_iteration(p, np.zeros(20))
    assert rep.converged
    assert rep.theta == pytest.approx(1.0, abs=1e-9)
    assert np.all(rep.policy.actions == 1)


def test_rvi_case1_matches_closed_form():
    p = caps(1.0, 200)
    rep = relative_value_iteration(p, build_equiprobable(2))
    assert rep.theta == pytest.approx(53 / 7, abs=1e-6)
    shape = policy_threshold_shape(rep.policy)
    assert shape.pure and shape.threshold == 6


def test_rvi_prohibitive_cost_never_updates():
    p = caps(0.8, 50, C_u=1e6)
    rep = relative_value_iteration(p, build_equiprobable(2))
    assert rep.theta == pytest.approx(50, abs=1e-6)
    assert not rep.policy.actions.any()


def test_rvi_iteration_cap_warns():
    p = caps(0.8, 30)
    with pytest.warns(RuntimeWarning):
        rep = relative_value_iteration(p, build_equiprobable(2), max_iter=5)
    assert not rep.converged and rep.iterations == 5


def test_rvi_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        relative_value_iteration(caps(0.8, 10), build_equiprobable(2), tol=0)
    with pytest.raises(ValueError):
        relative_value_iteration(caps(0.8, 10), build_equiprobable(2), aperiodicity=0)


def test_rvi_converges_on_periodic_optimal_chain():
    # a random walk with a perfect channel induces a period-2 chain under the optimal policy
    p = caps(1.0, 60, C_u=6, omega=0.5)
    model = build_random_walk(4, 0.2)
    exact = relative_policy_iteration(p, model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plain = relative_value_iteration(p, model, max_iter=5000, aperiodicity=1.0)
    assert not plain.converged
    damped = relative_value_iteration(p, model)
    assert damped.converged
    assert damped.theta == pytest.approx(exact.theta, abs=1e-9)


@pytest.mark.parametrize("tau", [1.0, 0.9, 0.3])
def test_rvi_gain_does_not_depend_on_damping(tau):
    p = caps(0.8, 40)
    model = build_random_walk(4, 0.5)
    rep = relative_value_iteration(p, model, aperiodicity=tau)
    assert rep.converged
    assert rep.theta == pytest.approx(relative_policy_iteration(p, model).theta, abs=1e-9)


# ---- relative policy iteration ----------------------------------------------

FAMILIES = {
    "equiprobable": build_equiprobable(2),
    "random_walk": build_random_walk(4, 0.5),
    "custom": build_custom([[0.7, 0.3], [0.3, 0.7]]),
}


@pytest.mark.parametrize("name", list(FAMILIES))
@pytest.mark.parametrize("p_s", [0.5, 0.9])
def test_rpi_and_rvi_agree(name, p_s):
    model = FAMILIES[name]
    p = caps(p_s, 40)
    rpi = relative_policy_iteration(p, model)
    rvi = relative_value_iteration(p, model)
    assert rpi.converged and rvi.converged
    rec = recurrent_states(p, model, rpi.policy)
    assert np.array_equal(rpi.policy.actions[rec], rvi.policy.actions[rec])
    assert abs(rpi.theta - rvi.theta) < 1e-9
    assert rpi.theta >= 1


@pytest.mark.parametrize("name", list(FAMILIES))
def test_rpi_gain_is_monotone_and_short_circuit_is_sound(name):
    rep = relative_policy_iteration(caps(0.8, 60), FAMILIES[name])
    hist = np.array(rep.theta_history)
    assert np.all(np.diff(hist) <= 1e-9 * hist[:-1])
    assert rep.shadow_mismatches == 0
    assert 0.0 <= rep.short_circuit_rate <= 1.0


def test_rpi_short_circuit_fires_in_case1():
    rep = relative_policy_iteration(caps(1.0, 200), build_equiprobable(2))
    assert rep.short_circuit_rate > 0
    assert rep.theta == pytest.approx(53 / 7, abs=1e-9)


def test_rpi_case1_pure_threshold():
    rep = relative_policy_iteration(caps(0.8, 60), build_equiprobable(2))
    assert policy_threshold_shape(rep.policy).pure


def test_rpi_random_walk_columns_switch_once():
    rep = relative_policy_iteration(caps(0.8, 60), build_random_walk(4, 0.5))
    shape = policy_threshold_shape(rep.policy)
    assert shape.monotone
    assert all(c.switch is not None for c in shape.columns)


@pytest.mark.parametrize("name", list(FAMILIES))
def test_rpi_structure_above_lower_boundary(name):
    model = FAMILIES[name]
    p = caps(0.8, 60)
    rep = relative_policy_iteration(p, model)
    bound = structural_lower_boundary(p, model)
    table = rep.policy.table()
    for d in range(1, p.aoi_cap + 1):
        if rep.held_always[d - 1] and bound[d] is not None:
            assert np.all(table[bound[d] - 1 :, d - 1] == 1)


def test_solve_report_serialises():
    rep = relative_policy_iteration(caps(0.8, 10), build_equiprobable(2))
    d = rep.to_dict()
    assert d["method"] == "rpi" and len(d["policy"]) == 55
    assert d["theta"] == rep.theta


# ---- structural machinery -----------------------------------------------------


def value_with_gap(params, gap):
    lat = Lattice.for_params(params)
    vals = np.zeros(lat.size)
    vals[lat.index((params.delta_cap, 1))] = gap
    return ValueFunction(vals, 0.0, lat)


def test_structural_condition_cases():
    p = caps(0.8, 10)
    V = value_with_gap(p, 100.0)
    assert structural_condition(V, np.full(10, 0.5), 3)
    walk = build_random_walk(4, 0.5).return_probabilities(10)
    assert all(structural_condition(V, walk, d) for d in range(1, 10))
    custom = np.array([0.7, 0.58] + [0.5] * 8)
    assert not structural_condition(V, custom, 1)
    assert structural_condition(value_with_gap(p, 0.0), custom, 1)


def test_lower_boundary_examples():
    p = caps(0.8, 60)
    pr = np.full(60, 0.5)
    assert structural_lower_boundary(p, pr)[2] == 34
    assert all(level is None for level in structural_lower_boundary(p, np.ones(60)).levels)
    free = caps(1.0, 10, C_u=0)
    assert structural_lower_boundary(free, np.zeros(10))[3] == 3


def test_lower_boundary_is_minimal():
    p = caps(0.7, 80, C_u=9)
    pr = build_random_walk(6, 0.3).return_probabilities(80)
    bound = structural_lower_boundary(p, pr)
    for d in range(1, 81):
        coef = p.p_s * (1 - pr[d - 1])
        f = lambda D: coef * D - p.p_s * d - p.weighted_cost  # noqa: E731
        if bound[d] is None:
            assert coef == 0 or f(80) < 0
        else:
            assert f(bound[d]) >= -1e-9
            assert bound[d] == 1 or f(bound[d] - 1) < 0


def test_value_properties_zero_function():
    p = caps(0.8, 8)
    lat = Lattice.for_params(p)
    rep = verify_value_properties(ValueFunction(np.zeros(lat.size), 0.0, lat), np.full(8, 0.5), p)
    assert not rep.l1_violations and not rep.l3_violations
    assert rep.l2_violations[0] == (1, 2, 1)
    assert not rep.passed


@pytest.mark.parametrize("name", list(FAMILIES))
def test_value_properties_on_solved_instances(name):
    model = FAMILIES[name]
    p = caps(0.8, 60)
    rep = relative_policy_iteration(p, model)
    prop = verify_value_properties(rep.V, model, p)
    assert prop.passed, prop.summary()
    # the condition holds for every AoI level unless p_r(1) exceeds later return probabilities
    if name == "custom":
        assert prop.l3_skipped > 0
    else:
        assert prop.l3_skipped == 0
    assert prop.l3_checked > 0


def test_pairwise_aoi_slope_counterexample_is_reported_not_failed():
    # p_r(3) = p_r(5) = 0, yet V(D, 3) - V(D, 5) exceeds 2 for large D
    model = build_random_walk(4, 0.2)
    p = caps(0.5, 60)
    rep = relative_policy_iteration(p, model)
    prop = verify_value_properties(rep.V, model, p, max_witnesses=1000)
    assert prop.passed
    assert (3, 5) in {(w[1], w[2]) for w in prop.pairwise_violations}
    excess = max(rep.V[(D, d1)] - rep.V[(D, d2)] - (d2 - d1) for D, d1, d2 in prop.pairwise_violations)
    assert excess > 0.5
    assert prop.shift_closed_checked > 0 and not prop.shift_closed_violations


def test_gated_aoi_slope_can_fail_at_large_aoci():
    # p_r(1) = p_r(3) = 0 passes the gate for (1, 3), but the shifted pair (2, 4) does not
    model = build_random_walk(6, 0.3)
    excess_at = {}
    for cap in (160, 200):
        p = caps(0.9, cap)
        rep = relative_policy_iteration(p, model)
        prop = verify_value_properties(rep.V, model, p, max_witnesses=10_000)
        assert not prop.passed and not prop.l1_violations and not prop.l2_violations
        assert {(d1, d2) for _, d1, d2 in prop.l3_violations} == {(1, 3)}
        assert min(D for D, _, _ in prop.l3_violations) == 116
        assert not prop.shift_closed_violations
        excess_at[cap] = rep.V[(130, 1)] - rep.V[(130, 3)] - 2
    # away from the cap the excess does not depend on it, so this is not truncation
    assert excess_at[160] > 0.2
    assert excess_at[160] == pytest.approx(excess_at[200], abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(M=st.sampled_from([4, 6, 8]), p_c=st.floats(0.05, 0.95), p_s=st.floats(0.2, 1.0), C_u=st.floats(1.0, 30.0))
def test_shift_closed_aoi_slope_holds(M, p_c, p_s, C_u):
    p = SystemParams(p_s, C_u=C_u, delta_cap=80, aoi_cap=80)
    model = build_random_walk(M, p_c)
    rep = relative_policy_iteration(p, model)
    prop = verify_value_properties(rep.V, model, p)
    assert not prop.shift_closed_violations


def test_value_properties_detect_planted_violation():
    p = caps(1.0, 30)
    rep = relative_policy_iteration(p, build_equiprobable(2))
    vals = rep.V.values.copy()
    lat = rep.V.lattice
    vals[lat.index((10, 3))] -= 5.0
    prop = verify_value_properties(ValueFunction(vals, rep.theta, lat), build_equiprobable(2), p)
    assert any(w[1] == 10 and w[2] == 3 for w in prop.l1_violations)
    assert (10, 1, 3) in prop.l3_violations


def test_column_shape():
    c = column_shape([0, 0, 1, 0, 1])
    assert not c.monotone and c.witness == 4
    c = column_shape([0, 0, 1, 1], start=3)
    assert c.monotone and c.switch == 5
    assert column_shape([0, 0]).switch is None


def test_threshold_shape_degenerate_policies():
    lat = Lattice.for_params(caps(1.0, 6))
    shape = policy_threshold_shape(Policy.constant(lat, 1))
    assert shape.pure and shape.threshold == 1
    assert [c.switch for c in shape.columns] == list(range(1, 7))
    assert policy_threshold_shape(Policy.constant(lat, 0)).pure
    acts = Policy.threshold(lat, 3).actions.copy()
    acts[lat.index((5, 5))] = 0
    shape = policy_threshold_shape(Policy(acts, lat))
    assert not shape.pure and shape.monotone
    assert shape.columns[4].switch == 6


def test_recurrent_states_of_threshold_policy():
    p = caps(1.0, 30)
    rec = recurrent_states(p, build_equiprobable(2), Policy.threshold(Lattice.for_params(p), 4))
    lat = Lattice.for_params(p)
    assert rec[lat.reference]
    assert not rec[lat.index((3, 2))]  # AoI never lags behind AoCI below the threshold
    assert rec[lat.index((6, 1))]
