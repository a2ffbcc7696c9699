import csv
import io

import numpy as np
import pytest
from scipy import stats

from aoci.mdp import Lattice, MdpState, Policy, SystemParams
from aoci.process import build_custom, build_equiprobable, build_random_walk
from aoci.simulator import (
    SampleAtChange,
    SimConfig,
    SolvedTable,
    Threshold,
    ZeroWait,
    compare_policies,
    decide,
    paired_difference,
    simulate,
    trace,
    write_trace_csv,
)
from aoci.solver import relative_policy_iteration

SHORT = SimConfig(horizon=20_000, replications=8, seed=5, warmup=1_000)


def test_decide_rules():
    assert decide(Threshold(6), MdpState(6, 3)) == 1
    assert decide(Threshold(6), MdpState(5, 3)) == 0
    assert decide(SampleAtChange(), MdpState(9, 9), genie_changed=False) == 0
    assert decide(SampleAtChange(), MdpState(1, 1), genie_changed=True) == 1
    assert all(decide(ZeroWait(), MdpState(d, 1)) == 1 for d in range(1, 20))


def test_decide_solved_table_applies_caps():
    lat = Lattice.for_params(SystemParams(1.0, delta_cap=5, aoi_cap=3))
    spec = SolvedTable(Policy.threshold(lat, 4))
    assert decide(spec, MdpState(3, 2)) == 0
    assert decide(spec, MdpState(40, 30)) == 1


def test_spec_validation():
    with pytest.raises(ValueError):
        Threshold(0)
    with pytest.raises(ValueError):
        SimConfig(horizon=10, warmup=10)
    with pytest.raises(ValueError):
        SimConfig(replications=0)
    with pytest.raises(ValueError):
        compare_policies(SystemParams(1.0), build_equiprobable(2), [ZeroWait()], SHORT)


def test_zero_wait_with_certain_change_is_exact():
    p = SystemParams(1.0, C_u=12, omega=1)
    flip = build_custom([[0, 1], [1, 0]])
    st = simulate(p, flip, ZeroWait(), SHORT)
    assert st.avg_aoci == 1.0
    assert st.avg_update_cost == 12.0
    assert st.ci_half_width == 0.0


def test_zero_wait_two_state_cost():
    st = simulate(SystemParams(1.0), build_equiprobable(2), ZeroWait(), SimConfig(horizon=50_000, replications=10))
    assert abs(st.total_avg_cost - 14.0) < 3 * st.ci_half_width + 1e-9
    assert st.update_rate == 1.0


def test_stats_invariants_and_determinism():
    p = SystemParams(0.7)
    m = build_random_walk(4, 0.2)
    a = simulate(p, m, Threshold(5), SHORT)
    b = simulate(p, m, Threshold(5), SHORT)
    assert np.array_equal(a.per_replication, b.per_replication)
    assert a.to_dict() == b.to_dict()
    assert abs(a.total_avg_cost - (a.avg_aoci + a.avg_update_cost)) < 1e-12
    assert a.ci_half_width >= 0
    assert a.slots_counted == 8 * 19_000
    c = simulate(p, m, Threshold(5), SimConfig(horizon=20_000, replications=8, seed=6, warmup=1_000))
    assert not np.array_equal(a.per_replication, c.per_replication)


def test_simulate_is_replication_zero_of_compare():
    p = SystemParams(0.6)
    m = build_equiprobable(3)
    alone = simulate(p, m, Threshold(4), SHORT)
    together = compare_policies(p, m, [ZeroWait(), Threshold(4)], SHORT)
    assert np.array_equal(alone.per_replication, together[1].per_replication)


def test_common_random_numbers_share_the_process_path():
    # with a perfect channel both policies see every change; their AoCI paths coincide
    p = SystemParams(1.0)
    m = build_equiprobable(2)
    zw, sac = compare_policies(p, m, [ZeroWait(), SampleAtChange()], SHORT)
    assert zw.avg_aoci == sac.avg_aoci
    assert sac.update_rate < 1.0
    zw2, sac2 = compare_policies(p, m, [ZeroWait(), SampleAtChange()], SHORT, common_random_numbers=False)
    assert zw2.avg_aoci != sac2.avg_aoci


def test_paired_difference():
    p = SystemParams(0.5)
    m = build_equiprobable(2)
    a, b = compare_policies(p, m, [Threshold(8), ZeroWait()], SHORT)
    mean, hw = paired_difference(a, b)
    assert mean == pytest.approx(a.total_avg_cost - b.total_avg_cost)
    assert hw >= 0
    assert paired_difference(a, a) == (0.0, 0.0)


def test_solved_policy_matches_exact_gain():
    p = SystemParams(0.8, delta_cap=60, aoi_cap=60)
    m = build_random_walk(4, 0.5)
    rep = relative_policy_iteration(p, m)
    st = simulate(p, m, SolvedTable(rep.policy), SimConfig(horizon=50_000, replications=20, seed=11))
    assert abs(st.total_avg_cost - rep.theta) < 3 * st.ci_half_width


def test_solved_table_rejects_other_caps():
    rep = relative_policy_iteration(SystemParams(0.8, delta_cap=20, aoi_cap=20), build_equiprobable(2))
    with pytest.raises(ValueError):
        simulate(SystemParams(0.8), build_equiprobable(2), SolvedTable(rep.policy), SHORT)


@pytest.mark.parametrize("model", [build_random_walk(4, 0.3), build_custom([[0.7, 0.3], [0.3, 0.7]])],
                         ids=["random_walk", "custom"])
def test_change_frequency_follows_return_probability(model):
    p = SystemParams(0.4, delta_cap=40, aoi_cap=40)
    st = simulate(p, model, ZeroWait(), SimConfig(horizon=60_000, replications=10, seed=2), diagnostics=True)
    pr = model.return_probabilities(40)
    checked = 0
    for d in range(1, 12):
        n = int(st.delivery_counts[d])
        if n < 500:
            continue
        k = int(st.change_counts[d])
        # two-sided exact binomial test at a strict level; several AoI levels are tested
        assert stats.binomtest(k, n, 1 - pr[d - 1]).pvalue > 1e-4, (d, k, n)
        checked += 1
    assert checked >= 5


def test_occupancy_sums_to_slots():
    st = simulate(SystemParams(1.0), build_equiprobable(2), Threshold(6), SHORT, diagnostics=True)
    assert st.aoci_occupancy[0] == 0
    assert st.aoci_occupancy.sum() == st.slots_counted
    assert st.delivery_counts.sum() == pytest.approx(st.update_rate * st.slots_counted)


def test_no_diagnostics_by_default():
    st = simulate(SystemParams(1.0), build_equiprobable(2), Threshold(6), SHORT)
    assert st.aoci_occupancy is None


# ---- traces -----------------------------------------------------------------


@pytest.mark.parametrize(
    "model,spec,p_s",
    [
        (build_equiprobable(2), Threshold(4), 0.7),
        (build_random_walk(4, 0.5), ZeroWait(), 0.5),
        (build_custom([[0.9, 0.1], [0.1, 0.9]]), SampleAtChange(), 0.6),
        (build_equiprobable(3), Threshold(2), 1.0),
    ],
)
def test_trace_incremental_state_matches_definition(model, spec, p_s):
    p = SystemParams(p_s, delta_cap=30, aoi_cap=20)
    tr = trace(p, model, spec, 3000, seed=4)
    assert tr.consistent()
    for r in tr.records:
        assert 1 <= r.aoi <= r.aoci <= 30 and r.aoi <= 20


def test_trace_zero_wait_perfect_channel():
    tr = trace(SystemParams(1.0), build_equiprobable(2), ZeroWait(), 200)
    assert all(r.aoi == 1 for r in tr.records)
    assert all(r.h == 1 for r in tr.records)


def test_trace_before_first_delivery_grows_together():
    tr = trace(SystemParams(0.0), build_equiprobable(2), ZeroWait(), 15)
    assert [(r.aoci, r.aoi) for r in tr.records] == [(t + 1, t + 1) for t in range(15)]
    assert all(r.h == 0 and r.D is None for r in tr.records)
    assert len(tr.updates) == 1


def test_trace_same_content_delivery():
    tr = trace(SystemParams(1.0), build_custom([[0.9, 0.1], [0.1, 0.9]]), ZeroWait(), 400, seed=1)
    seen = 0
    for prev, cur in zip(tr.records, tr.records[1:]):
        if prev.h == 1 and prev.D == 0:
            assert cur.aoi == 1
            assert cur.aoci == min(prev.aoci + 1, 200)
            seen += 1
        elif prev.h == 1 and prev.D == 1:
            assert (cur.aoci, cur.aoi) == (1, 1)
    assert seen > 100


def test_trace_matches_replication_zero_costs():
    p = SystemParams(0.7)
    m = build_random_walk(4, 0.2)
    tr = trace(p, m, Threshold(5), 5000, seed=9)
    st = simulate(p, m, Threshold(5), SimConfig(horizon=5000, replications=1, seed=9, warmup=0))
    aoci = np.mean([r.aoci for r in tr.records])
    upd = np.mean([r.a for r in tr.records]) * p.weighted_cost
    assert aoci + upd == pytest.approx(st.total_avg_cost, abs=1e-12)


def test_trace_csv_columns():
    tr = trace(SystemParams(0.5), build_equiprobable(2), Threshold(3), 20)
    buf = io.StringIO()
    write_trace_csv(tr, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["t", "X", "a", "h", "D", "Delta", "delta"]
    assert len(rows) == 21
    assert {r[1] for r in rows[1:]} <= {"1", "2"}
    with pytest.raises(ValueError):
        trace(SystemParams(0.5), build_equiprobable(2), ZeroWait(), 0)
