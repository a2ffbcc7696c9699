"""Closed-form threshold for an equiprobable source, checked three ways."""

from aoci.mdp import SystemParams
from aoci.process import build_equiprobable
from aoci.simulator import SimConfig, Threshold, simulate
from aoci.solver import policy_threshold_shape, relative_policy_iteration
from aoci.threshold import average_cost_closed_form, blocking_probability, corollary_sweep, optimal_threshold

p_z = blocking_probability(1.0, 0.5)
rep = optimal_threshold(p_z, 12.0)
print(f"relaxed threshold {rep.relaxed:.4f}; integer threshold {rep.threshold}; cost {rep.J:.6f} (53/7 = {53/7:.6f})")

print("\nW   cost")
for W in range(3, 10):
    print(f"{W:2d}  {average_cost_closed_form(W, p_z, 12.0)[0]:.6f}")

solved = relative_policy_iteration(SystemParams(1.0, C_u=12.0, delta_cap=200, aoi_cap=200), build_equiprobable(2))
print("\nsolved MDP switch point:", policy_threshold_shape(solved.policy).threshold, f"gain {solved.theta:.6f}")

st = simulate(SystemParams(1.0, C_u=12.0), build_equiprobable(2), Threshold(rep.threshold),
              SimConfig(horizon=100_000, replications=10, seed=1))
print(f"simulated cost {st.total_avg_cost:.4f} +/- {st.ci_half_width:.4f}")

print("\nthreshold vs success probability (C_u = 6, 12, 24):")
for C_u in (6, 12, 24):
    res = corollary_sweep("p_s", [0.2, 0.4, 0.6, 0.8, 1.0], M=2, C_u=C_u)
    print(f"  C_u={C_u:2d}:", [r["threshold"] for r in res.rows], res.expected, res.holds)
