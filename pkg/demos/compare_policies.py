"""Simulated cost of the solved policy against the two baselines."""

from aoci.mdp import SystemParams
from aoci.process import build_random_walk
from aoci.simulator import SampleAtChange, SimConfig, SolvedTable, ZeroWait, compare_policies, paired_difference
from aoci.solver import relative_policy_iteration

model = build_random_walk(4, 0.2)
config = SimConfig(horizon=50_000, replications=10, seed=7, warmup=5_000)

print(" p_s   optimal  zero_wait  sample_at_change  opt-zw (paired 95% CI)")
for p_s in (0.2, 0.5, 0.8, 1.0):
    params = SystemParams(p_s, C_u=12.0, delta_cap=100, aoi_cap=100)
    solved = relative_policy_iteration(params, model)
    opt, zw, sac = compare_policies(params, model, [SolvedTable(solved.policy), ZeroWait(), SampleAtChange()], config)
    diff, hw = paired_difference(opt, zw)
    print(f"{p_s:4.1f}  {opt.total_avg_cost:8.3f}  {zw.total_avg_cost:9.3f}  {sac.total_avg_cost:16.3f}"
          f"  {diff:+.3f} +/- {hw:.3f}")
