"""Solve the update problem for a random-walk source and print the action map."""

from aoci.mdp import SystemParams
from aoci.process import build_random_walk
from aoci.solver import policy_threshold_shape, relative_policy_iteration, relative_value_iteration

params = SystemParams(p_s=0.8, C_u=12.0, omega=1.0, delta_cap=40, aoi_cap=40)
model = build_random_walk(4, 0.5)

rpi = relative_policy_iteration(params, model)
rvi = relative_value_iteration(params, model)
print(f"policy iteration: gain {rpi.theta:.10f} after {rpi.iterations} rounds, "
      f"{rpi.short_circuit_rate:.0%} of improvement steps skipped the Q comparison")
print(f"value iteration:  gain {rvi.theta:.10f} after {rvi.iterations} sweeps")

# rows are AoCI 1..16, columns AoI 1..16; '#' = update, '.' = idle, ' ' = off-lattice
grid = rpi.policy.table()
print("\n      AoI ->")
for D in range(1, 17):
    cells = "".join(" " if d > D else ("#" if grid[D - 1, d - 1] == 1 else ".") for d in range(1, 17))
    print(f"{D:4d}  {cells}")

shape = policy_threshold_shape(rpi.policy)
print("\nevery column switches once:", shape.monotone)
print("switch AoCI per AoI level 1..8:", [c.switch for c in shape.columns[:8]])
