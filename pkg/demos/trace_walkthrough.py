"""Slot-by-slot trace showing how AoCI and AoI evolve under a threshold policy."""

from aoci.mdp import SystemParams
from aoci.process import build_equiprobable
from aoci.simulator import Threshold, trace

tr = trace(SystemParams(0.7, C_u=12.0), build_equiprobable(2), Threshold(3), horizon=25, seed=3)
print("  t  X  a  h  D  AoCI  AoI")
for r in tr.records:
    h = "-" if r.h is None else r.h
    D = "-" if r.D is None else r.D
    print(f"{r.t:3d}  {r.X + 1}  {r.a}  {h}  {D}  {r.aoci:4d} {r.aoi:4d}")
print("\nincremental state matches the delivery-log definition:", tr.consistent())
print("deliveries, counting the virtual update at t = 0:", len(tr.updates))
