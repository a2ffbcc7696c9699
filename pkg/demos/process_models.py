"""Return probabilities for the three built-in source models.

The chance that the source sits in the same state after ``delta`` slots is
what decides whether a fresh update can carry new content.
"""

from aoci.process import build_custom, build_equiprobable, build_random_walk

models = {
    "equiprobable M=3": build_equiprobable(3),
    "random walk M=4, p_c=0.5": build_random_walk(4, 0.5),
    "sticky 2-state": build_custom([[0.9, 0.1], [0.1, 0.9]]),
}

print("delta " + "".join(f"{name:>28}" for name in models))
for delta in range(1, 9):
    row = [m.return_probabilities(8)[delta - 1] for m in models.values()]
    print(f"{delta:5d} " + "".join(f"{x:28.6f}" for x in row))

# the walk has period two: odd lags never return
walk = models["random walk M=4, p_c=0.5"].return_probabilities(20)
print("\nrandom walk odd lags all zero:", bool((walk[0::2] == 0).all()))
