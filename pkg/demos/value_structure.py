"""Check the value-function invariants and the guaranteed-update boundary."""

from aoci.mdp import SystemParams, pr_table_for
from aoci.process import build_random_walk
from aoci.solver import relative_policy_iteration, structural_lower_boundary, verify_value_properties

for M, p_c, p_s in ((4, 0.2, 0.5), (4, 0.2, 0.8), (6, 0.3, 0.9)):
    params = SystemParams(p_s=p_s, C_u=12.0, delta_cap=200, aoi_cap=200)
    model = build_random_walk(M, p_c)
    pr = pr_table_for(model, params)
    rep = relative_policy_iteration(params, model)
    props = verify_value_properties(rep.V, pr, params, max_witnesses=10_000)
    print(f"M={M}, p_c={p_c}, p_s={p_s}: gain {rep.theta:.4f}, gated check passed: {props.passed}")
    for key, value in props.summary().items():
        print(f"  {key:32s} {value}")
    if props.l3_violations:
        D = min(w[0] for w in props.l3_violations)
        print(f"  gated AoI-slope bound fails from AoCI {D} upward, pairs {sorted({w[1:] for w in props.l3_violations})}")
    if props.pairwise_violations:
        # the all-pairs scan is a diagnostic; the gated AoI-slope check above is the real test
        excess, D, d1, d2 = max((rep.V[(D, a)] - rep.V[(D, b)] - (b - a), D, a, b)
                                for D, a, b in props.pairwise_violations)
        print(f"  worst all-pairs witness (AoCI {D}, AoI {d1} vs {d2}) exceeds the slope by {excess:.3f}")
    bound = structural_lower_boundary(params, pr)
    print("  guaranteed-update AoCI for AoI 1..6:", [bound[d] for d in range(1, 7)])
