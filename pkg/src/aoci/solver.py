"""Average-cost solvers for the update MDP and structural diagnostics.

Two independent routes to the optimal policy are provided:

* :func:`relative_value_iteration` -- synchronous relative VI with the
  reference state ``(1, 1)`` pinned to zero, an aperiodicity (damping)
  transform, and a span-seminorm stopping rule.
* :func:`relative_policy_iteration` -- policy iteration with exact sparse
  policy evaluation and a structure-aware improvement step that assigns
  ``a = 1`` without a Q comparison wherever the structural condition and
  the AoCI lower bound together guarantee it.

The remaining functions turn the structural results (monotone value
function, slope bounds, lower switching boundary) into executable checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp import Kernel, Lattice, Policy, SystemParams, ValueFunction, pr_at, pr_table_for

VI_TOL = 1e-10
VI_MAX_ITER = 100_000
VI_APERIODICITY = 0.5
EVAL_RESIDUAL_TOL = 1e-9
BOUND_EPS = 1e-12


class SingularEvaluation(np.linalg.LinAlgError):
    pass


class MaxIterationsExceeded(RuntimeWarning):
    pass


@dataclass
class ConditionRecord:
    iteration: int
    holds: np.ndarray  # bool per AoI level 1..aoi_cap

    @property
    def violated(self) -> list[int]:
        return [int(d) + 1 for d in np.flatnonzero(~self.holds)]


@dataclass
class SolveReport:
    policy: Policy
    V: ValueFunction
    iterations: int
    converged: bool = True
    condition_log: list[ConditionRecord] = field(default_factory=list)
    held_always: np.ndarray | None = None
    theta_history: list[float] = field(default_factory=list)
    short_circuit_rate: float = 0.0
    shadow_mismatches: int = 0
    method: str = ""

    @property
    def theta(self) -> float:
        return self.V.theta

    def to_dict(self) -> dict:
        lat = self.policy.lattice
        return {
            "method": self.method,
            "theta": self.theta,
            "iterations": self.iterations,
            "converged": self.converged,
            "short_circuit_rate": self.short_circuit_rate,
            "shadow_mismatches": self.shadow_mismatches,
            "theta_history": list(self.theta_history),
            "condition_held_always": None
            if self.held_always is None
            else [bool(x) for x in self.held_always],
            "condition_violations": [
                {"iteration": r.iteration, "aoi": r.violated} for r in self.condition_log if r.violated
            ],
            "policy": [
                [int(d), int(a), int(u)] for d, a, u in zip(lat.aoci, lat.aoi, self.policy.actions)
            ],
        }


def _condition_vector(values: np.ndarray, lattice: Lattice, pr: np.ndarray) -> np.ndarray:
    """Structural condition for every AoI level at once (see :func:`structural_condition`)."""
    gap = values[lattice.index_of[lattice.delta_cap, 1]] - values[lattice.reference]
    deltas = np.arange(1, len(pr) + 1)
    nxt = pr[np.minimum(deltas + 1, len(pr)) - 1]
    lhs = pr[0] - nxt
    if gap == 0.0:
        return np.ones(len(pr), dtype=bool)
    return lhs <= deltas / gap


def structural_condition(V: ValueFunction, pr_table, delta: int, delta_cap: int | None = None) -> bool:
    """Whether ``p_r(1) - p_r(delta+1) <= delta / (V(cap, 1) - V(1, 1))``.

    Uses the AoCI cap in the value gap, which bounds the gap at every AoCI
    level by monotonicity of ``V``. A zero gap makes the condition vacuous.
    """
    cap = V.lattice.delta_cap if delta_cap is None else delta_cap
    gap = V[(cap, 1)] - V[(1, 1)]
    lhs = pr_at(pr_table, 1) - pr_at(pr_table, delta + 1)
    if gap == 0.0:
        return True
    return bool(lhs <= delta / gap)


def _bound(params: SystemParams, pr_aoi, aoci, aoi):
    return params.p_s * (1.0 - pr_aoi) * aoci - params.p_s * aoi - params.weighted_cost


def _bound_holds(params, pr_aoi, aoci, aoi):
    slack = BOUND_EPS * (params.p_s * aoi + params.weighted_cost + 1.0)
    return _bound(params, pr_aoi, aoci, aoi) >= -slack


@dataclass
class StructuralBoundary:
    """Least AoCI at which updating is guaranteed optimal, per AoI (``None`` past the cap)."""

    levels: list[int | None]

    def __getitem__(self, delta: int) -> int | None:
        return self.levels[delta - 1]

    def __len__(self):
        return len(self.levels)


def structural_lower_boundary(params: SystemParams, pr_table) -> StructuralBoundary:
    pr = pr_table_for(pr_table, params)
    levels: list[int | None] = []
    for delta in range(1, params.aoi_cap + 1):
        p = pr[delta - 1]
        coef = params.p_s * (1.0 - p)
        if coef <= 0.0:
            levels.append(None)
            continue
        level = max(1, int(np.ceil((params.p_s * delta + params.weighted_cost) / coef)))
        while level > 1 and _bound_holds(params, p, level - 1, delta):
            level -= 1
        while not _bound_holds(params, p, level, delta):
            level += 1
        levels.append(level if level <= params.delta_cap else None)
    return StructuralBoundary(levels)


def policy_evaluation(params: SystemParams, model, policy: Policy, kernel: Kernel | None = None) -> ValueFunction:
    """Gain and relative values of a stationary policy via one sparse solve.

    Solves ``theta + V(s) = C(s, pi(s)) + sum_s' P(s'|s, pi(s)) V(s')`` with
    ``V(1, 1) = 0``. The column of the pinned state carries ``theta`` instead.
    """
    kernel = kernel or Kernel(params, pr_table_for(model, params))
    lat = kernel.lattice
    P = kernel.policy_matrix(policy.actions)
    c = kernel.policy_cost(policy.actions)
    A = (sp.identity(lat.size, format="csc") - P.tocsc()).tolil()
    A[:, lat.reference] = 1.0
    A = A.tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A, c)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise SingularEvaluation(f"policy evaluation system is singular: {exc}") from exc
    resid = np.max(np.abs(A @ x - c)) if np.all(np.isfinite(x)) else np.inf
    if not resid < EVAL_RESIDUAL_TOL * max(1.0, np.max(np.abs(x))):
        raise SingularEvaluation(f"policy evaluation residual {resid:.3g} too large")
    theta = float(x[lat.reference])
    values = x.copy()
    values[lat.reference] = 0.0
    return ValueFunction(values, theta, lat)


def _log_condition(log, held, iteration, values, lattice, pr):
    holds = _condition_vector(values, lattice, pr)
    held &= holds
    if not holds.all() or not log:
        log.append(ConditionRecord(iteration, holds))


def relative_value_iteration(
    params: SystemParams,
    model,
    tol: float = VI_TOL,
    max_iter: int = VI_MAX_ITER,
    V0: np.ndarray | None = None,
    aperiodicity: float = VI_APERIODICITY,
) -> SolveReport:
    """Relative value iteration from ``V0`` (zeros by default).

    Each sweep computes ``W = tau * T V + (1 - tau) * V`` and renormalises it
    so that ``W(1, 1) = 0``. With ``tau = aperiodicity < 1`` every induced
    chain gains a self-loop, which keeps the span from oscillating on
    periodic instances (the random walk with ``p_s = 1``) without changing
    the gain or the relative values; ``tau = 1`` is the plain iteration.

    Stops once ``span(T V - V) < tol``, which brackets the gain to within
    ``tol``; the reported gain is ``(T V)(1, 1)`` at the last sweep. The
    structural condition is checked at every iterate; only the first record
    and iterations with violations are kept in ``condition_log``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < aperiodicity <= 1.0:
        raise ValueError("aperiodicity must lie in (0, 1]")
    tau = float(aperiodicity)
    kernel = Kernel(params, pr_table_for(model, params))
    lat = kernel.lattice
    ref = lat.reference
    V = np.zeros(lat.size) if V0 is None else np.array(V0, dtype=float)
    V -= V[ref]
    log: list[ConditionRecord] = []
    held = np.ones(params.aoi_cap, dtype=bool)
    converged = False
    theta = np.nan
    it = 0
    for it in range(1, max_iter + 1):
        _log_condition(log, held, it - 1, V, lat, kernel.pr)
        q0, q1 = kernel.q_values(V)
        TV = np.minimum(q0, q1)
        theta = TV[ref]
        step = TV - V
        V = V + tau * (step - step[ref])
        if step.max() - step.min() < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"relative value iteration hit max_iter={max_iter} before span < {tol}",
            MaxIterationsExceeded,
            stacklevel=2,
        )
    _log_condition(log, held, it, V, lat, kernel.pr)
    policy = Policy(kernel.greedy(V), lat)
    return SolveReport(
        policy=policy,
        V=ValueFunction(V, float(theta), lat),
        iterations=it,
        converged=converged,
        condition_log=log,
        held_always=held,
        method="rvi",
    )


def relative_policy_iteration(
    params: SystemParams, model, max_iter: int = 1000, shadow: bool = True
) -> SolveReport:
    """Structure-aware relative policy iteration.

    Starts from the all-idle policy. Each improvement pass sets ``a = 1``
    directly for states where both the structural condition (conservative
    value gap) and ``p_s(1-p_r(d))D - p_s d - w C_u >= 0`` hold, and takes
    the Q-argmin elsewhere (ties stay idle). Stops when the policy repeats.

    With ``shadow=True`` the full argmin is also evaluated on short-circuited
    states and disagreements are counted in ``shadow_mismatches``.
    """
    kernel = Kernel(params, pr_table_for(model, params))
    lat = kernel.lattice
    pr_aoi = kernel.pr[lat.aoi - 1]
    bound_ok = _bound_holds(params, pr_aoi, lat.aoci, lat.aoi)

    policy = Policy.constant(lat, 0)
    log: list[ConditionRecord] = []
    held = np.ones(params.aoi_cap, dtype=bool)
    thetas: list[float] = []
    hits = decided = 0
    mismatches = 0
    converged = False
    k = 0
    for k in range(max_iter):
        V = policy_evaluation(params, None, policy, kernel)
        thetas.append(V.theta)
        cond = _condition_vector(V.values, lat, kernel.pr)
        held &= cond
        log.append(ConditionRecord(k, cond))
        short = cond[lat.aoi - 1] & bound_ok
        new = np.zeros(lat.size, dtype=np.int8)
        new[short] = 1
        greedy = kernel.greedy(V.values)
        new[~short] = greedy[~short]
        if shadow:
            mismatches += int(np.count_nonzero(short & (greedy == 0)))
        hits += int(short.sum())
        decided += lat.size
        if np.array_equal(new, policy.actions):
            converged = True
            break
        policy = Policy(new, lat)
    if not converged:
        warnings.warn(f"policy iteration did not stabilise in {max_iter} rounds", MaxIterationsExceeded, stacklevel=2)
    return SolveReport(
        policy=policy,
        V=V,
        iterations=k + 1,
        converged=converged,
        condition_log=log,
        held_always=held,
        theta_history=thetas,
        short_circuit_rate=hits / decided if decided else 0.0,
        shadow_mismatches=mismatches,
        method="rpi",
    )


@dataclass
class PropertyReport:
    """Witness lists of the value-function checks.

    ``l3_*`` covers the AoI pairs ``(1, d + 1)`` gated by
    :func:`structural_condition`; only these count towards :attr:`passed`.
    Two wider scans over every AoI pair ``d1 < d2`` are reported alongside:

    * ``pairwise_*`` gates a pair on its own return-probability gap
      ``p_r(d1) - p_r(d2) <= (d2 - d1) / gap``. This is not sufficient, and
      witnesses do occur (the ``M=4, p_c=0.2`` random walk at ``p_s = 0.5``).
    * ``shift_closed_*`` requires the same gap test for every shifted pair
      ``(d1 + j, d2 + j)`` still on the lattice, which is what the slope
      bound actually propagates through; no witnesses are expected here.
    """

    l1_violations: list[tuple]
    l2_violations: list[tuple]
    l3_violations: list[tuple]
    l3_checked: int
    l3_skipped: int
    tol: float
    pairwise_violations: list[tuple] = field(default_factory=list)
    pairwise_checked: int = 0
    shift_closed_violations: list[tuple] = field(default_factory=list)
    shift_closed_checked: int = 0

    @property
    def passed(self) -> bool:
        return not (self.l1_violations or self.l2_violations or self.l3_violations)

    def summary(self) -> dict:
        return {
            "monotone_in_aoci": len(self.l1_violations),
            "aoci_slope": len(self.l2_violations),
            "aoi_slope": len(self.l3_violations),
            "aoi_slope_checked": self.l3_checked,
            "aoi_slope_skipped": self.l3_skipped,
            "aoi_slope_pairwise_violations": len(self.pairwise_violations),
            "aoi_slope_pairwise_checked": self.pairwise_checked,
            "aoi_slope_shift_closed_violations": len(self.shift_closed_violations),
            "aoi_slope_shift_closed_checked": self.shift_closed_checked,
        }


def _collect(store, bad, make, limit):
    if bad.any() and len(store) < limit:
        for idx in zip(*np.nonzero(bad)):
            store.append(make(*idx))
            if len(store) >= limit:
                break


def verify_value_properties(V: ValueFunction, pr_table, params: SystemParams, tol: float | None = None,
                            max_witnesses: int = 20) -> PropertyReport:
    """Exhaustive pairwise checks of the value-function properties.

    * monotone: ``V(D2, d) >= V(D1, d)`` for ``D2 > D1``;
    * AoCI slope: ``V(D2, d) - V(D1, d) >= D2 - D1``;
    * AoI slope: ``V(D, 1) - V(D, d + 1) <= d`` at every AoCI level, for the
      AoI levels ``d`` where :func:`structural_condition` holds at ``V``.

    Witnesses are ``(D1, D2, d)`` for the AoCI checks and ``(D, d1, d2)`` for
    the AoI checks; at most ``max_witnesses`` of each are kept.
    """
    lat = V.lattice
    pr = pr_table_for(pr_table, params)
    grid = V.table()
    if tol is None:
        tol = 1e-8 * max(1.0, float(np.max(np.abs(V.values))))
    l1: list[tuple] = []
    l2: list[tuple] = []
    for d in range(1, lat.aoi_cap + 1):
        col = grid[d - 1 :, d - 1]
        levels = np.arange(d, lat.delta_cap + 1)
        diff = col[None, :] - col[:, None]
        gaps = levels[None, :] - levels[:, None]
        upper = gaps > 0
        make = lambda i, j: (int(levels[i]), int(levels[j]), d)  # noqa: E731
        _collect(l1, upper & (diff < -tol), make, max_witnesses)
        _collect(l2, upper & (diff < gaps - tol), make, max_witnesses)

    cond = _condition_vector(V.values, lat, pr)
    l3: list[tuple] = []
    checked = skipped = 0
    for d in range(1, lat.aoi_cap):
        # pair (1, d + 1) exists from AoCI level d + 1 upward
        levels = np.arange(d + 1, lat.delta_cap + 1)
        if not cond[d - 1]:
            skipped += len(levels)
            continue
        checked += len(levels)
        lhs = grid[levels - 1, 0] - grid[levels - 1, d]
        _collect(l3, lhs > d + tol, lambda i: (int(levels[i]), 1, d + 1), max_witnesses)

    gap = V[(lat.delta_cap, 1)] - V[(1, 1)]
    n = lat.aoi_cap
    dd = np.arange(1, n + 1)
    width = dd[None, :] - dd[:, None]
    spread = pr[:, None] - pr[None, :]
    allowed = np.inf if gap == 0.0 else width / gap
    own = (width > 0) & (spread <= allowed)
    # worst gap along each diagonal from (d1, d2) onwards: reverse running max per width
    worst = np.full((n, n), -np.inf)
    for w in range(1, n):
        diag = pr[: n - w] - pr[w:]
        worst[np.arange(n - w), np.arange(w, n)] = np.maximum.accumulate(diag[::-1])[::-1]
    shifted = (width > 0) & (worst <= allowed)
    pairwise: list[tuple] = []
    closed: list[tuple] = []
    pairwise_checked = closed_checked = 0
    for D in range(1, lat.delta_cap + 1):
        m = min(D, n)
        row = grid[D - 1, :m]
        excess = row[:, None] - row[None, :] > width[:m, :m] + tol
        make = lambda i, j: (D, int(i) + 1, int(j) + 1)  # noqa: E731
        pairwise_checked += int(own[:m, :m].sum())
        closed_checked += int(shifted[:m, :m].sum())
        _collect(pairwise, own[:m, :m] & excess, make, max_witnesses)
        _collect(closed, shifted[:m, :m] & excess, make, max_witnesses)
    return PropertyReport(l1, l2, l3, checked, skipped, tol, pairwise, pairwise_checked, closed, closed_checked)


@dataclass
class ColumnShape:
    aoi: int
    monotone: bool
    switch: int | None  # first AoCI level with a = 1
    witness: int | None = None  # first AoCI level where a 0 follows a 1


@dataclass
class ThresholdShape:
    columns: list[ColumnShape]
    threshold: int | None
    pure: bool

    @property
    def monotone(self) -> bool:
        return all(c.monotone for c in self.columns)


def column_shape(actions, start: int = 1, aoi: int = 0) -> ColumnShape:
    """Classify one AoI column (actions listed from AoCI level ``start`` upward)."""
    acts = np.asarray(actions, dtype=int)
    ones = np.flatnonzero(acts == 1)
    if len(ones) == 0:
        return ColumnShape(aoi, True, None)
    first = ones[0]
    zeros_after = np.flatnonzero(acts[first:] == 0)
    if len(zeros_after):
        return ColumnShape(aoi, False, int(start + first), int(start + first + zeros_after[0]))
    return ColumnShape(aoi, True, int(start + first))


def policy_threshold_shape(policy: Policy) -> ThresholdShape:
    """Per-AoI switch structure of a policy.

    ``pure`` is set when one AoCI threshold explains the whole table, i.e.
    ``pi(D, d) = [D >= threshold]`` for every lattice state.
    """
    lat = policy.lattice
    grid = policy.table()
    cols = []
    for d in range(1, lat.aoi_cap + 1):
        cols.append(column_shape(grid[d - 1 :, d - 1], start=d, aoi=d))
    threshold = cols[0].switch
    if threshold is None:
        pure = not policy.actions.any()
    else:
        pure = bool(np.array_equal(policy.actions, (lat.aoci >= threshold).astype(policy.actions.dtype)))
    return ThresholdShape(cols, threshold, pure)


def recurrent_states(params: SystemParams, model, policy: Policy, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of states with positive stationary mass under ``policy``."""
    kernel = Kernel(params, pr_table_for(model, params))
    P = kernel.policy_matrix(policy.actions)
    n = P.shape[0]
    # stationary law: pi (P - I) = 0, sum pi = 1; replace one equation with normalisation
    A = (P.T - sp.identity(n)).tolil()
    A[0, :] = 1.0
    b = np.zeros(n)
    b[0] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    return pi > tol
