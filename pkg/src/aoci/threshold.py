"""Closed-form analysis of threshold policies when ``p_r`` does not depend on the AoI.

With a constant return probability ``p_r`` the AoCI alone is a sufficient
state, an update attempt fails to reset it with the blocking probability
``p_z = p_f + p_s p_r``, and the untruncated chain under an AoCI threshold
``Omega`` has a flat-then-geometric stationary law. Everything here is for
the untruncated (``delta_cap -> infinity``) chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def blocking_probability(p_s: float, p_r: float) -> float:
    return (1.0 - p_s) + p_s * p_r


def _check_pz(p_z):
    if not 0.0 <= p_z < 1.0:
        raise ValueError(f"blocking probability must lie in [0, 1), got {p_z}")


def average_cost_closed_form(omega_threshold: int, p_z: float, weighted_cost: float) -> tuple[float, float, float]:
    """``(J, J1, J2)`` of the threshold policy: total, AoCI part, update-cost part."""
    _check_pz(p_z)
    if omega_threshold < 1:
        raise ValueError("threshold must be >= 1")
    W = omega_threshold
    q = 1.0 - p_z
    denom = W * q + p_z
    j1 = q / denom * (W * (W - 1) / 2.0 + W / q + p_z / q**2)
    j2 = weighted_cost / denom
    return j1 + j2, j1, j2


def relaxed_threshold(p_z: float, weighted_cost: float) -> float:
    """Stationary point of ``J`` with the threshold treated as a real number."""
    _check_pz(p_z)
    return (math.sqrt(p_z + 2.0 * weighted_cost * (1.0 - p_z)) - p_z) / (1.0 - p_z)


@dataclass
class ThresholdReport:
    p_z: float
    weighted_cost: float
    relaxed: float
    threshold: int
    J_floor: float
    J_ceil: float
    J: float
    J1: float
    J2: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def optimal_threshold(p_z: float, weighted_cost: float) -> ThresholdReport:
    """Integer threshold minimising ``J`` among the floor and ceiling of the relaxed optimum.

    Both candidates are clamped to ``>= 1``; a tie goes to the smaller one.
    """
    w_rel = relaxed_threshold(p_z, weighted_cost)
    lo = max(1, math.floor(w_rel))
    hi = max(1, math.ceil(w_rel))
    j_lo = average_cost_closed_form(lo, p_z, weighted_cost)
    j_hi = average_cost_closed_form(hi, p_z, weighted_cost)
    best, (J, J1, J2) = (lo, j_lo) if j_lo[0] <= j_hi[0] else (hi, j_hi)
    return ThresholdReport(p_z, weighted_cost, w_rel, best, j_lo[0], j_hi[0], J, J1, J2)


def brute_force_threshold(p_z: float, weighted_cost: float, max_threshold: int = 500) -> int:
    """Argmin of ``J`` over ``1..max_threshold`` by exhaustive evaluation (smallest on ties)."""
    costs = [average_cost_closed_form(w, p_z, weighted_cost)[0] for w in range(1, max_threshold + 1)]
    return int(np.argmin(costs)) + 1


@dataclass
class SteadyState:
    """Stationary AoCI law ``phi[s-1]`` for ``s = 1..len(phi)`` and the mass beyond."""

    phi: np.ndarray
    threshold: int
    p_z: float
    tail_mass: float

    @property
    def s_max(self) -> int:
        return len(self.phi)

    def mean(self) -> float:
        """``sum_s s * phi_s`` including the geometric tail in closed form."""
        s = np.arange(1, self.s_max + 1)
        head = float(np.dot(s, self.phi))
        if self.tail_mass == 0.0:
            return head
        r = self.p_z
        S = self.s_max
        phi1 = self.phi[0]
        # sum_{s > S} s * phi1 * r^(s - Omega)
        tail = phi1 * r ** (S + 1 - self.threshold) * ((S + 1) / (1 - r) + r / (1 - r) ** 2)
        return head + tail


def steady_state(omega_threshold: int, p_z: float, s_max: int) -> SteadyState:
    _check_pz(p_z)
    if s_max < omega_threshold + 1:
        raise ValueError("s_max must exceed the threshold")
    W = omega_threshold
    q = 1.0 - p_z
    phi1 = q / (W * q + p_z)
    s = np.arange(1, s_max + 1)
    phi = np.where(s <= W, phi1, phi1 * p_z ** np.maximum(s - W, 0).astype(float))
    tail = phi1 * p_z ** (s_max - W + 1) / q if p_z > 0 else 0.0
    return SteadyState(phi, W, p_z, float(tail))


@dataclass
class SweepResult:
    axis: str
    rows: list[dict]
    expected: str  # "non-decreasing" or "non-increasing"
    holds: bool
    witness: tuple | None = None

    COLUMNS = ("axis_value", "relaxed", "threshold", "J", "J1", "J2")


def corollary_sweep(axis: str, grid, M: int = 2, p_s: float = 1.0, C_u: float = 12.0, omega: float = 1.0) -> SweepResult:
    """Optimal threshold along ``grid`` for the equiprobable ``M``-state chain.

    ``axis`` is one of ``"C_u"``, ``"p_s"``, ``"M"``. The expected direction
    is non-decreasing in ``C_u`` and non-increasing in ``p_s`` and ``M``.
    """
    grid = list(grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    if axis not in ("C_u", "p_s", "M"):
        raise ValueError(f"unknown axis {axis!r}")
    rows = []
    for x in grid:
        kw = {"M": M, "p_s": p_s, "C_u": C_u}
        kw[axis] = x
        p_z = blocking_probability(kw["p_s"], 1.0 / kw["M"])
        rep = optimal_threshold(p_z, omega * kw["C_u"])
        rows.append(
            {"axis_value": x, "relaxed": rep.relaxed, "threshold": rep.threshold, "J": rep.J, "J1": rep.J1, "J2": rep.J2}
        )
    expected = "non-decreasing" if axis == "C_u" else "non-increasing"
    sign = 1 if axis == "C_u" else -1
    witness = None
    for a, b in zip(rows, rows[1:]):
        if sign * (b["threshold"] - a["threshold"]) < 0:
            witness = (a["axis_value"], b["axis_value"])
            break
    return SweepResult(axis, rows, expected, witness is None, witness)
