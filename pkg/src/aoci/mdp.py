"""The truncated (AoCI, AoI) update MDP.

A state is a pair ``(aoci, aoi)`` with ``1 <= aoi <= min(aoci, aoi_cap)`` and
``aoci <= delta_cap``. The lattice is enumerated AoCI-major:
``(1,1), (2,1), (2,2), (3,1), ...``. Value functions and policies are flat
arrays aligned with that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .process import ProcessModel

# relative gap below which two Q values count as tied
TIE_TOL = 1e-9


class MdpState(NamedTuple):
    aoci: int
    aoi: int


@dataclass(frozen=True)
class SystemParams:
    """Channel, cost and truncation parameters.

    ``delta_cap`` bounds the AoCI and ``aoi_cap`` the AoI; keeping
    ``aoi_cap <= delta_cap`` makes the ``aoci >= aoi`` lattice closed.
    """

    p_s: float
    C_u: float = 12.0
    omega: float = 1.0
    delta_cap: int = 200
    aoi_cap: int = 200

    def __post_init__(self):
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError(f"p_s must lie in [0, 1], got {self.p_s}")
        if self.C_u < 0 or self.omega < 0:
            raise ValueError("C_u and omega must be non-negative")
        if int(self.delta_cap) != self.delta_cap or self.delta_cap < 2:
            raise ValueError(f"delta_cap must be an integer >= 2, got {self.delta_cap}")
        if int(self.aoi_cap) != self.aoi_cap or self.aoi_cap < 1:
            raise ValueError(f"aoi_cap must be an integer >= 1, got {self.aoi_cap}")
        if self.aoi_cap > self.delta_cap:
            raise ValueError("aoi_cap must not exceed delta_cap")

    @property
    def p_f(self) -> float:
        return 1.0 - self.p_s

    @property
    def weighted_cost(self) -> float:
        return self.omega * self.C_u

    def to_config(self) -> dict:
        return {
            "p_s": self.p_s,
            "C_u": self.C_u,
            "omega": self.omega,
            "delta_cap": self.delta_cap,
            "aoi_cap": self.aoi_cap,
        }


class Lattice:
    """Index bookkeeping for the state lattice of one parameter set."""

    def __init__(self, delta_cap: int, aoi_cap: int):
        self.delta_cap = delta_cap
        self.aoi_cap = aoi_cap
        aoci, aoi = [], []
        for d in range(1, delta_cap + 1):
            for a in range(1, min(d, aoi_cap) + 1):
                aoci.append(d)
                aoi.append(a)
        self.aoci = np.array(aoci)
        self.aoi = np.array(aoi)
        self.size = len(aoci)
        # index_of[aoci, aoi]; -1 off the lattice
        self.index_of = np.full((delta_cap + 1, aoi_cap + 1), -1, dtype=np.int64)
        self.index_of[self.aoci, self.aoi] = np.arange(self.size)
        for arr in (self.aoci, self.aoi, self.index_of):
            arr.setflags(write=False)

    @classmethod
    def for_params(cls, params: SystemParams) -> "Lattice":
        return _lattice_cache(params.delta_cap, params.aoi_cap)

    def index(self, s) -> int:
        i = self.index_of[s[0], s[1]] if s[0] <= self.delta_cap and s[1] <= self.aoi_cap else -1
        if i < 0:
            raise KeyError(f"{tuple(s)} is not on the lattice")
        return int(i)

    def states(self) -> list[MdpState]:
        return [MdpState(int(d), int(a)) for d, a in zip(self.aoci, self.aoi)]

    def __len__(self):
        return self.size

    @cached_property
    def reference(self) -> int:
        return self.index((1, 1))

    @cached_property
    def idle_next(self) -> np.ndarray:
        """Successor index when no delivery happens."""
        return self.index_of[
            np.minimum(self.aoci + 1, self.delta_cap), np.minimum(self.aoi + 1, self.aoi_cap)
        ]

    @cached_property
    def same_next(self) -> np.ndarray:
        """Successor index after a delivery whose content did not change."""
        return self.index_of[np.minimum(self.aoci + 1, self.delta_cap), 1]

    def table(self, flat) -> np.ndarray:
        """Scatter a flat lattice array into a ``(delta_cap, aoi_cap)`` grid (NaN off-lattice)."""
        flat = np.asarray(flat)
        dtype = float if flat.dtype.kind in "iub" else flat.dtype
        out = np.full((self.delta_cap, self.aoi_cap), np.nan, dtype=dtype)
        out[self.aoci - 1, self.aoi - 1] = flat
        return out


_LATTICES: dict[tuple[int, int], Lattice] = {}


def _lattice_cache(delta_cap, aoi_cap):
    key = (int(delta_cap), int(aoi_cap))
    if key not in _LATTICES:
        _LATTICES[key] = Lattice(*key)
    return _LATTICES[key]


@dataclass
class ValueFunction:
    """Relative values on the lattice plus the average cost ``theta``."""

    values: np.ndarray
    theta: float
    lattice: Lattice

    def __getitem__(self, s) -> float:
        return float(self.values[self.lattice.index(s)])

    def table(self) -> np.ndarray:
        return self.lattice.table(self.values)


@dataclass
class Policy:
    actions: np.ndarray
    lattice: Lattice

    def __getitem__(self, s) -> int:
        return int(self.actions[self.lattice.index(s)])

    def __eq__(self, other):
        return (
            isinstance(other, Policy)
            and self.lattice is other.lattice
            and np.array_equal(self.actions, other.actions)
        )

    def table(self) -> np.ndarray:
        return self.lattice.table(self.actions)

    @classmethod
    def constant(cls, lattice: Lattice, action: int) -> "Policy":
        return cls(np.full(lattice.size, action, dtype=np.int8), lattice)

    @classmethod
    def threshold(cls, lattice: Lattice, omega_threshold: int) -> "Policy":
        return cls((lattice.aoci >= omega_threshold).astype(np.int8), lattice)


def pr_table_for(source, params: SystemParams) -> np.ndarray:
    """``p_r(1..aoi_cap)`` from a :class:`ProcessModel` or an explicit array."""
    if isinstance(source, ProcessModel):
        return source.return_probabilities(params.aoi_cap)
    pr = np.asarray(source, dtype=float)
    if pr.ndim == 0:
        return np.full(params.aoi_cap, float(pr))
    if len(pr) < params.aoi_cap:
        raise ValueError(f"need {params.aoi_cap} return probabilities, got {len(pr)}")
    if pr.min() < 0 or pr.max() > 1:
        raise ValueError("return probabilities must lie in [0, 1]")
    return pr[: params.aoi_cap]


def pr_at(pr_table, delta: int) -> float:
    """``p_r(delta)``, using ``p_r(aoi_cap)`` for arguments past the table."""
    return float(pr_table[min(delta, len(pr_table)) - 1])


def state_space(params: SystemParams) -> list[MdpState]:
    return Lattice.for_params(params).states()


def next_state(params: SystemParams, s, a: int, h: int = 0, D: int = 0) -> MdpState:
    aoci, aoi = s
    bumped = min(aoci + 1, params.delta_cap)
    if a == 1 and h == 1:
        return MdpState(1, 1) if D == 1 else MdpState(bumped, 1)
    return MdpState(bumped, min(aoi + 1, params.aoi_cap))


def transition(params: SystemParams, pr_table, s, a: int) -> dict[MdpState, float]:
    """Successor distribution of ``(s, a)``; zero-probability outcomes are dropped
    and outcomes that coincide under the caps are merged."""
    if a == 0:
        return {next_state(params, s, 0): 1.0}
    pr = pr_at(pr_table, s[1])
    outcomes = [
        (next_state(params, s, 1, 0), params.p_f),
        (next_state(params, s, 1, 1, 0), params.p_s * pr),
        (next_state(params, s, 1, 1, 1), params.p_s * (1.0 - pr)),
    ]
    dist: dict[MdpState, float] = {}
    for nxt, p in outcomes:
        if p > 0.0:
            dist[nxt] = dist.get(nxt, 0.0) + p
    return dist


def stage_cost(params: SystemParams, s, a: int) -> float:
    return s[0] + params.omega * a * params.C_u


def q_value(params: SystemParams, pr_table, V: ValueFunction, s, a: int) -> float:
    return stage_cost(params, s, a) + sum(
        p * V[nxt] for nxt, p in transition(params, pr_table, s, a).items()
    )


def prefers_update(q0, q1):
    """``q1 < q0`` beyond round-off; near-ties resolve to idle."""
    scale = np.maximum(1.0, np.maximum(np.abs(q0), np.abs(q1)))
    return q1 < q0 - TIE_TOL * scale


def greedy_action(params: SystemParams, pr_table, V: ValueFunction, s) -> int:
    """Argmin of the two Q values; a tie (up to round-off) stays idle."""
    q0 = q_value(params, pr_table, V, s, 0)
    q1 = q_value(params, pr_table, V, s, 1)
    return int(prefers_update(q0, q1))


class Kernel:
    """Vectorised form of the transition law and costs over the whole lattice."""

    def __init__(self, params: SystemParams, pr_table):
        self.params = params
        self.lattice = lat = Lattice.for_params(params)
        self.pr = pr_table_for(pr_table, params)
        pr_s = self.pr[lat.aoi - 1]
        self.p_idle = np.full(lat.size, params.p_f)
        self.p_same = params.p_s * pr_s
        self.p_reset = params.p_s * (1.0 - pr_s)
        self.cost0 = lat.aoci.astype(float)
        self.cost1 = self.cost0 + params.weighted_cost

    def q_values(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lat = self.lattice
        v_idle = V[lat.idle_next]
        q0 = self.cost0 + v_idle
        q1 = (
            self.cost1
            + self.p_idle * v_idle
            + self.p_same * V[lat.same_next]
            + self.p_reset * V[lat.reference]
        )
        return q0, q1

    def greedy(self, V: np.ndarray) -> np.ndarray:
        q0, q1 = self.q_values(V)
        return prefers_update(q0, q1).astype(np.int8)

    def policy_matrix(self, actions: np.ndarray) -> sp.csr_matrix:
        """Sparse transition matrix of the chain induced by ``actions``."""
        lat = self.lattice
        n = lat.size
        act = np.asarray(actions, dtype=bool)
        rows = np.concatenate([np.arange(n)] * 3)
        cols = np.concatenate([lat.idle_next, lat.same_next, np.full(n, lat.reference)])
        vals = np.concatenate(
            [
                np.where(act, self.p_idle, 1.0),
                np.where(act, self.p_same, 0.0),
                np.where(act, self.p_reset, 0.0),
            ]
        )
        keep = vals > 0.0
        # duplicate (row, col) pairs are summed, which realises the cap merging
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))

    def policy_cost(self, actions: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(actions, dtype=bool), self.cost1, self.cost0)
