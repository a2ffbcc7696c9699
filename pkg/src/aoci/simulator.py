"""Slotted Monte Carlo simulation of the sensor / channel / destination loop.

The simulator is deliberately independent of the MDP kernel: the physical
process is sampled from its transition matrix, the channel is a Bernoulli
coin per slot, and a content change is decided by comparing the sampled
state with the last delivered content. Return probabilities are never used.

Random streams
--------------
``numpy.random.SeedSequence(seed)`` is split into one child per replication,
and each of those into a chain stream and a channel stream. Slot ``t`` of a
replication always consumes exactly one chain uniform and one channel
uniform, whatever the policy does, so running several policies on the same
seed gives common random numbers. Replication 0 of :func:`simulate` and
:func:`trace` see the same draws.

Conventions
-----------
Before slot 0 a virtual update generated at ``t = -1`` is delivered with
content ``X_{-1}`` (uniform), so the run starts at ``(AoCI, AoI) = (1, 1)``.
An update generated in slot ``t`` has content ``X_t`` and, if the channel
succeeds, is delivered at instant ``t + 1``.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .mdp import MdpState, Policy, SystemParams
from .process import ProcessModel

CHUNK = 4096
Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class ZeroWait:
    name: str = "zero_wait"


@dataclass(frozen=True)
class SampleAtChange:
    """Genie-aided: transmit whenever the current state differs from the last
    delivered content (so failed attempts are repeated every slot)."""

    name: str = "sample_at_change"


@dataclass(frozen=True)
class Threshold:
    level: int
    name: str = "threshold"

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("threshold must be >= 1")


@dataclass(frozen=True, eq=False)
class SolvedTable:
    policy: Policy
    name: str = "optimal"


PolicySpec = ZeroWait | SampleAtChange | Threshold | SolvedTable


def decide(spec: PolicySpec, s, genie_changed: bool = False) -> int:
    if isinstance(spec, ZeroWait):
        return 1
    if isinstance(spec, SampleAtChange):
        return int(bool(genie_changed))
    if isinstance(spec, Threshold):
        return int(s[0] >= spec.level)
    if isinstance(spec, SolvedTable):
        lat = spec.policy.lattice
        return spec.policy[(min(s[0], lat.delta_cap), min(s[1], lat.aoi_cap))]
    raise TypeError(f"unknown policy spec {spec!r}")


@dataclass(frozen=True)
class SimConfig:
    horizon: int = 100_000
    replications: int = 20
    seed: int = 0
    warmup: int = 10_000

    def __post_init__(self):
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValueError("need at least one replication")


@dataclass
class SimStats:
    policy: str
    avg_aoci: float
    avg_update_cost: float
    total_avg_cost: float
    ci_half_width: float
    slots_counted: int
    per_replication: np.ndarray = field(repr=False)  # total cost per replication
    # slot counts indexed by AoCI value; entry 0 is always empty
    aoci_occupancy: np.ndarray | None = field(default=None, repr=False)
    delivery_counts: np.ndarray | None = field(default=None, repr=False)
    change_counts: np.ndarray | None = field(default=None, repr=False)
    update_rate: float = 0.0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "avg_aoci": self.avg_aoci,
            "avg_update_cost": self.avg_update_cost,
            "total_avg_cost": self.total_avg_cost,
            "ci_half_width": self.ci_half_width,
            "slots_counted": self.slots_counted,
            "update_rate": self.update_rate,
        }


def _half_width(x) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return 0.0
    return float(Z95 * x.std(ddof=1) / math.sqrt(len(x)))


def paired_difference(a: SimStats, b: SimStats) -> tuple[float, float]:
    """Mean and 95% half-width of ``a - b`` over paired replications."""
    d = a.per_replication - b.per_replication
    return float(d.mean()), _half_width(d)


class _Streams:
    """Chain and channel uniforms, drawn chunk by chunk, shape ``(R, n)``."""

    def __init__(self, root: np.random.SeedSequence, replications: int):
        self.chain, self.channel = [], []
        for child in root.spawn(replications):
            c, h = child.spawn(2)
            self.chain.append(np.random.default_rng(c))
            self.channel.append(np.random.default_rng(h))

    def initial(self) -> np.ndarray:
        return np.array([g.random() for g in self.chain])

    def next_chunk(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.stack([g.random(n) for g in self.chain]),
            np.stack([g.random(n) for g in self.channel]),
        )


def _policy_tables(specs, params):
    K = len(specs)
    tab = np.zeros((K, params.delta_cap + 1, params.aoi_cap + 1), dtype=bool)
    genie = np.zeros((K, 1), dtype=bool)
    aoci = np.arange(params.delta_cap + 1)[:, None]
    for k, spec in enumerate(specs):
        if isinstance(spec, ZeroWait):
            tab[k] = True
        elif isinstance(spec, SampleAtChange):
            genie[k] = True
        elif isinstance(spec, Threshold):
            tab[k] = np.broadcast_to(aoci >= spec.level, tab[k].shape)
        elif isinstance(spec, SolvedTable):
            lat = spec.policy.lattice
            if (lat.delta_cap, lat.aoi_cap) != (params.delta_cap, params.aoi_cap):
                raise ValueError("solved policy was computed for different caps")
            tab[k, lat.aoci, lat.aoi] = spec.policy.actions.astype(bool)
        else:
            raise TypeError(f"unknown policy spec {spec!r}")
    return tab.reshape(-1), genie


def _run(params: SystemParams, model: ProcessModel, specs, config: SimConfig, root, diagnostics=False):
    K, R, M = len(specs), config.replications, model.M
    cap_d, cap_a = params.delta_cap, params.aoi_cap
    tab, genie = _policy_tables(specs, params)
    stride = cap_a + 1
    koff = (np.arange(K) * (cap_d + 1) * stride)[:, None]
    cdf = model.cdf

    streams = _Streams(root, R)
    u0 = streams.initial()
    prev = np.minimum((u0 * M).astype(np.int64), M - 1)  # X_{-1}, uniform
    y = np.broadcast_to(prev, (K, R)).copy()  # last delivered content
    x = prev
    aoci = np.ones((K, R), dtype=np.int64)
    aoi = np.ones((K, R), dtype=np.int64)

    sum_aoci = np.zeros((K, R))
    sum_upd = np.zeros((K, R))
    occupancy = np.zeros((K, cap_d + 1), dtype=np.int64) if diagnostics else None
    deliveries = np.zeros((K, cap_a + 1), dtype=np.int64) if diagnostics else None
    changes = np.zeros((K, cap_a + 1), dtype=np.int64) if diagnostics else None

    t = 0
    while t < config.horizon:
        n = min(CHUNK, config.horizon - t)
        u_chain, u_chan = streams.next_chunk(n)
        buf_aoci = np.empty((n, K, R), dtype=np.int64)
        buf_a = np.empty((n, K, R), dtype=bool)
        if diagnostics:
            buf_aoi = np.empty((n, K, R), dtype=np.int64)
            buf_ok = np.empty((n, K, R), dtype=bool)
            buf_ch = np.empty((n, K, R), dtype=bool)
        for i in range(n):
            # the process moves at the start of the slot, before the decision
            x = (cdf[x] <= u_chain[:, i, None]).sum(axis=1)
            x = np.minimum(x, M - 1)
            differs = x != y
            a = tab[koff + aoci * stride + aoi] | (genie & differs)
            ok = a & (u_chan[:, i] < params.p_s)
            changed = ok & differs
            buf_aoci[i] = aoci
            buf_a[i] = a
            if diagnostics:
                buf_aoi[i] = aoi
                buf_ok[i] = ok
                buf_ch[i] = changed
            aoci = np.where(changed, 1, np.minimum(aoci + 1, cap_d))
            aoi = np.where(ok, 1, np.minimum(aoi + 1, cap_a))
            y = np.where(ok, x, y)
        keep = slice(max(0, config.warmup - t), n)
        sum_aoci += buf_aoci[keep].sum(axis=0)
        sum_upd += buf_a[keep].sum(axis=0)
        if diagnostics:
            for k in range(K):
                occupancy[k] += np.bincount(buf_aoci[keep, k].ravel(), minlength=cap_d + 1)
                okk = buf_ok[keep, k]
                deliveries[k] += np.bincount(buf_aoi[keep, k][okk], minlength=cap_a + 1)
                changes[k] += np.bincount(buf_aoi[keep, k][buf_ch[keep, k]], minlength=cap_a + 1)
        t += n

    counted = config.horizon - config.warmup
    out = []
    for k, spec in enumerate(specs):
        m_aoci = sum_aoci[k] / counted
        rate = sum_upd[k] / counted
        m_cost = params.weighted_cost * rate
        per_rep = m_aoci + m_cost
        avg_aoci = float(m_aoci.mean())
        avg_cost = float(m_cost.mean())
        out.append(
            SimStats(
                policy=spec.name,
                avg_aoci=avg_aoci,
                avg_update_cost=avg_cost,
                total_avg_cost=avg_aoci + avg_cost,
                ci_half_width=_half_width(per_rep),
                slots_counted=counted * R,
                per_replication=per_rep,
                aoci_occupancy=None if occupancy is None else occupancy[k],
                delivery_counts=None if deliveries is None else deliveries[k],
                change_counts=None if changes is None else changes[k],
                update_rate=float(rate.mean()),
            )
        )
    return out


def simulate(params: SystemParams, model: ProcessModel, spec: PolicySpec, config: SimConfig,
             diagnostics: bool = False) -> SimStats:
    """Long-run averages of one policy over ``config.replications`` seeded runs.

    ``diagnostics=True`` also collects the AoCI occupancy histogram and, per
    AoI level at delivery, the number of deliveries and content changes.
    """
    return _run(params, model, [spec], config, np.random.SeedSequence(config.seed), diagnostics)[0]


def compare_policies(params: SystemParams, model: ProcessModel, specs, config: SimConfig,
                     common_random_numbers: bool = True, diagnostics: bool = False) -> list[SimStats]:
    """Simulate several policies; with common random numbers they share every draw."""
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("compare_policies needs at least two policies")
    if common_random_numbers:
        return _run(params, model, specs, config, np.random.SeedSequence(config.seed), diagnostics)
    roots = np.random.SeedSequence(config.seed).spawn(len(specs))
    return [_run(params, model, [s], config, r, diagnostics)[0] for s, r in zip(specs, roots)]


@dataclass(frozen=True)
class Update:
    index: int
    generated: int  # g_i
    delivered: int  # d_i
    content: int  # Y_i


@dataclass
class TraceRecord:
    t: int
    X: int
    a: int
    h: int | None  # channel outcome, only when a = 1
    D: int | None  # content change, only on delivery
    aoci: int
    aoi: int
    # bookkeeping reconstructed from the delivery log at the start of slot t
    n: int
    m: int | None
    U: int
    U_prime: int
    aoci_def: int
    aoi_def: int


@dataclass
class Trace:
    records: list[TraceRecord]
    updates: list[Update]

    def consistent(self) -> bool:
        return all(r.aoci == r.aoci_def and r.aoi == r.aoi_def for r in self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            write_trace_csv(self, fh)


def write_trace_csv(tr: Trace, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "X", "a", "h", "D", "Delta", "delta"])
    for r in tr.records:
        w.writerow([r.t, r.X + 1, r.a, "" if r.h is None else r.h, "" if r.D is None else r.D, r.aoci, r.aoi])


def _reconstruct(updates: list[Update], delivered: list[int], t: int, cap_d: int, cap_a: int):
    """AoI and AoCI at the start of slot ``t`` from the delivery log alone.

    ``updates`` is ordered by delivery instant (one delivery per slot at most),
    which makes the max/min searches bisections.
    """
    n = bisect.bisect_right(delivered, t) - 1  # n(t) = max{i : d_i <= t}
    latest = updates[n]
    U = latest.generated
    m = None  # m(t) = max{j : Y_j != Y_n, d_j <= d_n}
    for j in range(n - 1, -1, -1):
        if updates[j].content != latest.content:
            m = j
            break
    # U'(t) = min{g_k : d_m < d_k <= d_n}
    first = 0 if m is None else bisect.bisect_right(delivered, updates[m].delivered)
    U_prime = min(u.generated for u in updates[first : n + 1])
    return n, m, U, U_prime, min(t - U_prime, cap_d), min(t - U, cap_a)


def trace(params: SystemParams, model: ProcessModel, spec: PolicySpec, horizon: int, seed: int = 0) -> Trace:
    """Slot-by-slot record of one run with full update bookkeeping.

    The AoCI/AoI are carried forward incrementally and, independently,
    recomputed from the generation/delivery/content log; both are stored on
    every record so :meth:`Trace.consistent` can compare them.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    cap_d, cap_a = params.delta_cap, params.aoi_cap
    streams = _Streams(np.random.SeedSequence(seed), 1)
    prev = min(int(streams.initial()[0] * model.M), model.M - 1)
    updates = [Update(0, -1, 0, prev)]
    delivered = [0]
    y = prev
    x = prev
    s = MdpState(1, 1)
    records = []
    t = 0
    while t < horizon:
        n_chunk = min(CHUNK, horizon - t)
        u_chain, u_chan = streams.next_chunk(n_chunk)
        for i in range(n_chunk):
            x = min(int(np.searchsorted(model.cdf[x], u_chain[0, i], side="right")), model.M - 1)
            a = decide(spec, s, x != y)
            h = D = None
            if a:
                h = int(u_chan[0, i] < params.p_s)
                if h:
                    D = int(x != y)
            n, m, U, Up, d_def, a_def = _reconstruct(updates, delivered, t, cap_d, cap_a)
            records.append(TraceRecord(t, x, a, h, D, s.aoci, s.aoi, n, m, U, Up, d_def, a_def))
            if h:
                updates.append(Update(len(updates), t, t + 1, x))
                delivered.append(t + 1)
                y = x
                s = MdpState(1 if D else min(s.aoci + 1, cap_d), 1)
            else:
                s = MdpState(min(s.aoci + 1, cap_d), min(s.aoi + 1, cap_a))
            t += 1
    return Trace(records, updates)
