"""Finite Markov chain of the monitored physical process.

States are indexed ``0 .. M-1``. The chain is required to be doubly stochastic
and to have a state-independent return probability ``p_r(d) = P^d[i, i]``,
which is the only property of the chain the update MDP depends on.
"""

from __future__ import annotations

import numpy as np

STOCHASTIC_TOL = 1e-12
DIAGONAL_TOL = 1e-9


class ProcessModelError(ValueError):
    pass


class NotStochastic(ProcessModelError):
    pass


class NotUniformStationary(ProcessModelError):
    pass


class StateDependentReturn(ProcessModelError):
    pass


class ProcessModel:
    """An immutable ``M``-state chain with cached return probabilities.

    Use :func:`build_equiprobable`, :func:`build_random_walk` or
    :func:`build_custom` rather than calling the constructor directly.
    """

    def __init__(self, P, kind: str = "custom", p_c: float | None = None):
        P = np.array(P, dtype=float)
        _validate(P)
        P.setflags(write=False)
        self.P = P
        self.M = P.shape[0]
        self.kind = kind
        self.p_c = p_c
        self._cdf = np.cumsum(P, axis=1)
        self._cdf[:, -1] = 1.0
        self._cdf.setflags(write=False)
        self._pr = np.empty(0)

    def __repr__(self):
        return f"ProcessModel(kind={self.kind!r}, M={self.M})"

    @property
    def cdf(self) -> np.ndarray:
        """Row-wise cumulative transition probabilities (last column exactly 1)."""
        return self._cdf

    def return_probabilities(self, n: int) -> np.ndarray:
        """``p_r(1), ..., p_r(n)`` as a read-only array of length ``n``.

        Raises :class:`StateDependentReturn` if the diagonal of some ``P^d``,
        ``d <= n``, is not constant.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        if len(self._pr) < n:
            self._pr = _build_pr_table(self.P, n)
            self._pr.setflags(write=False)
        return self._pr[:n]

    def to_config(self) -> dict:
        if self.kind == "equiprobable":
            return {"kind": "equiprobable", "M": self.M}
        if self.kind == "random_walk":
            return {"kind": "random_walk", "M": self.M, "p_c": self.p_c}
        return {"kind": "custom", "M": self.M, "matrix": self.P.tolist()}


def _validate(P):
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotStochastic(f"transition matrix must be square, got shape {P.shape}")
    if P.shape[0] < 2:
        raise NotStochastic("the process needs at least M=2 states")
    if not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0:
        raise NotStochastic("entries must lie in [0, 1]")
    rows = P.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > STOCHASTIC_TOL:
        raise NotStochastic(f"row sums deviate from 1: {rows}")
    cols = P.sum(axis=0)
    if np.max(np.abs(cols - 1.0)) > STOCHASTIC_TOL:
        raise NotUniformStationary(f"column sums deviate from 1: {cols}")


def _build_pr_table(P, n):
    # Direct powering keeps every P^d available for the diagonal check;
    # each step is one M x M product so n <= 1e4 stays cheap.
    out = np.empty(n)
    Pk = np.eye(P.shape[0])
    for d in range(n):
        Pk = Pk @ P
        diag = np.diag(Pk)
        if diag.max() - diag.min() > DIAGONAL_TOL:
            raise StateDependentReturn(
                f"diagonal of P^{d + 1} is not constant (spread {diag.max() - diag.min():.3g})"
            )
        out[d] = min(max(diag.mean(), 0.0), 1.0)
    return out


def matrix_power(P, d: int) -> np.ndarray:
    """``P^d`` by repeated squaring."""
    P = np.asarray(P, dtype=float)
    result = np.eye(P.shape[0])
    base = P.copy()
    while d > 0:
        if d & 1:
            result = result @ base
        base = base @ base
        d >>= 1
    return result


def build_equiprobable(M: int) -> ProcessModel:
    """Every transition has probability ``1/M``, so ``p_r(d) = 1/M`` for all ``d``."""
    if int(M) != M or M < 2:
        raise ProcessModelError(f"M must be an integer >= 2, got {M}")
    M = int(M)
    return ProcessModel(np.full((M, M), 1.0 / M), kind="equiprobable", p_c=1.0 / M)


def build_random_walk(M: int, p_c: float) -> ProcessModel:
    """Circular random walk: ``i -> i+1`` w.p. ``p_c`` and ``i -> i-1`` w.p. ``1-p_c``.

    With ``M`` even the chain has period 2, so ``p_r(d) = 0`` for odd ``d``.
    """
    if int(M) != M or M < 2 or M % 2:
        raise ProcessModelError(f"random walk needs an even M >= 2, got {M}")
    if not 0.0 < p_c < 1.0:
        raise ProcessModelError(f"p_c must lie in (0, 1), got {p_c}")
    M = int(M)
    P = np.zeros((M, M))
    for i in range(M):
        P[i, (i + 1) % M] += p_c
        P[i, (i - 1) % M] += 1.0 - p_c
    return ProcessModel(P, kind="random_walk", p_c=float(p_c))


def build_custom(P, check_up_to: int | None = None) -> ProcessModel:
    """Wrap an arbitrary doubly stochastic matrix.

    If ``check_up_to`` is given the return-probability table is built
    immediately, so a :class:`StateDependentReturn` surfaces here rather than
    at first use.
    """
    model = ProcessModel(P)
    if check_up_to is not None:
        model.return_probabilities(check_up_to)
    return model


def return_probability(model: ProcessModel, delta: int) -> float:
    if delta < 1:
        raise ValueError("return probability is defined for delta >= 1")
    return float(model.return_probabilities(delta)[delta - 1])


def sample_next_state(model: ProcessModel, x: int, u: float) -> int:
    """Inverse-CDF draw from row ``x`` of ``P`` using the uniform ``u`` in [0, 1)."""
    return int(np.searchsorted(model.cdf[x], u, side="right"))


def build_model(spec: dict) -> ProcessModel:
    """Build a model from its config record (``kind``, ``M``, ``p_c``, ``matrix``)."""
    kind = spec.get("kind")
    if kind == "equiprobable":
        return build_equiprobable(spec["M"])
    if kind == "random_walk":
        return build_random_walk(spec["M"], spec["p_c"])
    if kind == "custom":
        model = build_custom(spec["matrix"])
        if "M" in spec and spec["M"] != model.M:
            raise ProcessModelError(f"M={spec['M']} does not match the {model.M}x{model.M} matrix")
        return model
    raise ProcessModelError(f"unknown model kind {kind!r}")
