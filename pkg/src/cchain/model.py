"""Circular Coulomb chain with nearest and next-to-nearest neighbour terms.

Spacings ``y_1..y_N`` live in (0, 1] and the unnormalized Gibbs weight is

    exp(-sum_i [beta / y_i + gamma / (y_i + y_{i+1})])

with indices taken modulo N.  The same weight factorizes into the two-point
kernel ``Q(x, y) = exp(-beta/(2x) - beta/(2y) - gamma/(x+y))`` applied to each
circular edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Public index convention: cluster starts and index sets are 1-based (site 1 is
# the first spacing).  Array positions are ``index - INDEX_BASE``.  Every
# conversion in the package goes through this constant.
INDEX_BASE = 1


class DomainError(ValueError):
    """A spacing outside (0, 1] was supplied (zero spacing has infinite energy)."""


@dataclass(frozen=True)
class ModelParams:
    beta: float
    gamma: float

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must satisfy beta > 0, got {self.beta!r}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must satisfy gamma >= 0, got {self.gamma!r}")


def _check_spacings(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)) or np.any(y > 1):
        raise DomainError("spacings must lie in (0, 1]")
    return y


@dataclass(frozen=True)
class ChainState:
    """One spacing configuration on the circle."""

    spacings: np.ndarray = field(repr=False)

    def __post_init__(self):
        y = _check_spacings(self.spacings)
        if y.ndim != 1 or y.size < 3:
            raise ValueError("a chain state needs a 1-d vector of at least 3 spacings")
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "spacings", y)

    @property
    def n(self) -> int:
        return self.spacings.size

    def __eq__(self, other):
        if not isinstance(other, ChainState):
            return NotImplemented
        return np.array_equal(self.spacings, other.spacings)

    __hash__ = None


@dataclass(frozen=True)
class IndexCluster:
    """Consecutive circular index set ``{start, ..., start + len - 1} mod n``."""

    start: int
    len: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 1 <= self.len <= self.n:
            raise ValueError(f"cluster length must be in [1, {self.n}], got {self.len}")
        if not INDEX_BASE <= self.start < INDEX_BASE + self.n:
            raise ValueError(f"cluster start {self.start} outside 1..{self.n}")

    def offsets(self) -> np.ndarray:
        """Array positions covered by the cluster, in circular order."""
        return (self.start - INDEX_BASE + np.arange(self.len)) % self.n

    def indices(self) -> list[int]:
        return [int(i) + INDEX_BASE for i in self.offsets()]

    def shifted(self, by: int) -> "IndexCluster":
        start = (self.start - INDEX_BASE + by) % self.n + INDEX_BASE
        return IndexCluster(start, self.len, self.n)


def q_eval(params: ModelParams, x, y):
    """Two-point kernel ``exp(-beta/(2x) - beta/(2y) - gamma/(x+y))``.

    Broadcasts over array arguments.
    """
    x = _check_spacings(x)
    y = _check_spacings(y)
    out = np.exp(-params.beta / (2 * x) - params.beta / (2 * y) - params.gamma / (x + y))
    return float(out) if out.ndim == 0 else out


def circular_energy(params: ModelParams, state: ChainState) -> float:
    y = state.spacings
    y_next = np.roll(y, -1)
    return float(np.sum(params.beta / y + params.gamma / (y + y_next)))


def log_q_product(params: ModelParams, state: ChainState) -> float:
    """Sum of ``log Q(y_i, y_{i+1})`` around the circle (per-edge split form)."""
    y = state.spacings
    y_next = np.roll(y, -1)
    return float(np.sum(-params.beta / (2 * y) - params.beta / (2 * y_next) - params.gamma / (y + y_next)))


def cluster_gaps(i_cluster: IndexCluster, j_cluster: IndexCluster) -> tuple[int, int]:
    """Sizes of the two circular gaps, (I -> J, J -> I), walking forward."""
    if i_cluster.n != j_cluster.n:
        raise ValueError("clusters live on circles of different size")
    n = i_cluster.n
    if set(i_cluster.offsets().tolist()) & set(j_cluster.offsets().tolist()):
        raise ValueError("clusters overlap")
    i_end = (i_cluster.start - INDEX_BASE + i_cluster.len) % n
    j_start = j_cluster.start - INDEX_BASE
    forward = (j_start - i_end) % n
    backward = n - i_cluster.len - j_cluster.len - forward
    return forward, backward


def cluster_distance(i_cluster: IndexCluster, j_cluster: IndexCluster) -> int:
    return min(cluster_gaps(i_cluster, j_cluster))


def sample_free_site(beta: float, size, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the density proportional to exp(-beta / y) on (0, 1].

    With s = 1/y the target is exp(-beta s) / s^2 on [1, inf): propose
    s = 1 + Exp(beta) and accept with probability 1 / s^2.
    """
    out = np.empty(size, dtype=float)
    flat = out.reshape(-1)
    todo = np.arange(flat.size)
    while todo.size:
        s = 1.0 + rng.exponential(1.0 / beta, todo.size)
        ok = rng.random(todo.size) * s * s < 1.0
        flat[todo[ok]] = 1.0 / s[ok]
        todo = todo[~ok]
    return out
