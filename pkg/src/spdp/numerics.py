"""Log-space special functions and random draws shared by the samplers.

Generalized Stirling numbers grow like ``e**1000`` for realistic cell sizes,
so everything here lives in log space.  ``-inf`` encodes an exact zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import CacheOverflowError, DegenerateDistributionError

NEG_INF = -np.inf


class StirlingCache:
    """Table of ``log S^N_{M,a}`` for ``0 <= M <= N <= max_n``.

    Built bottom-up from ``S^{N+1}_M = S^N_{M-1} + (N - M a) S^N_M`` with
    ``S^0_0 = 1``.  The table is read-only after construction.

    Parameters
    ----------
    discount : float
        The PDP discount ``a`` in ``[0, 1)``.
    max_n : int
        Largest customer count ``N`` that may be queried.
    """

    def __init__(self, discount: float, max_n: int):
        if not 0.0 <= discount < 1.0:
            raise ValueError(f"discount must be in [0, 1), got {discount}")
        if max_n < 0:
            raise ValueError("max_n must be non-negative")
        self.discount = float(discount)
        self.max_n = int(max_n)
        self.table = _build_log_stirling(self.discount, self.max_n)
        self.table.setflags(write=False)

    @property
    def max_m(self) -> int:
        return self.max_n

    def log(self, N: int, M: int) -> float:
        return stirling_log(self, N, M)

    def __repr__(self):
        return f"StirlingCache(discount={self.discount}, max_n={self.max_n})"


def _build_log_stirling(a: float, max_n: int) -> np.ndarray:
    table = np.full((max_n + 1, max_n + 1), NEG_INF)
    table[0, 0] = 0.0
    M = np.arange(max_n + 1)
    with np.errstate(divide="ignore"):
        for N in range(max_n):
            prev = table[N]
            # (N - M a) is positive for 1 <= M <= N; the M = 0 term only
            # multiplies S^N_0, which is zero for N >= 1.
            coef = np.log(np.maximum(N - M * a, 0.0))
            stay = coef + prev
            stay[~np.isfinite(prev)] = NEG_INF
            shift = np.empty_like(prev)
            shift[0] = NEG_INF
            shift[1:] = prev[:-1]
            table[N + 1] = np.logaddexp(shift, stay)
    return table


def stirling_log(cache: StirlingCache, N: int, M: int) -> float:
    """``log S^N_{M,a}``; ``-inf`` when the number is zero (e.g. ``M > N``)."""
    if N < 0 or M < 0:
        raise ValueError("N and M must be non-negative")
    if N > cache.max_n:
        raise CacheOverflowError(f"N={N} exceeds the cache bound {cache.max_n}")
    if M > N:
        return NEG_INF
    return float(cache.table[N, M])


def pochhammer_log(x: float, y: float, N: int) -> float:
    """``log prod_{n<N} (x + n y)``."""
    total = 0.0
    for n in range(N):
        f = x + n * y
        if f <= 0.0:
            raise ValueError(f"non-positive Pochhammer factor {f} at n={n}")
        total += math.log(f)
    return total


def normalize_log_weights(logw) -> np.ndarray:
    """Max-shifted exponential normalization of a log-weight vector."""
    logw = np.asarray(logw, dtype=np.float64)
    if logw.size == 0 or not np.any(logw > NEG_INF):
        raise DegenerateDistributionError("all log-weights are -inf")
    w = np.exp(logw - logw.max())
    return w / w.sum()


def sample_categorical(logw, rng: "RngStream") -> int:
    """Draw an index with probability ``normalize_log_weights(logw)``."""
    logw = np.asarray(logw, dtype=np.float64)
    if logw.size == 0 or not np.any(logw > NEG_INF):
        raise DegenerateDistributionError("all log-weights are -inf")
    return int(_categorical(logw, len(logw), rng.uniform()))


@dataclass
class RngStream:
    """Counter-based random stream.

    Draw ``j`` of stream ``(seed, stream)`` is a pure function of the triple,
    so streams can be replayed or handed to different workers without
    coordination.  An instance itself is single-owner (it carries a counter).
    """

    seed: int
    stream: int = 0
    counter: int = field(default=0, repr=False)

    def uniform(self) -> float:
        u = draw_uniform(np.uint64(self.seed & _MASK), np.uint64(self.stream & _MASK), np.uint64(self.counter))
        self.counter += 1
        return float(u)

    def integers(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)

    def generator(self) -> np.random.Generator:
        """A numpy generator seeded from this stream, for vectorized draws."""
        return np.random.default_rng([self.seed & _MASK, self.stream & _MASK, self.counter])

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


_MASK = (1 << 64) - 1


@njit(cache=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True)
def draw_uniform(seed, stream, counter):
    """Uniform double in ``[0, 1)`` keyed by ``(seed, stream, counter)``."""
    h = _mix64(seed + np.uint64(0x9E3779B97F4A7C15))
    h = _mix64(h ^ (stream * np.uint64(0xD1B54A32D192ED03) + np.uint64(0x632BE59BD9B4E019)))
    h = _mix64(h ^ (counter * np.uint64(0x8CB92BA72F3D8DD7) + np.uint64(0x2545F4914F6CDD1D)))
    return np.float64(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _categorical(logw, n, u):
    mx = -np.inf
    for j in range(n):
        if logw[j] > mx:
            mx = logw[j]
    total = 0.0
    for j in range(n):
        if logw[j] > -np.inf:
            total += np.exp(logw[j] - mx)
    target = u * total
    acc = 0.0
    last = -1
    for j in range(n):
        if logw[j] > -np.inf:
            acc += np.exp(logw[j] - mx)
            last = j
            if target < acc:
                return j
    return last
