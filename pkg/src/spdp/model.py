"""Shadow Poisson-Dirichlet topic model: state, exact blocked Gibbs, estimators.

Each group ``i`` draws its per-topic word distribution from a Pitman-Yor
process whose base measure is ``P^i @ phi0_k``.  The sampler keeps, for every
(group, topic, word) cell, the number of customers ``m``, the number of
tables ``t`` and the base word ``v`` each table was associated with.  One
Gibbs step jointly resamples ``(z, r, v)`` for a single token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels as kern
from .corpus import Corpus, FlatCorpus
from .errors import CacheOverflowError, DataError, IntegrityError
from .numerics import NEG_INF, RngStream, StirlingCache, pochhammer_log


# ---------------------------------------------------------------- parameters


@dataclass
class Hyperparameters:
    """Model hyperparameters.

    ``alpha`` is ``(I, K)`` (per-group doc-topic Dirichlet), ``beta`` is
    ``(V,)`` (base-measure Dirichlet), ``discount``/``concentration`` are
    ``(K,)``.  Use :meth:`symmetric` for the usual scalar setting.
    """

    alpha: np.ndarray
    beta: np.ndarray
    discount: np.ndarray
    concentration: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        self.beta = np.asarray(self.beta, dtype=np.float64).ravel()
        self.discount = np.asarray(self.discount, dtype=np.float64).ravel()
        self.concentration = np.asarray(self.concentration, dtype=np.float64).ravel()
        K = self.K
        if self.discount.shape != (K,) or self.concentration.shape != (K,):
            raise DataError("discount and concentration must have one entry per topic")
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise DataError("alpha and beta entries must be positive")
        if np.any(self.discount < 0) or np.any(self.discount >= 1):
            raise DataError("discount must lie in [0, 1)")
        if np.any(self.concentration <= 0):
            raise DataError("concentration must be positive")

    @classmethod
    def symmetric(
        cls,
        K: int,
        V: int,
        I: int,
        alpha: float = 0.1,
        beta: float = 0.1,
        discount: float = 0.7,
        concentration: float = 100.0,
    ) -> "Hyperparameters":
        return cls(
            alpha=np.full((I, K), alpha),
            beta=np.full(V, beta),
            discount=np.full(K, discount),
            concentration=np.full(K, concentration),
        )

    @property
    def K(self) -> int:
        return self.alpha.shape[1]

    @property
    def I(self) -> int:
        return self.alpha.shape[0]

    @property
    def V(self) -> int:
        return len(self.beta)


class TransformMatrix:
    """Per-group sparse row-stochastic ``V x V`` matrices ``P^i``.

    Stored as one CSR structure over rows ``i*V + w``.  Rows must sum to 1.
    The per-group estimates are proper distributions only when columns sum
    to 1 as well; :attr:`doubly_stochastic` reports whether they do.
    """

    def __init__(self, I: int, V: int, rows: Sequence[Sequence[dict[int, float]]] | None = None, s_max: int | None = None):
        self.I = I
        self.V = V
        if rows is None:
            self.identity = True
            self.ptr = np.arange(I * V + 1, dtype=np.int64)
            self.col = np.tile(np.arange(V, dtype=np.int32), I)
            self.val = np.ones(I * V)
        else:
            ptr, col, val = [0], [], []
            for i in range(I):
                for w in range(V):
                    row = rows[i][w]
                    items = sorted((int(c), float(x)) for c, x in row.items() if x > 0)
                    if not items:
                        raise DataError(f"row {w} of P^{i} has no positive entries")
                    total = sum(x for _, x in items)
                    if abs(total - 1.0) > 1e-9:
                        raise DataError(f"row {w} of P^{i} sums to {total}, not 1")
                    for c, x in items:
                        if not 0 <= c < V:
                            raise DataError(f"column {c} out of range in P^{i}")
                        col.append(c)
                        val.append(x)
                    ptr.append(len(col))
            self.ptr = np.asarray(ptr, dtype=np.int64)
            self.col = np.asarray(col, dtype=np.int32)
            self.val = np.asarray(val, dtype=np.float64)
            self.identity = bool(
                np.all(np.diff(self.ptr) == 1)
                and np.array_equal(self.col, np.tile(np.arange(V, dtype=np.int32), I))
                and np.all(self.val == 1.0)
            )
        with np.errstate(divide="ignore"):
            self.logval = np.log(self.val)
        colsum = np.bincount(
            np.repeat(np.arange(I * V) // V, np.diff(self.ptr)) * V + self.col, weights=self.val, minlength=I * V
        )
        self.doubly_stochastic = bool(np.all(np.abs(colsum - 1.0) <= 1e-9))
        self.s_max = int(np.diff(self.ptr).max()) if len(self.ptr) > 1 else 1
        if s_max is not None and self.s_max > s_max:
            raise DataError(f"a row has {self.s_max} nonzeros, more than s_max={s_max}")

    @classmethod
    def identity_for(cls, I: int, V: int) -> "TransformMatrix":
        return cls(I, V)

    @classmethod
    def from_dense(cls, mats: Sequence[np.ndarray]) -> "TransformMatrix":
        mats = [np.asarray(m_, dtype=np.float64) for m_ in mats]
        V = mats[0].shape[0]
        rows = [[{c: x for c, x in enumerate(mat[w]) if x > 0} for w in range(V)] for mat in mats]
        return cls(len(mats), V, rows)

    def row(self, i: int, w: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.ptr[i * self.V + w], self.ptr[i * self.V + w + 1]
        return self.col[lo:hi], self.val[lo:hi]

    def entry(self, i: int, w: int, v: int) -> float:
        cols, vals = self.row(i, w)
        hit = np.nonzero(cols == v)[0]
        return float(vals[hit[0]]) if len(hit) else 0.0

    def dense(self, i: int) -> np.ndarray:
        out = np.zeros((self.V, self.V))
        for w in range(self.V):
            cols, vals = self.row(i, w)
            out[w, cols] = vals
        return out

    def apply(self, i: int, vec: np.ndarray) -> np.ndarray:
        """``P^i @ vec`` for a length-``V`` vector (or ``(K, V)`` rows)."""
        lo = i * self.V
        sl = slice(self.ptr[lo], self.ptr[lo + self.V])
        rows = np.repeat(np.arange(self.V), np.diff(self.ptr[lo : lo + self.V + 1]))
        vec = np.asarray(vec)
        if vec.ndim == 1:
            return np.bincount(rows, weights=self.val[sl] * vec[self.col[sl]], minlength=self.V)
        out = np.zeros_like(vec, dtype=np.float64)
        for k in range(vec.shape[0]):
            out[k] = np.bincount(rows, weights=self.val[sl] * vec[k, self.col[sl]], minlength=self.V)
        return out


def stirling_caches(hyper: Hyperparameters, max_n: int) -> tuple[list[StirlingCache], np.ndarray, np.ndarray]:
    """One cache per distinct discount, the stacked tables, and topic->cache map."""
    distinct = sorted(set(hyper.discount.tolist()))
    caches = [StirlingCache(a, max_n) for a in distinct]
    topic_cache = np.asarray([distinct.index(a) for a in hyper.discount.tolist()], dtype=np.int32)
    stacked = np.stack([c.table for c in caches])
    return caches, stacked, topic_cache


def required_cache_size(corpus: Corpus) -> int:
    """Largest per-(group, word) token count plus two."""
    flat = corpus.flat()
    if flat.N == 0:
        return 2
    counts = np.bincount(flat.group_of.astype(np.int64) * flat.V + flat.words, minlength=flat.I * flat.V)
    return int(counts.max()) + 2


# ---------------------------------------------------------------- state


class Choice(NamedTuple):
    topic: int
    table: int  # r: 1 if the token opens a new table
    v: int = -1


class RemovalRecord(NamedTuple):
    position: int
    choice: Choice  # the assignment the token had before removal
    stored_r: int  # the indicator stored at the position before removal
    sampled_r: int
    table_index: int  # -1 when no table was closed


@dataclass
class ModelEstimate:
    theta: list[np.ndarray]  # per group, (D_i, K)
    phi0: np.ndarray  # (K, V)
    phi_group: np.ndarray  # (I, K, V)
    topic_weight: np.ndarray  # (I, K)


class CountState:
    """Full mutable Gibbs state.

    The authoritative variables are ``z``, ``r`` and the table lists; all
    counts can be regenerated from them (:meth:`rebuild_counts`).  Counts are
    dense numpy arrays, the table lists a pooled linked list (see
    :mod:`spdp._kernels`).
    """

    def __init__(self, corpus: Corpus, hyper: Hyperparameters, P: TransformMatrix, cache_size: int | None = None):
        if hyper.V != corpus.V or hyper.I != corpus.I:
            raise DataError(
                f"hyperparameters are sized for I={hyper.I}, V={hyper.V}; corpus has I={corpus.I}, V={corpus.V}"
            )
        if P.I != corpus.I or P.V != corpus.V:
            raise DataError("transformation matrix does not match the corpus shape")
        self.corpus = corpus
        self.flat: FlatCorpus = corpus.flat()
        self.hyper = hyper
        self.P = P
        self.K = K = hyper.K
        self.I = I = corpus.I
        self.V = V = corpus.V
        N, D = self.flat.N, self.flat.D
        self.z = np.zeros(N, dtype=np.int32)
        self.r = np.zeros(N, dtype=np.uint8)
        self.n = np.zeros((D, K), dtype=np.int64)
        self.m = np.zeros((I, K, V), dtype=np.int64)
        self.t = np.zeros((I, K, V), dtype=np.int64)
        self.mk = np.zeros((I, K), dtype=np.int64)
        self.tk = np.zeros((I, K), dtype=np.int64)
        self.Q = np.zeros((K, V), dtype=np.int64)
        self.T = np.zeros(K, dtype=np.int64)
        cap = max(N, 1)
        self.head = np.full(I * K * V, -1, dtype=np.int32)
        self.tail = np.full(I * K * V, -1, dtype=np.int32)
        self.tab_v = np.zeros(cap, dtype=np.int32)
        self.tab_next = np.full(cap, -1, dtype=np.int32)
        self.free = np.arange(cap - 1, -1, -1, dtype=np.int32)
        self.free_top = np.array([cap], dtype=np.int64)
        size = cache_size if cache_size is not None else required_cache_size(corpus)
        self.caches, self.stir, self.topic_cache = stirling_caches(hyper, size)

    # -- plumbing --------------------------------------------------------

    def _corpus_args(self):
        f = self.flat
        return (f.words, f.doc_of, f.group_of, self.z, self.r, self.K, self.V)

    def _count_args(self):
        return (
            self.n.reshape(-1), self.m.reshape(-1), self.t.reshape(-1),
            self.mk.reshape(-1), self.tk.reshape(-1), self.Q.reshape(-1), self.T,
        )

    def _pool_args(self):
        return (self.head, self.tail, self.tab_v, self.tab_next, self.free, self.free_top)

    def _param_args(self):
        h = self.hyper
        return (
            h.alpha.reshape(-1), h.beta, float(h.beta.sum()), h.discount, h.concentration,
            self.P.ptr, self.P.col, self.P.logval, self.P.s_max,
        )

    def _cell(self, i: int, k: int, w: int) -> int:
        return (i * self.K + k) * self.V + w

    @property
    def N(self) -> int:
        return self.flat.N

    # -- views ------------------------------------------------------------

    def v_list(self, i: int, k: int, w: int) -> list[int]:
        out = []
        j = self.head[self._cell(i, k, w)]
        while j >= 0:
            out.append(int(self.tab_v[j]))
            j = self.tab_next[j]
        return out

    def v_lists(self) -> dict[tuple[int, int, int], list[int]]:
        """Non-empty table lists keyed by ``(i, k, w)`` in cell order."""
        out = {}
        for c in np.nonzero(self.head >= 0)[0]:
            i, rest = divmod(int(c), self.K * self.V)
            k, w = divmod(rest, self.V)
            out[(i, k, w)] = self.v_list(i, k, w)
        return out

    def q(self) -> dict[tuple[int, int, int], dict[int, int]]:
        """Sparse ``q[i,k,w][v]``: tables of cell (i,k,w) associated with v."""
        out = {}
        for key, vs in self.v_lists().items():
            cnt: dict[int, int] = {}
            for v in vs:
                cnt[v] = cnt.get(v, 0) + 1
            out[key] = cnt
        return out

    def table_lengths(self) -> np.ndarray:
        out = np.zeros(self.I * self.K * self.V, dtype=np.int64)
        kern.pool_lengths(self.head, self.tab_next, out)
        return out.reshape(self.I, self.K, self.V)

    def copy(self) -> "CountState":
        new = object.__new__(CountState)
        new.__dict__.update(self.__dict__)
        for name in ("z", "r", "n", "m", "t", "mk", "tk", "Q", "T", "head", "tail", "tab_v", "tab_next", "free", "free_top"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def assignments_equal(self, other: "CountState") -> bool:
        """Same ``z``, ``r`` and table lists (the serialized variables)."""
        return (
            np.array_equal(self.z, other.z)
            and np.array_equal(self.r, other.r)
            and self.v_lists() == other.v_lists()
        )

    # -- rebuilding -------------------------------------------------------

    def set_tables(self, tables: dict[tuple[int, int, int], Sequence[int]]) -> None:
        """Replace every table list and derive ``t``, ``tk``, ``Q``, ``T``."""
        kern.pool_clear(self.head, self.tail, self.tab_next, self.free, self.free_top)
        self.t[:] = 0
        self.Q[:] = 0
        for (i, k, w), vs in sorted(tables.items()):
            cell = self._cell(i, k, w)
            for v in vs:
                kern.pool_append(cell, int(v), *self._pool_args())
                self.Q[k, v] += 1
            self.t[i, k, w] = len(vs)
        self.tk[:] = self.t.sum(axis=2)
        self.T[:] = self.t.sum(axis=(0, 2))

    def rebuild_counts(self) -> None:
        """Regenerate ``n``, ``m`` from ``z`` and the table sums from the lists."""
        f = self.flat
        K, V = self.K, self.V
        self.n[:] = np.bincount(
            f.doc_of.astype(np.int64) * K + self.z, minlength=f.D * K
        ).reshape(f.D, K)
        self.m[:] = np.bincount(
            (f.group_of.astype(np.int64) * K + self.z) * V + f.words, minlength=self.I * K * V
        ).reshape(self.I, K, V)
        self.mk[:] = self.m.sum(axis=2)
        self.t[:] = self.table_lengths()
        self.tk[:] = self.t.sum(axis=2)
        kern.pool_q(self.head, self.tab_next, self.tab_v, self.K, self.V, self.Q.reshape(-1))
        self.T[:] = self.t.sum(axis=(0, 2))

    # -- consistency ------------------------------------------------------

    def consistency_violations(self) -> list[str]:
        """Every broken invariant, as human-readable strings (empty if valid)."""
        f = self.flat
        K, V, I = self.K, self.V, self.I
        bad = []
        if np.any(self.z < 0) or np.any(self.z >= K):
            return ["z: topic id out of range"]
        n = np.bincount(f.doc_of.astype(np.int64) * K + self.z, minlength=f.D * K).reshape(f.D, K)
        if not np.array_equal(n, self.n):
            bad.append("n: doc-topic counts differ from a recount of z")
        if not np.array_equal(self.n.sum(axis=1), f.doc_lengths()):
            bad.append("n: row sums differ from document lengths")
        cells = (f.group_of.astype(np.int64) * K + self.z) * V + f.words
        m = np.bincount(cells, minlength=I * K * V).reshape(I, K, V)
        if not np.array_equal(m, self.m):
            bad.append("m: cell counts differ from a recount of z")
        t = self.t
        if np.any(t < 0) or np.any(t > self.m):
            bad.append("t: table count outside [0, m]")
        if np.any((self.m >= 1) & (t < 1)):
            bad.append("t: occupied cell without a table")
        if not np.array_equal(self.table_lengths(), t):
            bad.append("v_lists: list lengths differ from t")
        rsum = np.bincount(cells, weights=self.r.astype(np.int64), minlength=I * K * V).reshape(I, K, V)
        if not np.array_equal(rsum.astype(np.int64), t):
            bad.append("r: table indicators per cell do not sum to t")
        Q = np.zeros((K, V), dtype=np.int64)
        kern.pool_q(self.head, self.tab_next, self.tab_v, K, V, Q.reshape(-1))
        c = kern.pool_support_ok(self.head, self.tab_next, self.tab_v, K, V, self.P.ptr, self.P.col)
        if c >= 0:
            i, rest = divmod(int(c), K * V)
            bad.append(f"v_lists: cell {(i, *divmod(rest, V))} has a table outside the support of its P row")
        if not np.array_equal(Q, self.Q):
            bad.append("Q: cached table-association sums differ from v_lists")
        if not np.array_equal(self.mk, self.m.sum(axis=2)):
            bad.append("mk: cached sums differ from m")
        if not np.array_equal(self.tk, t.sum(axis=2)):
            bad.append("tk: cached sums differ from t")
        if not np.array_equal(self.T, t.sum(axis=(0, 2))):
            bad.append("T: cached sums differ from t")
        return bad

    def is_consistent(self) -> bool:
        return not self.consistency_violations()

    def check(self) -> None:
        bad = self.consistency_violations()
        if bad:
            raise IntegrityError("; ".join(bad))


# ---------------------------------------------------------------- operations


def init_state(
    corpus: Corpus,
    hyper: Hyperparameters,
    P: TransformMatrix | None = None,
    rng: RngStream | int = 0,
    cache_size: int | None = None,
) -> CountState:
    """Uniform random topics followed by one generative seating pass."""
    if corpus.num_tokens == 0:
        raise DataError("cannot initialize a sampler on an empty corpus")
    P = P if P is not None else TransformMatrix.identity_for(corpus.I, corpus.V)
    state = CountState(corpus, hyper, P, cache_size)
    seed = rng.seed if isinstance(rng, RngStream) else int(rng)
    h = hyper
    kern.init_state(
        np.uint64(seed), *state._corpus_args(), *state._count_args(), *state._pool_args(),
        h.beta, float(h.beta.sum()), h.discount, h.concentration,
        P.ptr, P.col, P.logval, P.s_max,
    )
    return state


def remove_word(state: CountState, position: int, rng: RngStream) -> RemovalRecord:
    """Take one token out of the counts (Bernoulli ``t/m`` table closing)."""
    p = int(position)
    i, w, k = int(state.flat.group_of[p]), int(state.flat.words[p]), int(state.z[p])
    m, t = state.m[i, k, w], state.t[i, k, w]
    if not (1 <= t <= m):
        raise IntegrityError(f"cell (i={i}, k={k}, w={w}) has t={t}, m={m}")
    stored = int(state.r[p])
    rr, idx, v = kern.remove_at(
        p, rng.uniform(), rng.uniform(), *state._corpus_args(), *state._count_args(), *state._pool_args()
    )
    return RemovalRecord(p, Choice(k, int(rr), int(v)), stored, int(rr), int(idx))


def compute_proposals(state: CountState, position: int) -> tuple[np.ndarray, list[Choice]]:
    """Log-weights of every ``(k, r, v)`` completion for a removed token."""
    p = int(position)
    f = state.flat
    K, V = state.K, state.V
    i, d, w = int(f.group_of[p]), int(f.doc_of[p]), int(f.words[p])
    s = state.P.s_max
    loc = [np.empty(K, np.int64) for _ in range(6)]
    loc_Q = np.empty(K * s, np.int64)
    kern.gather_local(d, i, w, K, V, *state._count_args(), state.P.ptr, state.P.col, *loc, loc_Q)
    mx = int(loc[1].max())
    if mx + 1 > state.stir.shape[1] - 1:
        raise CacheOverflowError(f"cell size {mx + 1} exceeds the Stirling cache bound {state.stir.shape[1] - 1}")
    logw = np.empty(K * (1 + s))
    h = state.hyper
    cnt = kern.fill_proposals(
        logw, K, V, i, w, h.alpha.reshape(-1), h.beta, float(h.beta.sum()), h.discount, h.concentration,
        state.P.ptr, state.P.col, state.P.logval, *loc, loc_Q, state.stir, state.topic_cache,
    )
    logw = logw[:cnt]
    choices = [Choice(*map(int, kern.decode_choice(j, K, V, i, w, state.P.ptr, state.P.col))) for j in range(cnt)]
    return logw, choices


def add_word(state: CountState, position: int, choice: Choice | RemovalRecord) -> None:
    """Put a removed token back.

    Passing the :class:`RemovalRecord` returned by :func:`remove_word`
    restores the exact prior state, table order and stored indicator included.
    """
    p = int(position)
    f = state.flat
    i, w = int(f.group_of[p]), int(f.words[p])
    record = choice if isinstance(choice, RemovalRecord) else None
    if record is not None:
        choice = record.choice
    k, rr, v = int(choice.topic), int(choice.table), int(choice.v)
    if not 0 <= k < state.K:
        raise DataError(f"topic {k} out of range")
    if rr == 0:
        if state.m[i, k, w] == 0 or state.t[i, k, w] == 0:
            raise DataError(f"cannot join a table in cell (i={i}, k={k}, w={w}): it has none")
        v = -1
    else:
        cols, _ = state.P.row(i, w)
        if v not in cols:
            raise DataError(f"v={v} is outside the support of row {w} of P^{i}")
    if record is not None and rr == 1:
        cell = state._cell(i, k, w)
        kern.add_at(p, k, 0, -1, *state._corpus_args(), *state._count_args(), *state._pool_args())
        state.t[i, k, w] += 1
        state.tk[i, k] += 1
        state.Q[k, v] += 1
        state.T[k] += 1
        kern.pool_insert_at(cell, record.table_index, v, *state._pool_args())
    else:
        kern.add_at(p, k, rr, v, *state._corpus_args(), *state._count_args(), *state._pool_args())
    if record is not None:
        state.r[p] = record.stored_r


def corpus_order(state: CountState) -> np.ndarray:
    return np.arange(state.N, dtype=np.int64)


def gibbs_sweep(state: CountState, iteration: int, seed: int, order: np.ndarray | None = None) -> None:
    """One exact blocked Gibbs pass, then an exact redraw of the indicators.

    Random draws are keyed by ``(seed, iteration, visit index)`` so the sweep
    is reproducible and can be replayed on any visiting ``order``.
    """
    order = corpus_order(state) if order is None else np.asarray(order, dtype=np.int64)
    kern.sweep(
        order, np.uint64(seed), iteration, *state._corpus_args(), *state._count_args(),
        *state._pool_args(), *state._param_args(), state.stir, state.topic_cache,
    )
    reconcile_indicators(state, iteration, seed)


def reconcile_indicators(state: CountState, iteration: int, seed: int) -> int:
    f = state.flat
    return int(
        kern.reconcile_r(
            np.uint64(seed), iteration, f.words, f.group_of, state.z, state.r, state.K, state.V,
            state.m.reshape(-1), state.t.reshape(-1),
        )
    )


def _log_beta(x: np.ndarray, axis=-1) -> np.ndarray:
    return gammaln(x).sum(axis=axis) - gammaln(x.sum(axis=axis))


def _log_binom(n: np.ndarray, k: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def joint_log_prob(state: CountState) -> float:
    """``log p(W, Z, R, V)`` with the topic and base distributions integrated out."""
    h = state.hyper
    K = state.K
    f = state.flat
    if f.N == 0:
        return 0.0
    bad = [b for b in state.consistency_violations() if not b.startswith("r:")]
    if bad:
        raise IntegrityError("; ".join(bad))
    total = 0.0
    if not state.P.identity:
        for (i, k, w), vs in state.v_lists().items():
            for v in vs:
                total += math.log(state.P.entry(i, w, v))
    alpha_d = h.alpha[f.doc_group]
    total += float(np.sum(_log_beta(alpha_d + state.n) - _log_beta(alpha_d)))
    for k in range(K):
        a, b = h.discount[k], h.concentration[k]
        for i in range(state.I):
            total += pochhammer_log(b, a, int(state.tk[i, k])) - pochhammer_log(b, 1.0, int(state.mk[i, k]))
        total += float(_log_beta(h.beta + state.Q[k]) - _log_beta(h.beta))
    occ = np.nonzero(state.m)
    m = state.m[occ]
    t = state.t[occ]
    cache_idx = state.topic_cache[occ[1]]
    if np.any(m >= state.stir.shape[1]):
        raise CacheOverflowError("cell size exceeds the Stirling cache bound")
    total += float(np.sum(state.stir[cache_idx, m, t] - _log_binom(m, t)))
    return total


def estimate(state: CountState) -> ModelEstimate:
    """Posterior-mean point estimates of theta, phi0 and the per-group phi."""
    h = state.hyper
    f = state.flat
    alpha_d = h.alpha[f.doc_group]
    th = state.n + alpha_d
    th = th / th.sum(axis=1, keepdims=True)
    theta = []
    lengths = f.doc_lengths()
    tw = np.zeros((state.I, state.K))
    for i in range(state.I):
        sel = f.doc_group == i
        theta.append(th[sel])
        if sel.any():
            tw[i] = (th[sel] * lengths[sel, None]).sum(axis=0) / lengths[sel].sum()
        else:
            tw[i] = h.alpha[i] / h.alpha[i].sum()
    phi0 = (h.beta[None, :] + state.Q) / (h.beta.sum() + state.Q.sum(axis=1, keepdims=True))
    a = h.discount[None, :, None]
    b = h.concentration[None, :, None]
    mk = state.mk[:, :, None].astype(np.float64)
    tk = state.tk[:, :, None].astype(np.float64)
    base = np.stack([state.P.apply(i, phi0) for i in range(state.I)])
    phi_group = (state.m - a * state.t) / (b + mk) + (a * tk + b) / (b + mk) * base
    return ModelEstimate(theta=theta, phi0=phi0, phi_group=phi_group, topic_weight=tw)
