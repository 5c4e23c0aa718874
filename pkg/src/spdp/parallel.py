"""Approximate distributed-parallel sampler simulated on CPU worker pools.

Three levels:

1. words are reordered round-robin across documents so that words sampled
   concurrently rarely share a document;
2. documents are split across ``G`` logical devices;
3. on each device a pool of ``W`` workers runs one workgroup per word,
   committing count changes with per-cell atomic adds and tolerating stale
   reads from other workers.

After each wave the host regenerates what can be regenerated (``n``, ``m``)
and clamps what cannot (``t`` and the table lists).  Only identity transform
matrices are supported on this path.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .corpus import Corpus
from .errors import DataError, UnsupportedConfigurationError
from .model import CountState, reconcile_indicators
from .numerics import RngStream

log = logging.getLogger(__name__)

DEFAULT_WAVE_BUDGET = 1 << 20
MERGE_MODES = ("shared", "delta")


def reorder_words(corpus: Corpus) -> np.ndarray:
    """Round-robin schedule: word ``l`` of every document that has one, for l = 0, 1, ...

    Documents are visited group-major, then in document order.  Returns flat
    token positions.
    """
    flat = corpus.flat()
    lengths = flat.doc_lengths()
    if flat.N == 0:
        return np.zeros(0, dtype=np.int64)
    # sort by (offset within document, document), stable on the flat order
    offset = np.arange(flat.N, dtype=np.int64) - flat.doc_start[flat.doc_of]
    order = np.lexsort((flat.doc_of, offset))
    assert len(order) == int(lengths.sum())
    return order.astype(np.int64)


def partition_documents(corpus: Corpus, G: int, rng: RngStream) -> np.ndarray:
    """Random, load-balanced assignment of documents to ``G`` devices.

    Documents are visited in random order and each goes to the currently
    lightest device, which keeps the per-device word totals within one
    document length of each other.  Returns the device id per global document.
    """
    if G < 1:
        raise DataError(f"device count must be >= 1, got {G}")
    flat = corpus.flat()
    lengths = flat.doc_lengths()
    out = np.zeros(flat.D, dtype=np.int32)
    if G == 1:
        return out
    load = np.zeros(G, dtype=np.int64)
    for d in rng.generator().permutation(flat.D):
        g = int(np.argmin(load))
        out[d] = g
        load[g] += lengths[d]
    return out


@dataclass
class WorkPlan:
    """Per-iteration execution plan.

    ``waves`` are half-open ranges of ``schedule``; within a wave each device
    handles the positions whose document it owns.
    """

    schedule: np.ndarray
    device_assignment: np.ndarray  # device per global document
    devices: int
    waves: list[tuple[int, int]]
    workgroup_size: int
    position_device: np.ndarray = field(repr=False)

    def wave_positions(self, wave: int, device: int) -> tuple[np.ndarray, np.ndarray]:
        """Token positions and their schedule indices for one device in one wave."""
        lo, hi = self.waves[wave]
        idx = np.arange(lo, hi, dtype=np.int64)
        sel = self.position_device[lo:hi] == device
        return self.schedule[lo:hi][sel], idx[sel]

    def device_schedule(self, device: int) -> np.ndarray:
        return self.schedule[self.position_device == device]


def make_plan(
    corpus: Corpus,
    devices: int,
    rng: RngStream,
    wave_budget: int = DEFAULT_WAVE_BUDGET,
    K: int = 1,
    s_max: int = 1,
    schedule: np.ndarray | None = None,
) -> WorkPlan:
    if wave_budget < 1:
        raise DataError("wave budget must be >= 1")
    schedule = reorder_words(corpus) if schedule is None else schedule
    assignment = partition_documents(corpus, devices, rng)
    flat = corpus.flat()
    N = len(schedule)
    waves = [(lo, min(lo + wave_budget, N)) for lo in range(0, N, wave_budget)]
    return WorkPlan(
        schedule=schedule,
        device_assignment=assignment,
        devices=devices,
        waves=waves,
        workgroup_size=K * (s_max + 1),
        position_device=assignment[flat.doc_of[schedule]],
    )


@dataclass
class CorrectionReport:
    n_cells: int = 0
    m_cells: int = 0
    t_clamped: int = 0
    lists_padded: int = 0
    lists_truncated: int = 0
    q_cells: int = 0
    sums: int = 0
    indicators: int = 0

    @property
    def total(self) -> int:
        return (
            self.n_cells + self.m_cells + self.t_clamped + self.lists_padded
            + self.lists_truncated + self.q_cells + self.sums + self.indicators
        )

    def __iadd__(self, other: "CorrectionReport"):
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self


def _pad_columns(state: CountState) -> np.ndarray:
    """Base word used to pad a short table list, per (group, word) row."""
    P = state.P
    if P.identity:
        return np.tile(np.arange(state.V, dtype=np.int64), state.I)
    rows = np.repeat(np.arange(state.I * state.V), np.diff(P.ptr))
    best = np.full(state.I * state.V, -1, dtype=np.int64)
    best_val = np.full(state.I * state.V, -1.0)
    # first maximum per row, columns are sorted ascending within a row
    for j in range(len(P.col)):
        rrow = rows[j]
        if P.val[j] > best_val[rrow]:
            best_val[rrow] = P.val[j]
            best[rrow] = P.col[j]
    return best


def error_correct(state: CountState) -> CorrectionReport:
    """Repair a state after approximate parallel updates.

    ``n`` and ``m`` are recounted from ``z``; ``t`` is clamped into
    ``[min(1, m), m]``; table lists are truncated from the end or padded to
    length ``t``; ``Q`` and every cached sum are recomputed; table indicators
    are flipped in cells whose flags no longer add up to ``t``.
    """
    rep = CorrectionReport()
    f = state.flat
    K, V, I = state.K, state.V, state.I
    n = np.bincount(f.doc_of.astype(np.int64) * K + state.z, minlength=f.D * K).reshape(f.D, K)
    rep.n_cells = int(np.count_nonzero(n != state.n))
    state.n[:] = n
    cells = (f.group_of.astype(np.int64) * K + state.z) * V + f.words
    m = np.bincount(cells, minlength=I * K * V).reshape(I, K, V)
    rep.m_cells = int(np.count_nonzero(m != state.m))
    state.m[:] = m
    t = np.clip(state.t, np.minimum(1, m), m)
    rep.t_clamped = int(np.count_nonzero(t != state.t))
    state.t[:] = t
    lengths = state.table_lengths()
    diff = (t - lengths).reshape(-1)
    fix = np.nonzero(diff)[0]
    if len(fix):
        pad = _pad_columns(state)
        w_of = fix % V
        i_of = fix // (K * V)
        pad_v = pad[i_of * V + w_of]
        rep.lists_padded = int(np.count_nonzero(diff[fix] > 0))
        rep.lists_truncated = int(np.count_nonzero(diff[fix] < 0))
        _resize_lists(fix, diff[fix], pad_v, lengths.reshape(-1)[fix], *state._pool_args())
    Q = np.zeros((K, V), dtype=np.int64)
    kern.pool_q(state.head, state.tab_next, state.tab_v, K, V, Q.reshape(-1))
    rep.q_cells = int(np.count_nonzero(Q != state.Q))
    state.Q[:] = Q
    mk, tk, T = m.sum(axis=2), t.sum(axis=2), t.sum(axis=(0, 2))
    rep.sums = int(
        np.count_nonzero(mk != state.mk) + np.count_nonzero(tk != state.tk) + np.count_nonzero(T != state.T)
    )
    state.mk[:] = mk
    state.tk[:] = tk
    state.T[:] = T
    rep.indicators = int(kern.fix_indicators(cells, state.r, t.reshape(-1)))
    return rep


def _resize_lists(cells, deltas, pad_v, lengths, head, tail, tab_v, tab_next, free, free_top):
    for c, dlt, v, ln in zip(cells.tolist(), deltas.tolist(), pad_v.tolist(), lengths.tolist()):
        if dlt > 0:
            for _ in range(dlt):
                kern.pool_append(c, v, head, tail, tab_v, tab_next, free, free_top)
        else:
            for j in range(-dlt):
                kern.pool_remove_at(c, ln - 1 - j, head, tail, tab_v, tab_next, free, free_top)


def merge_device_tables(t_before: np.ndarray, device_tables: list[np.ndarray]) -> np.ndarray:
    """Additive merge: ``t_before + sum_g (t_g - t_before)``; clamping happens later."""
    merged = t_before.copy()
    for tg in device_tables:
        merged += tg - t_before
    return merged


@dataclass
class IterationReport:
    clamps: int = 0
    corrections: CorrectionReport = field(default_factory=CorrectionReport)


class ParallelSampler:
    """Runs parallel iterations with ``workers`` threads per logical device.

    Parameters
    ----------
    devices : int
        Number of logical devices ``G``.
    workers : int
        Workers per device ``W``.
    wave_budget : int
        Maximum schedule positions per wave.
    merge_mode : {"shared", "delta"}
        ``shared``: every device updates one atomic view of all counts.
        ``delta``: table counts are device-local and merged additively.
    """

    def __init__(self, devices: int = 1, workers: int = 1, wave_budget: int = DEFAULT_WAVE_BUDGET, merge_mode: str = "shared"):
        if devices < 1 or workers < 1:
            raise DataError("devices and workers must be >= 1")
        if merge_mode not in MERGE_MODES:
            raise DataError(f"merge_mode must be one of {MERGE_MODES}, got {merge_mode!r}")
        self.devices = devices
        self.workers = workers
        self.wave_budget = wave_budget
        self.merge_mode = merge_mode
        self._pool = ThreadPoolExecutor(max_workers=devices * workers) if devices * workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def plan(self, state: CountState, iteration: int, seed: int, schedule: np.ndarray | None = None) -> WorkPlan:
        # partition stream keyed by iteration so runs are replayable
        return make_plan(
            state.corpus, self.devices, RngStream(seed, (1 << 40) + iteration), self.wave_budget,
            state.K, state.P.s_max, schedule,
        )

    def iteration(self, state: CountState, iteration: int, seed: int, plan: WorkPlan | None = None) -> IterationReport:
        if plan is None:
            plan = self.plan(state, iteration, seed)
        return run_parallel_iteration(
            state, plan, iteration, seed, self.workers, self.merge_mode, self._pool
        )


def run_parallel_iteration(
    state: CountState,
    plan: WorkPlan,
    iteration: int,
    seed: int,
    workers: int = 1,
    merge_mode: str = "shared",
    pool: ThreadPoolExecutor | None = None,
) -> IterationReport:
    """One approximate parallel Gibbs iteration over every position in ``plan``.

    With one device and one worker this performs exactly the sequential sweep
    over ``plan.schedule``.
    """
    if not state.P.identity:
        raise UnsupportedConfigurationError("the parallel sampler requires identity transformation matrices")
    if merge_mode not in MERGE_MODES:
        raise DataError(f"merge_mode must be one of {MERGE_MODES}, got {merge_mode!r}")
    report = IterationReport()
    seed_u = np.uint64(seed)
    corpus_args = state._corpus_args()
    params = state._param_args()
    n, m, t, mk, tk, Q, T = state._count_args()
    for wave in range(len(plan.waves)):
        if merge_mode == "delta":
            t_before = state.t.copy()
            dev_t = [state.t.reshape(-1).copy() for _ in range(plan.devices)]
            dev_tk = [state.tk.reshape(-1).copy() for _ in range(plan.devices)]
        jobs = []
        for g in range(plan.devices):
            pos, sidx = plan.wave_positions(wave, g)
            if len(pos) == 0:
                continue
            tg, tkg = (dev_t[g], dev_tk[g]) if merge_mode == "delta" else (t, tk)
            for j in range(workers):
                share_p, share_s = pos[j::workers], sidx[j::workers]
                if len(share_p):
                    jobs.append((share_p, share_s, tg, tkg))

        def run(job):
            share_p, share_s, tg, tkg = job
            return kern.parallel_positions(
                share_p, share_s, seed_u, iteration, *corpus_args,
                n, m, tg, mk, tkg, Q, T, *params, state.stir, state.topic_cache,
            )

        if pool is None or len(jobs) <= 1:
            clamps = [run(job) for job in jobs]
        else:
            clamps = list(pool.map(run, jobs))  # barrier: map waits for every job
        report.clamps += int(sum(clamps))
        if merge_mode == "delta":
            state.t[:] = merge_device_tables(t_before, [x.reshape(state.t.shape) for x in dev_t])
        report.corrections += error_correct(state)
    reconcile_indicators(state, iteration, seed)
    return report
