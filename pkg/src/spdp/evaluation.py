"""Held-out perplexity, Hellinger topic comparison and topic tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as kern
from .corpus import Corpus
from .errors import DataError
from .model import Hyperparameters, ModelEstimate

DEFAULT_FOLD_IN_ITERATIONS = 10


@dataclass
class PerplexityReport:
    overall: float
    per_group: dict[str, float]
    tokens: int
    log_likelihood: float


def fold_in(
    doc: Sequence[int],
    phi: np.ndarray,
    alpha: np.ndarray,
    iterations: int = DEFAULT_FOLD_IN_ITERATIONS,
    seed: int = 0,
    stream: int = 0,
) -> np.ndarray:
    """Topic proportions of a held-out document with frozen word-topic rows.

    ``phi`` is ``(K, V)`` (normally the group's estimate), ``alpha`` the
    group's doc-topic prior.  Zero iterations give the prior mean.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    words = np.asarray(doc, dtype=np.int64)
    if len(words) and words.max() >= phi.shape[1]:
        raise DataError(f"word id {words.max()} outside the vocabulary of size {phi.shape[1]}")
    counts = kern.fold_in_doc(
        words, np.ascontiguousarray(phi, dtype=np.float64), alpha, len(alpha), int(iterations),
        np.uint64(seed), np.uint64(stream),
    )
    th = counts + alpha
    return th / th.sum()


def fold_in_corpus(
    test: Corpus,
    est: ModelEstimate,
    hyper: Hyperparameters,
    iterations: int = DEFAULT_FOLD_IN_ITERATIONS,
    seed: int = 0,
) -> list[np.ndarray]:
    """``theta`` rows for every test document, per group.

    Each document's draws are keyed by its own content and index, so the
    result does not depend on the order groups or documents are visited in.
    """
    out = []
    for i, g in enumerate(test.groups):
        rows = np.empty((len(g.documents), hyper.K))
        for d, doc in enumerate(g.documents):
            rows[d] = fold_in(doc, est.phi_group[i], hyper.alpha[i], iterations, seed, _doc_stream(doc))
        out.append(rows)
    return out


def _doc_stream(doc: Sequence[int]) -> int:
    h = 1469598103934665603
    for w in doc:
        h = ((h ^ (int(w) + 1)) * 1099511628211) & ((1 << 64) - 1)
    return h ^ len(doc)


def perplexity(test: Corpus, est: ModelEstimate, theta: Sequence[np.ndarray]) -> PerplexityReport:
    """``exp(-sum log p(w) / tokens)`` with ``p(w) = sum_k phi^i_{k,w} theta_{d,k}``.

    ``theta[i]`` holds the (folded-in) rows for the test documents of group i.
    """
    total_ll, total_n = 0.0, 0
    per_group = {}
    V = est.phi_group.shape[2]
    for i, g in enumerate(test.groups):
        ll, n_tok = 0.0, 0
        for d, doc in enumerate(g.documents):
            words, counts = np.unique(np.asarray(doc, dtype=np.int64), return_counts=True)
            if words.max() >= V:
                raise DataError(f"test word id {words.max()} outside the vocabulary of size {V}")
            probs = theta[i][d] @ est.phi_group[i][:, words]
            ll += float(np.sum(counts * np.log(probs)))
            n_tok += len(doc)
        per_group[g.name] = float(np.exp(-ll / n_tok)) if n_tok else float("nan")
        total_ll += ll
        total_n += n_tok
    if total_n == 0:
        raise DataError("test corpus has no tokens")
    return PerplexityReport(float(np.exp(-total_ll / total_n)), per_group, total_n, total_ll)


def held_out_perplexity(
    test: Corpus,
    est: ModelEstimate,
    hyper: Hyperparameters,
    iterations: int = DEFAULT_FOLD_IN_ITERATIONS,
    seed: int = 0,
) -> PerplexityReport:
    return perplexity(test, est, fold_in_corpus(test, est, hyper, iterations, seed))


class PerplexityLog:
    """Appends ``iteration,overall,group:<name>,...`` rows to a CSV file."""

    def __init__(self, path: str | Path, group_names: Sequence[str]):
        self.path = Path(path)
        self.group_names = list(group_names)
        with self.path.open("w", newline="") as fh:
            csv.writer(fh).writerow(["iteration", "overall"] + [f"group:{g}" for g in self.group_names])

    def append(self, iteration: int, report: PerplexityReport) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow(
                [iteration, repr(report.overall)] + [repr(report.per_group[g]) for g in self.group_names]
            )


def hellinger(p, q) -> float:
    """``sqrt(sum (sqrt p - sqrt q)^2 / 2)``, i.e. ``sqrt(1 - sum sqrt(p q))`` for distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DataError(f"distributions differ in length: {p.shape} vs {q.shape}")
    # the difference form is exactly zero for identical inputs
    return float(min(1.0, np.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))))


def hellinger_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise Hellinger distances between the rows of ``A`` and ``B``."""
    sa, sb = np.sqrt(A), np.sqrt(B)
    sq = (sa**2).sum(1)[:, None] + (sb**2).sum(1)[None, :] - 2.0 * sa @ sb.T
    D = np.sqrt(np.clip(0.5 * sq, 0.0, 1.0))
    # exact zeros where rows coincide
    same = (A[:, None, :] == B[None, :, :]).all(axis=2)
    D[same] = 0.0
    return D


@dataclass
class TopicAlignment:
    permutation: np.ndarray  # topic of B matched to each topic of A
    distances: np.ndarray  # (K, K), rows are topics of A, columns topics of B

    @property
    def matched(self) -> np.ndarray:
        return self.distances[np.arange(len(self.permutation)), self.permutation]

    def aligned(self) -> np.ndarray:
        """Distance matrix with B's columns reordered to follow A."""
        return self.distances[:, self.permutation]


def greedy_alignment(D: np.ndarray) -> np.ndarray:
    """Repeatedly match the closest remaining (row, column) pair.

    Falls back to the identity when greedy matching would cost more in total.
    """
    K = D.shape[0]
    perm = np.full(K, -1, dtype=np.int64)
    used_r = np.zeros(K, bool)
    used_c = np.zeros(K, bool)
    for flat in np.argsort(D, axis=None, kind="stable"):
        a, b = divmod(int(flat), K)
        if used_r[a] or used_c[b]:
            continue
        perm[a] = b
        used_r[a] = used_c[b] = True
    ident = np.arange(K)
    if D[ident, perm].sum() > D[ident, ident].sum():
        return ident
    return perm


def align_and_heatmap(
    estA: ModelEstimate, estB: ModelEstimate, group: int | None = None, method: str = "greedy"
) -> TopicAlignment:
    """Match B's topics to A's by Hellinger distance.

    Compares the shared base rows ``phi0`` unless ``group`` selects a
    per-group comparison.  ``method="optimal"`` uses a minimum-cost assignment.
    """
    A = estA.phi0 if group is None else estA.phi_group[group]
    B = estB.phi0 if group is None else estB.phi_group[group]
    if A.shape != B.shape:
        raise DataError(f"topic matrices differ in shape: {A.shape} vs {B.shape}")
    D = hellinger_matrix(A, B)
    if method == "greedy":
        perm = greedy_alignment(D)
    elif method == "optimal":
        from scipy.optimize import linear_sum_assignment

        _, perm = linear_sum_assignment(D)
    else:
        raise DataError(f"unknown alignment method {method!r}")
    return TopicAlignment(np.asarray(perm, dtype=np.int64), D)


def heatmap_text(matrix: np.ndarray) -> str:
    """``K`` on the first line, then ``K`` rows of space-separated reals."""
    K = matrix.shape[0]
    buf = io.StringIO()
    buf.write(f"{K}\n")
    for row in matrix:
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def read_heatmap(text: str) -> np.ndarray:
    lines = text.strip().splitlines()
    K = int(lines[0])
    return np.array([[float(x) for x in line.split()] for line in lines[1 : K + 1]])


@dataclass
class TopicRow:
    group: str
    topic: int
    probability: float
    rank: int  # 1 = most probable topic in the group
    words: list[tuple[str, float]]


def top_words(est: ModelEstimate, group: int, topic: int, n: int = 50, vocabulary: Sequence[str] | None = None):
    """Most probable words of one group's topic, ties broken by word id."""
    row = est.phi_group[group][topic]
    if n > len(row):
        raise DataError(f"asked for {n} words from a vocabulary of {len(row)}")
    order = np.lexsort((np.arange(len(row)), -row))[:n]
    names = vocabulary if vocabulary is not None else [str(w) for w in range(len(row))]
    return [(names[w], float(row[w])) for w in order]


def topic_table(est: ModelEstimate, group_names: Sequence[str], vocabulary: Sequence[str], n: int = 50) -> list[TopicRow]:
    rows = []
    for i, name in enumerate(group_names):
        weights = est.topic_weight[i]
        ranks = np.empty(len(weights), dtype=np.int64)
        ranks[np.lexsort((np.arange(len(weights)), -weights))] = np.arange(1, len(weights) + 1)
        for k in range(len(weights)):
            rows.append(TopicRow(name, k, float(weights[k]), int(ranks[k]), top_words(est, i, k, n, vocabulary)))
    return rows


def format_topic_table(rows: Sequence[TopicRow]) -> str:
    out = []
    for row in rows:
        words = ", ".join(w for w, _ in row.words)
        out.append(f"{row.group}\ttopic {row.topic}\tp={row.probability:.4f}\trank={row.rank}\t{words}")
    return "\n".join(out) + "\n"
