"""Grouped document collections: tokenizing, loading, splitting, duplicating.

A corpus is a list of named groups that share one vocabulary.  Every
document is a sequence of integer word ids in ``[0, V)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Group:
    name: str
    documents: tuple[tuple[int, ...], ...]

    @property
    def num_tokens(self) -> int:
        return sum(len(doc) for doc in self.documents)


@dataclass(frozen=True)
class Corpus:
    """Immutable grouped corpus.

    ``vocabulary`` is shared (by identity) between a corpus and every corpus
    derived from it by :func:`split_holdout` or :func:`duplicate_training`.
    """

    groups: tuple[Group, ...]
    vocabulary: tuple[str, ...]
    _flat: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise DataError(f"group names must be unique, got {names}")
        V = len(self.vocabulary)
        for g in self.groups:
            for doc in g.documents:
                if len(doc) == 0:
                    raise DataError(f"empty document in group {g.name!r}")
                if min(doc) < 0 or max(doc) >= V:
                    raise DataError(f"word id out of range [0, {V}) in group {g.name!r}")

    @property
    def V(self) -> int:
        return len(self.vocabulary)

    @property
    def I(self) -> int:
        return len(self.groups)

    @property
    def num_documents(self) -> int:
        return sum(len(g.documents) for g in self.groups)

    @property
    def num_tokens(self) -> int:
        return sum(g.num_tokens for g in self.groups)

    @property
    def group_names(self) -> list[str]:
        return [g.name for g in self.groups]

    def documents(self) -> Iterable[tuple[int, int, tuple[int, ...]]]:
        """Yield ``(group index, document index within group, tokens)``."""
        for i, g in enumerate(self.groups):
            for d, doc in enumerate(g.documents):
                yield i, d, doc

    def flat(self) -> "FlatCorpus":
        """Array view of the corpus in group-major, document, position order."""
        if "flat" not in self._flat:
            self._flat["flat"] = FlatCorpus.from_corpus(self)
        return self._flat["flat"]

    def fingerprint(self) -> str:
        """Stable hash over the vocabulary, group names and token ids."""
        h = hashlib.sha256()
        h.update("\x1f".join(self.vocabulary).encode("utf-8"))
        for g in self.groups:
            h.update(b"\x1e" + g.name.encode("utf-8"))
            for doc in g.documents:
                h.update(b"\x1d" + np.asarray(doc, dtype="<i4").tobytes())
        return h.hexdigest()[:32]


@dataclass(frozen=True)
class FlatCorpus:
    """Flattened token arrays used by the numeric kernels.

    Documents are numbered globally (``doc``) in group-major order.  Token
    position ``p`` belongs to document ``doc_of[p]`` of group ``group_of[p]``.
    """

    words: np.ndarray
    doc_of: np.ndarray
    group_of: np.ndarray
    doc_start: np.ndarray
    doc_group: np.ndarray
    I: int
    V: int

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "FlatCorpus":
        lengths, groups, words = [], [], []
        for i, _, doc in corpus.documents():
            lengths.append(len(doc))
            groups.append(i)
            words.extend(doc)
        lengths = np.asarray(lengths, dtype=np.int64)
        doc_start = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=doc_start[1:])
        doc_group = np.asarray(groups, dtype=np.int32)
        doc_of = np.repeat(np.arange(len(lengths), dtype=np.int32), lengths)
        return cls(
            words=np.asarray(words, dtype=np.int32),
            doc_of=doc_of,
            group_of=doc_group[doc_of] if len(doc_of) else np.zeros(0, np.int32),
            doc_start=doc_start,
            doc_group=doc_group,
            I=corpus.I,
            V=corpus.V,
        )

    @property
    def N(self) -> int:
        return len(self.words)

    @property
    def D(self) -> int:
        return len(self.doc_group)

    def doc_lengths(self) -> np.ndarray:
        return np.diff(self.doc_start)


@dataclass(frozen=True)
class HoldoutSplit:
    train: Corpus
    test: Corpus
    fraction: float
    seed: int


def _strip_edges(token: str) -> str:
    lo, hi = 0, len(token)
    while lo < hi and not token[lo].isalnum():
        lo += 1
    while hi > lo and not token[hi - 1].isalnum():
        hi -= 1
    return token[lo:hi]


def _is_numeric(token: str) -> bool:
    return token.replace(".", "").replace(",", "").isdigit()


def tokenize(raw_text: str, stopwords: Iterable[str] = ()) -> list[str]:
    """Lowercase, split on whitespace and strip edge punctuation.

    Tokens that end up empty, purely numeric, or in ``stopwords`` are dropped.
    Plural and singular forms stay distinct (no stemming).
    """
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    out = []
    for raw in raw_text.lower().split():
        tok = _strip_edges(raw)
        if not tok or _is_numeric(tok) or tok in stop:
            continue
        out.append(tok)
    return out


def read_stopwords(path: str | Path) -> frozenset[str]:
    """One word per line; lines starting with ``#`` are comments."""
    words = set()
    for line in _read_lines(Path(path)):
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


def _read_lines(path: Path) -> list[str]:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    lines = []
    for lineno, raw in enumerate(data.splitlines(), start=1):
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: line {lineno} is not valid UTF-8") from exc
    return lines


def corpus_from_texts(
    groups: Sequence[tuple[str, Sequence[str]]], stopwords: Iterable[str] = ()
) -> Corpus:
    """Build a corpus from in-memory ``(name, [document text, ...])`` pairs."""
    stop = frozenset(stopwords)
    vocab: dict[str, int] = {}
    built = []
    for name, texts in groups:
        docs = []
        for text in texts:
            tokens = tokenize(text, stop)
            if not tokens:
                continue
            docs.append(tuple(vocab.setdefault(tok, len(vocab)) for tok in tokens))
        built.append(Group(name, tuple(docs)))
    return Corpus(tuple(built), tuple(vocab))


def load_corpus(
    group_paths: Sequence[tuple[str, str | Path]], stopword_path: str | Path | None = None
) -> Corpus:
    """Load one file per group, one document per line.

    Vocabulary ids are assigned in first-seen order across all files in the
    given group order.  Lines that tokenize to nothing are dropped.
    """
    stop = read_stopwords(stopword_path) if stopword_path is not None else frozenset()
    texts = [(name, _read_lines(Path(path))) for name, path in group_paths]
    return corpus_from_texts(texts, stop)


def split_holdout(corpus: Corpus, fraction: float, seed: int) -> HoldoutSplit:
    """Per group, move ``round(fraction * D_i)`` random documents to the test side."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"holdout fraction must be in (0, 1), got {fraction}")
    train_groups, test_groups = [], []
    for gi, g in enumerate(corpus.groups):
        D = len(g.documents)
        n_test = int(round(fraction * D))
        if D < 2 or n_test < 1 or n_test >= D:
            raise DataError(
                f"group {g.name!r} has {D} documents; cannot hold out a fraction of {fraction}"
            )
        rng = np.random.default_rng([seed, gi])
        test_idx = set(rng.choice(D, size=n_test, replace=False).tolist())
        train_groups.append(
            Group(g.name, tuple(doc for d, doc in enumerate(g.documents) if d not in test_idx))
        )
        test_groups.append(
            Group(g.name, tuple(doc for d, doc in enumerate(g.documents) if d in test_idx))
        )
    return HoldoutSplit(
        train=Corpus(tuple(train_groups), corpus.vocabulary),
        test=Corpus(tuple(test_groups), corpus.vocabulary),
        fraction=fraction,
        seed=seed,
    )


def duplicate_training(corpus: Corpus, copies: int) -> Corpus:
    """Repeat every document ``copies`` times as independent documents.

    Only ever applied to the training side.
    """
    if copies < 1:
        raise DataError(f"copies must be >= 1, got {copies}")
    if copies == 1:
        return corpus
    groups = tuple(Group(g.name, g.documents * copies) for g in corpus.groups)
    return Corpus(groups, corpus.vocabulary)
