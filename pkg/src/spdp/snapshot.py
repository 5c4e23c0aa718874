"""Text snapshots of a sampler state.

Only the assignment variables are written (``z``, ``r``, table lists) along
with the corpus and hyperparameters; every count is regenerated on load and
must pass the consistency predicate.  Layout::

    SPDP-SNAPSHOT 1
    [HEADER]    key value lines (K, V, I, hyperparameters, iteration, ...)
    [CORPUS]    vocabulary line, then per group: "group <name> <D>" + D id lines
    [TRANSFORM] only for non-identity P: "i w v value" lines
    [Z]         one line per document, space-separated topic ids
    [R]         one 0/1 string per document
    [VLISTS]    "i k w v1 v2 ..." per non-empty cell
    [END]
"""

from __future__ import annotations

from pathlib import Path
from urllib.parse import quote, unquote

import numpy as np

from .corpus import Corpus, Group
from .errors import DataError, IntegrityError
from .model import CountState, Hyperparameters, TransformMatrix

MAGIC = "SPDP-SNAPSHOT 1"
SECTIONS = ("HEADER", "CORPUS", "TRANSFORM", "Z", "R", "VLISTS", "END")


def _floats(xs) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(xs))


def corpus_lines(corpus: Corpus) -> list[str]:
    lines = ["vocab " + " ".join(quote(w, safe="") for w in corpus.vocabulary)]
    for g in corpus.groups:
        lines.append(f"group {quote(g.name, safe='')} {len(g.documents)}")
        lines.extend(" ".join(map(str, doc)) for doc in g.documents)
    return lines


def parse_corpus(lines: list[str], section: str = "CORPUS") -> Corpus:
    try:
        head = lines[0].split(" ")
        if head[0] != "vocab":
            raise ValueError("missing vocab line")
        vocab = tuple(unquote(w) for w in head[1:] if w)
        groups, j = [], 1
        while j < len(lines):
            tag, name, D = lines[j].split(" ")
            if tag != "group":
                raise ValueError(f"expected a group line, got {lines[j]!r}")
            D = int(D)
            docs = tuple(tuple(int(x) for x in lines[j + 1 + d].split()) for d in range(D))
            groups.append(Group(unquote(name), docs))
            j += 1 + D
        return Corpus(tuple(groups), vocab)
    except (ValueError, IndexError, DataError) as exc:
        raise IntegrityError(f"[{section}] malformed: {exc}") from exc


def dumps(state: CountState, iteration: int = 0, extra: dict[str, str] | None = None) -> str:
    h = state.hyper
    out = [MAGIC, "[HEADER]"]
    header = {
        "K": str(state.K),
        "V": str(state.V),
        "I": str(state.I),
        "iteration": str(iteration),
        "fingerprint": state.corpus.fingerprint(),
        "transform": "identity" if state.P.identity else "sparse",
        "cache_size": str(state.stir.shape[1] - 1),
        "alpha": _floats(h.alpha),
        "beta": _floats(h.beta),
        "discount": _floats(h.discount),
        "concentration": _floats(h.concentration),
    }
    header.update(extra or {})
    out.extend(f"{k} {v}" for k, v in header.items())
    out.append("[CORPUS]")
    out.extend(corpus_lines(state.corpus))
    if not state.P.identity:
        out.append("[TRANSFORM]")
        for i in range(state.I):
            for w in range(state.V):
                cols, vals = state.P.row(i, w)
                out.extend(f"{i} {w} {c} {v!r}" for c, v in zip(cols.tolist(), vals.tolist()))
    starts = state.flat.doc_start
    spans = [(starts[d], starts[d + 1]) for d in range(state.flat.D)]
    out.append("[Z]")
    out.extend(" ".join(map(str, state.z[lo:hi].tolist())) for lo, hi in spans)
    out.append("[R]")
    out.extend("".join("1" if x else "0" for x in state.r[lo:hi].tolist()) for lo, hi in spans)
    out.append("[VLISTS]")
    for (i, k, w), vs in state.v_lists().items():
        out.append(f"{i} {k} {w} " + " ".join(map(str, vs)))
    out.append("[END]")
    return "\n".join(out) + "\n"


def save(state: CountState, path: str | Path, iteration: int = 0, extra: dict[str, str] | None = None) -> None:
    Path(path).write_text(dumps(state, iteration, extra), encoding="utf-8")


class Snapshot:
    """A loaded snapshot: the rebuilt state plus its header fields."""

    def __init__(self, state: CountState, header: dict[str, str]):
        self.state = state
        self.header = header

    @property
    def iteration(self) -> int:
        return int(self.header.get("iteration", 0))

    @property
    def fingerprint(self) -> str:
        return self.header["fingerprint"]

    def dumps(self) -> str:
        known = {"K", "V", "I", "iteration", "fingerprint", "transform", "cache_size", "alpha", "beta", "discount", "concentration"}
        extra = {k: v for k, v in self.header.items() if k not in known}
        return dumps(self.state, self.iteration, extra)


def _split_sections(text: str) -> dict[str, list[str]]:
    lines = text.split("\n")
    if not lines or lines[0] != MAGIC:
        raise IntegrityError("[HEADER] missing or unknown snapshot magic line")
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in SECTIONS:
                raise IntegrityError(f"[{current}] unknown section")
            if current in sections:
                raise IntegrityError(f"[{current}] section repeated")
            sections[current] = []
        elif current is None:
            raise IntegrityError("[HEADER] content before the first section")
        elif line:
            sections[current].append(line)
    if "END" not in sections:
        raise IntegrityError("[END] snapshot is truncated")
    for name in ("HEADER", "CORPUS", "Z", "R", "VLISTS"):
        if name not in sections:
            raise IntegrityError(f"[{name}] section missing")
    return sections


def loads(text: str) -> Snapshot:
    sec = _split_sections(text)
    header = {}
    for line in sec["HEADER"]:
        key, _, val = line.partition(" ")
        header[key] = val
    try:
        K, V, I = int(header["K"]), int(header["V"]), int(header["I"])
        hyper = Hyperparameters(
            alpha=np.array(header["alpha"].split(), dtype=np.float64).reshape(I, K),
            beta=np.array(header["beta"].split(), dtype=np.float64),
            discount=np.array(header["discount"].split(), dtype=np.float64),
            concentration=np.array(header["concentration"].split(), dtype=np.float64),
        )
        cache_size = int(header["cache_size"])
        transform = header["transform"]
    except (KeyError, ValueError, DataError) as exc:
        raise IntegrityError(f"[HEADER] malformed: {exc}") from exc
    corpus = parse_corpus(sec["CORPUS"])
    if corpus.V != V or corpus.I != I:
        raise IntegrityError("[CORPUS] shape disagrees with the header")
    if corpus.fingerprint() != header.get("fingerprint"):
        raise IntegrityError("[CORPUS] fingerprint does not match the header")
    if transform == "identity":
        P = TransformMatrix.identity_for(I, V)
    else:
        if "TRANSFORM" not in sec:
            raise IntegrityError("[TRANSFORM] section missing for a sparse transform")
        try:
            rows = [[{} for _ in range(V)] for _ in range(I)]
            for line in sec["TRANSFORM"]:
                i, w, c, val = line.split()
                rows[int(i)][int(w)][int(c)] = float(val)
            P = TransformMatrix(I, V, rows)
        except (ValueError, IndexError, DataError) as exc:
            raise IntegrityError(f"[TRANSFORM] malformed: {exc}") from exc
    try:
        state = CountState(corpus, hyper, P, cache_size=cache_size)
    except DataError as exc:
        raise IntegrityError(f"[HEADER] {exc}") from exc
    D = state.flat.D
    lengths = state.flat.doc_lengths()
    zl, rl = sec["Z"], sec["R"]
    if len(zl) != D:
        raise IntegrityError(f"[Z] expected {D} document lines, found {len(zl)}")
    if len(rl) != D:
        raise IntegrityError(f"[R] expected {D} document lines, found {len(rl)}")
    try:
        z = np.array([int(x) for line in zl for x in line.split()], dtype=np.int32)
    except ValueError as exc:
        raise IntegrityError(f"[Z] malformed: {exc}") from exc
    if len(z) != state.N or any(len(line.split()) != L for line, L in zip(zl, lengths)):
        raise IntegrityError("[Z] line lengths disagree with the documents")
    if np.any(z < 0) or np.any(z >= K):
        raise IntegrityError("[Z] topic id out of range")
    if any(len(line) != L or set(line) - {"0", "1"} for line, L in zip(rl, lengths)):
        raise IntegrityError("[R] lines must be 0/1 strings matching document lengths")
    state.z[:] = z
    state.r[:] = np.frombuffer("".join(rl).encode("ascii"), dtype=np.uint8) - ord("0")
    tables = {}
    try:
        for line in sec["VLISTS"]:
            parts = [int(x) for x in line.split()]
            i, k, w, vs = parts[0], parts[1], parts[2], parts[3:]
            if not (0 <= i < I and 0 <= k < K and 0 <= w < V) or not vs or (i, k, w) in tables:
                raise ValueError(f"bad cell line {line!r}")
            if any(not 0 <= v < V for v in vs):
                raise ValueError(f"base word out of range in {line!r}")
            tables[(i, k, w)] = vs
    except ValueError as exc:
        raise IntegrityError(f"[VLISTS] malformed: {exc}") from exc
    if sum(len(vs) for vs in tables.values()) > max(state.N, 1):
        raise IntegrityError("[VLISTS] more tables than tokens")
    state.set_tables(tables)
    state.rebuild_counts()
    bad = state.consistency_violations()
    if bad:
        where = "R" if all(b.startswith("r:") for b in bad) else "VLISTS"
        raise IntegrityError(f"[{where}] counts regenerated from Z, R, VLISTS are inconsistent: " + "; ".join(bad))
    return Snapshot(state, header)


def load(path: str | Path) -> Snapshot:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read snapshot {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise IntegrityError(f"[HEADER] snapshot {path} is not UTF-8") from exc
    return loads(text)
