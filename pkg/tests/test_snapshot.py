import numpy as np
import pytest

from spdp import snapshot
from spdp.corpus import corpus_from_texts
from spdp.errors import DataError, IntegrityError
from spdp.model import Hyperparameters, TransformMatrix, gibbs_sweep, init_state
from spdp.synthetic import planted_corpus

from helpers import random_dense_transform


def _state(identity=True, seed=0):
    c = planted_corpus(groups=2, docs_per_group=10, mean_length=12, K=3, V=20, seed=seed).corpus
    P = None if identity else TransformMatrix.from_dense(random_dense_transform(np.random.default_rng(seed), c.I, c.V))
    s = init_state(c, Hyperparameters.symmetric(3, c.V, c.I), P, rng=seed)
    for it in range(1, 4):
        gibbs_sweep(s, it, seed)
    return s


@pytest.mark.parametrize("identity", [True, False])
def test_round_trip_is_byte_identical(identity, tmp_path):
    s = _state(identity)
    path = tmp_path / "s.txt"
    snapshot.save(s, path, iteration=3)
    loaded = snapshot.load(path)
    assert loaded.iteration == 3
    assert loaded.dumps() == path.read_text()
    t = loaded.state
    assert t.assignments_equal(s) and t.v_lists() == s.v_lists()
    for name in ("n", "m", "t", "mk", "tk", "Q", "T"):
        assert np.array_equal(getattr(t, name), getattr(s, name)), name
    assert t.corpus == s.corpus and t.corpus.fingerprint() == s.corpus.fingerprint()
    assert np.array_equal(t.hyper.alpha, s.hyper.alpha)
    assert t.P.identity == identity


def test_odd_names_survive(tmp_path):
    c = corpus_from_texts([("left wing", ["café naïve", "x%20y"]), ("right", ["café"])])
    s = init_state(c, Hyperparameters.symmetric(2, c.V, c.I), rng=0)
    text = snapshot.dumps(s)
    back = snapshot.loads(text)
    assert back.state.corpus.group_names == ["left wing", "right"]
    assert back.state.corpus.vocabulary == c.vocabulary
    assert back.dumps() == text


def test_extra_header_fields_are_kept():
    s = _state()
    text = snapshot.dumps(s, 2, {"note": "abc"})
    snap = snapshot.loads(text)
    assert snap.header["note"] == "abc"
    assert snap.dumps() == text


def _lines(text):
    return text.split("\n")


def _edit(text, section, fn):
    """Apply ``fn`` to the first data line of a section."""
    lines = _lines(text)
    j = lines.index(f"[{section}]") + 1
    lines[j] = fn(lines[j])
    return "\n".join(lines)


@pytest.mark.parametrize(
    "section,fn",
    [
        ("Z", lambda ln: "99 " + ln.split(" ", 1)[1]),
        ("Z", lambda ln: ln + " 0"),
        ("R", lambda ln: ln[:-1] + ("0" if ln[-1] == "1" else "1")),
        ("R", lambda ln: ln.replace("0", "2", 1).replace("1", "2", 1)),
        ("VLISTS", lambda ln: ln + " 0"),
        ("VLISTS", lambda ln: "0 0 999 1"),
        ("HEADER", lambda ln: "K many"),
        ("CORPUS", lambda ln: "nonsense"),
    ],
)
def test_corruption_names_the_section(section, fn):
    text = snapshot.dumps(_state())
    with pytest.raises(IntegrityError, match=rf"\[{section}\]"):
        snapshot.loads(_edit(text, section, fn))


def test_structural_damage_is_detected(tmp_path):
    text = snapshot.dumps(_state())
    with pytest.raises(IntegrityError, match=r"\[END\]"):
        snapshot.loads(text[: len(text) // 2])
    with pytest.raises(IntegrityError, match=r"\[HEADER\]"):
        snapshot.loads("garbage\n" + text)
    with pytest.raises(IntegrityError, match=r"\[VLISTS\]"):
        snapshot.loads(text.replace("[VLISTS]\n", "[VLISTS]\n[VLISTS]\n"))
    without = "\n".join(ln for ln in _lines(text) if ln != "[R]")
    with pytest.raises(IntegrityError):
        snapshot.loads(without)
    # dropping a table from a list breaks the cell sums
    lines = _lines(text)
    j = lines.index("[VLISTS]") + 1
    while len(lines[j].split()) < 5:
        j += 1
    lines[j] = lines[j].rsplit(" ", 1)[0]
    with pytest.raises(IntegrityError, match=r"\[(VLISTS|R)\]"):
        snapshot.loads("\n".join(lines))
    with pytest.raises(DataError):
        snapshot.load(tmp_path / "absent.txt")


def test_fingerprint_mismatch():
    text = snapshot.dumps(_state())
    lines = _lines(text)
    j = next(i for i, ln in enumerate(lines) if ln.startswith("fingerprint "))
    lines[j] = "fingerprint " + "0" * 32
    with pytest.raises(IntegrityError, match=r"\[CORPUS\]"):
        snapshot.loads("\n".join(lines))


def test_loaded_state_keeps_sampling():
    s = _state()
    t = snapshot.loads(snapshot.dumps(s)).state
    gibbs_sweep(s, 4, 0)
    gibbs_sweep(t, 4, 0)
    assert s.assignments_equal(t)
