import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdp import snapshot
from spdp.cli import EXIT_DATA, EXIT_INTEGRITY, EXIT_OK, EXIT_USAGE, main
from spdp.config import RunConfig
from spdp.errors import UsageError
from spdp.evaluation import read_heatmap
from spdp.synthetic import planted_corpus, write_text_files
from spdp.training import load_estimate


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    pc = planted_corpus(groups=2, docs_per_group=30, mean_length=20, K=4, V=40, seed=5)
    write_text_files(pc.corpus, d)
    (d / "stop.txt").write_text("# none of these occur\nthe\n")
    return d


def _train(data_dir, out, *extra):
    args = [
        "train", "--corpus", f"g0={data_dir / 'g0.txt'}", f"g1={data_dir / 'g1.txt'}",
        "--stopwords", str(data_dir / "stop.txt"), "--topics", "4", "--iterations", "6",
        "--eval-every", "3", "--snapshot-every", "2", "--seed", "11", "--out", str(out), *extra,
    ]
    return main(args)


def test_train_writes_every_artifact(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(data_dir, out) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "config.txt", "estimate.npz", "heldout.txt", "perplexity.csv",
        "snapshot-000002.txt", "snapshot-000004.txt", "snapshot-000006.txt", "timings.csv",
    ]
    rows = list(csv.reader(open(out / "perplexity.csv")))
    assert rows[0] == ["iteration", "overall", "group:g0", "group:g1"]
    assert [r[0] for r in rows[1:]] == ["1", "3", "6"]
    timings = list(csv.reader(open(out / "timings.csv")))
    assert len(timings) == 7 and all(float(r[1]) > 0 for r in timings[1:])
    est, groups = load_estimate(out / "estimate.npz")
    V = snapshot.load(out / "snapshot-000006.txt").state.V
    assert groups == ["g0", "g1"] and est.phi_group.shape == (2, 4, V)
    cfg = RunConfig.load(out / "config.txt")
    assert cfg.topics == 4 and cfg.seed == 11 and cfg.snapshot_every == 2
    assert "held-out perplexity" in capsys.readouterr().out


def test_sequential_runs_are_byte_identical(data_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _train(data_dir, a) == EXIT_OK
    assert _train(data_dir, b) == EXIT_OK
    for name in ("snapshot-000006.txt", "perplexity.csv", "estimate.npz", "heldout.txt", "config.txt"):
        if name == "config.txt":
            continue  # records its own output directory
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_single_worker_parallel_equals_reordered_sequential(data_dir, tmp_path):
    seq, par = tmp_path / "seq", tmp_path / "par"
    assert _train(data_dir, seq, "--schedule", "reordered") == EXIT_OK
    assert _train(data_dir, par, "--mode", "parallel", "--workers", "1", "--devices", "1") == EXIT_OK
    assert (seq / "snapshot-000006.txt").read_bytes() == (par / "snapshot-000006.txt").read_bytes()


def test_parallel_run_loads_cleanly(data_dir, tmp_path):
    out = tmp_path / "p"
    assert _train(data_dir, out, "--mode", "parallel", "--workers", "4", "--devices", "2", "--merge-mode", "delta") == EXIT_OK
    snapshot.load(out / "snapshot-000006.txt").state.check()


def test_zero_iterations_writes_only_the_initial_snapshot(data_dir, tmp_path):
    out = tmp_path / "zero"
    assert _train(data_dir, out, "--iterations", "0") == EXIT_OK
    assert [p.name for p in out.iterdir()] == ["snapshot-000000.txt"]
    snap = snapshot.load(out / "snapshot-000000.txt")
    assert snap.iteration == 0
    snap.state.check()


def test_config_file_with_flag_override(data_dir, tmp_path):
    cfg = RunConfig(corpus=[("g0", str(data_dir / "g0.txt")), ("g1", str(data_dir / "g1.txt"))], topics=3, iterations=2, out=str(tmp_path / "c"))
    cfg.save(tmp_path / "run.cfg")
    assert main(["train", "--config", str(tmp_path / "run.cfg"), "--topics", "5", "--holdout", "0.2"]) == EXIT_OK
    written = RunConfig.load(tmp_path / "c" / "config.txt")
    assert written.topics == 5 and written.holdout == 0.2 and written.iterations == 2


def test_evaluate_topics_compare(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    _train(data_dir, out)
    snap = str(out / "snapshot-000006.txt")
    capsys.readouterr()
    assert main(["evaluate", snap, str(out / "heldout.txt"), "--seed", "11"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("overall\t") and len(lines) == 3
    # the same fold-in seed reproduces the logged value
    logged = list(csv.reader(open(out / "perplexity.csv")))[-1][1]
    assert float(lines[0].split("\t")[1]) == float(logged)

    assert main(["topics", snap, "-n", "7"]) == EXIT_OK
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 2 * 4
    assert all(len(row.split("\t")[-1].split(", ")) == 7 for row in table)
    # asking for more words than the vocabulary holds lists every word
    V = snapshot.load(snap).state.V
    assert main(["topics", snap, "-n", str(V + 10)]) == EXIT_OK
    assert all(len(row.split("\t")[-1].split(", ")) == V for row in capsys.readouterr().out.splitlines())

    hm = tmp_path / "hm.txt"
    assert main(["compare", snap, snap, "--out", str(hm)]) == EXIT_OK
    report = capsys.readouterr().out
    assert "permutation 0 1 2 3" in report
    assert np.all(np.diag(read_heatmap(hm.read_text())) == 0.0)


def test_topics_default_is_fifty_words(tmp_path):
    pc = planted_corpus(groups=1, docs_per_group=40, mean_length=30, K=2, V=80, topic_concentration=1.0, seed=0)
    files = write_text_files(pc.corpus, tmp_path / "d")
    out = tmp_path / "o"
    assert main(["train", "--corpus", f"g0={files[0][1]}", "--topics", "2", "--iterations", "1", "--holdout", "0", "--out", str(out)]) == EXIT_OK
    assert main(["topics", str(out / "snapshot-000001.txt"), "--out", str(tmp_path / "t.txt")]) == EXIT_OK
    rows = (tmp_path / "t.txt").read_text().splitlines()
    assert len(rows) == 2 and all(len(r.split("\t")[-1].split(", ")) == 50 for r in rows)


def test_compare_rejects_mismatched_snapshots(data_dir, tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    _train(data_dir, a)
    _train(data_dir, b, "--topics", "3")
    _train(data_dir, c, "--holdout", "0.3")
    sa = str(a / "snapshot-000006.txt")
    assert main(["compare", sa, str(b / "snapshot-000006.txt")]) == EXIT_DATA
    assert main(["compare", sa, str(c / "snapshot-000006.txt")]) == EXIT_DATA
    assert "fingerprint" in capsys.readouterr().err


def test_exit_codes(data_dir, tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["train", "--corpus", "nameonly"]) == EXIT_USAGE
    assert main(["train", "--corpus", f"g={data_dir / 'g0.txt'}", "--topics", "0"]) == EXIT_USAGE
    assert main(["train", "--corpus", f"g={data_dir / 'g0.txt'}", "--mode", "turbo"]) == EXIT_USAGE
    assert main(["train", "--corpus", f"g={tmp_path / 'nope.txt'}", "--out", str(tmp_path / "x")]) == EXIT_DATA
    bad = tmp_path / "bad.txt"
    bad.write_text("SPDP-SNAPSHOT 1\n[HEADER]\nK 2\n[END]\n")
    assert main(["topics", str(bad)]) == EXIT_INTEGRITY
    assert "[" in capsys.readouterr().err


def test_config_validation():
    with pytest.raises(UsageError):
        RunConfig().validate()
    ok = RunConfig(corpus=[("a", "a.txt")])
    ok.validate()
    for change in ({"discount": 1.0}, {"holdout": 1.0}, {"merge_mode": "x"}, {"schedule": "x"}, {"workers": 0}, {"corpus": [("a b", "p")]}):
        with pytest.raises(UsageError):
            ok.replace(**change).validate()
    with pytest.raises(UsageError):
        RunConfig.from_text("topics = 3\nunknown = 1\n")
    with pytest.raises(UsageError):
        RunConfig.from_text("topics = three\n")


names = st.text(st.characters(whitelist_categories=("L", "N")), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(
    corpus=st.lists(st.tuples(names, st.text(st.characters(whitelist_categories=("L", "N", "P")), min_size=1, max_size=20)), min_size=1, max_size=3),
    topics=st.integers(1, 500),
    alpha=st.floats(1e-6, 1e3),
    discount=st.floats(0.0, 0.999),
    mode=st.sampled_from(["sequential", "parallel"]),
    stopwords=st.none() | st.just("stop words.txt"),
)
def test_config_round_trip(corpus, topics, alpha, discount, mode, stopwords):
    cfg = RunConfig(corpus=corpus, topics=topics, alpha=alpha, discount=discount, mode=mode, stopwords=stopwords)
    assert RunConfig.from_text(cfg.to_text()) == cfg
