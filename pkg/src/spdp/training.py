"""Training driver shared by the command line and the acceptance checks."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import snapshot
from .config import RunConfig
from .corpus import Corpus, duplicate_training, load_corpus, split_holdout
from .errors import DataError
from .evaluation import PerplexityLog, PerplexityReport, held_out_perplexity
from .model import CountState, Hyperparameters, ModelEstimate, estimate, gibbs_sweep, init_state
from .parallel import ParallelSampler, reorder_words

log = logging.getLogger(__name__)

CONFIG_FILE = "config.txt"
HELDOUT_FILE = "heldout.txt"
PERPLEXITY_FILE = "perplexity.csv"
TIMINGS_FILE = "timings.csv"
ESTIMATE_FILE = "estimate.npz"


def snapshot_name(iteration: int) -> str:
    return f"snapshot-{iteration:06d}.txt"


@dataclass
class TrainResult:
    state: CountState
    estimate: ModelEstimate | None
    perplexity: list[tuple[int, PerplexityReport]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    out: Path | None = None


def hyperparameters_for(cfg: RunConfig, corpus: Corpus) -> Hyperparameters:
    return Hyperparameters.symmetric(
        cfg.topics, corpus.V, corpus.I,
        alpha=cfg.alpha, beta=cfg.beta, discount=cfg.discount, concentration=cfg.concentration,
    )


def write_heldout(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text("\n".join(snapshot.corpus_lines(corpus)) + "\n", encoding="utf-8")


def read_heldout(path: str | Path) -> Corpus:
    try:
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln]
    except OSError as exc:
        raise DataError(f"cannot read held-out corpus {path}: {exc.strerror or exc}") from exc
    return snapshot.parse_corpus(lines, section=str(path))


def train_corpus(
    cfg: RunConfig,
    train: Corpus,
    test: Corpus | None = None,
    out: str | Path | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Run ``cfg.iterations`` Gibbs iterations on an in-memory corpus.

    When ``out`` is given the run's artifacts are written there: snapshots,
    per-iteration timings, the perplexity log and the final estimate.  With
    zero iterations only the initial snapshot is written.
    """
    cfg.validate()
    hyper = hyperparameters_for(cfg, train)
    state = init_state(train, hyper, rng=cfg.seed)
    out_dir = Path(out) if out is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(state=state, estimate=None, out=out_dir)
    if cfg.iterations == 0:
        if out_dir is not None:
            snapshot.save(state, out_dir / snapshot_name(0), 0)
        return result

    if out_dir is not None:
        cfg.save(out_dir / CONFIG_FILE)
        if test is not None:
            write_heldout(test, out_dir / HELDOUT_FILE)
        timings = (out_dir / TIMINGS_FILE).open("w", newline="")
        timing_csv = csv.writer(timings)
        timing_csv.writerow(["iteration", "seconds"])
        plog = PerplexityLog(out_dir / PERPLEXITY_FILE, test.group_names) if test is not None else None
    else:
        timings = timing_csv = plog = None

    order = reorder_words(train) if cfg.schedule == "reordered" else None
    sampler = (
        ParallelSampler(cfg.devices, cfg.workers, cfg.wave_budget, cfg.merge_mode)
        if cfg.mode == "parallel" else None
    )
    try:
        for it in range(1, cfg.iterations + 1):
            t0 = time.perf_counter()
            if sampler is None:
                gibbs_sweep(state, it, cfg.seed, order)
            else:
                sampler.iteration(state, it, cfg.seed)
            elapsed = time.perf_counter() - t0
            result.seconds.append(elapsed)
            if timing_csv is not None:
                timing_csv.writerow([it, repr(elapsed)])
                timings.flush()
            last = it == cfg.iterations
            if test is not None and (last or it == 1 or (cfg.eval_every and it % cfg.eval_every == 0)):
                report = held_out_perplexity(test, estimate(state), hyper, cfg.fold_in_iterations, cfg.seed)
                result.perplexity.append((it, report))
                if plog is not None:
                    plog.append(it, report)
                log.info("iteration %d perplexity %.3f", it, report.overall)
            if out_dir is not None and (last or (cfg.snapshot_every and it % cfg.snapshot_every == 0)):
                snapshot.save(state, out_dir / snapshot_name(it), it)
            if progress is not None:
                progress(it, elapsed)
    finally:
        if sampler is not None:
            sampler.close()
        if timings is not None:
            timings.close()

    result.estimate = estimate(state)
    if out_dir is not None:
        save_estimate(result.estimate, train.group_names, out_dir / ESTIMATE_FILE)
    return result


def prepare_corpora(cfg: RunConfig) -> tuple[Corpus, Corpus | None]:
    """Load the configured groups, split off the held-out side and duplicate."""
    corpus = load_corpus(cfg.corpus, cfg.stopwords)
    test = None
    if cfg.holdout > 0:
        split = split_holdout(corpus, cfg.holdout, cfg.seed)
        corpus, test = split.train, split.test
    return duplicate_training(corpus, cfg.duplicate_copies), test


def train(cfg: RunConfig, progress: Callable[[int, float], None] | None = None) -> TrainResult:
    cfg.validate()
    train_c, test_c = prepare_corpora(cfg)
    return train_corpus(cfg, train_c, test_c, cfg.out, progress)


def save_estimate(est: ModelEstimate, group_names, path: str | Path) -> None:
    arrays = {"phi0": est.phi0, "phi_group": est.phi_group, "topic_weight": est.topic_weight}
    for i, th in enumerate(est.theta):
        arrays[f"theta_{i}"] = th
    arrays["group_names"] = np.array(list(group_names))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_estimate(path: str | Path) -> tuple[ModelEstimate, list[str]]:
    with np.load(path) as data:
        names = [str(x) for x in data["group_names"]]
        theta = [data[f"theta_{i}"] for i in range(len(names))]
        est = ModelEstimate(theta=theta, phi0=data["phi0"], phi_group=data["phi_group"], topic_weight=data["topic_weight"])
    return est, names
