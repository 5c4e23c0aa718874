"""Command line front end: ``spdp train|evaluate|topics|compare``.

Exit status is 0 on success, 1 for usage or configuration problems, 2 for
unusable input data and 3 when a snapshot or state fails its integrity checks.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import snapshot
from .config import MODES, SCHEDULES, RunConfig, parse_group_spec
from .errors import (
    CacheOverflowError,
    DataError,
    IntegrityError,
    SPDPError,
    UnsupportedConfigurationError,
    UsageError,
)
from .evaluation import DEFAULT_FOLD_IN_ITERATIONS, align_and_heatmap, format_topic_table, heatmap_text, held_out_perplexity, topic_table
from .model import estimate
from .parallel import MERGE_MODES
from .training import read_heldout, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTEGRITY = 0, 1, 2, 3

# flag name -> RunConfig field
_TRAIN_FLAGS = {
    "stopwords": "stopwords",
    "topics": "topics",
    "iterations": "iterations",
    "alpha": "alpha",
    "beta": "beta",
    "discount": "discount",
    "concentration": "concentration",
    "mode": "mode",
    "schedule": "schedule",
    "workers": "workers",
    "devices": "devices",
    "wave_budget": "wave_budget",
    "merge_mode": "merge_mode",
    "duplicate": "duplicate_copies",
    "holdout": "holdout",
    "fold_in_iterations": "fold_in_iterations",
    "seed": "seed",
    "out": "out",
    "eval_every": "eval_every",
    "snapshot_every": "snapshot_every",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdp", description="Shadow Poisson-Dirichlet topic model sampler.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tr = sub.add_parser("train", help="run the Gibbs sampler")
    tr.add_argument("--config", help="key = value configuration file; flags override it")
    tr.add_argument("--corpus", nargs="+", metavar="NAME=PATH", help="one text file per group, one document per line")
    tr.add_argument("--stopwords")
    tr.add_argument("--topics", type=int)
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--beta", type=float)
    tr.add_argument("--discount", type=float)
    tr.add_argument("--concentration", type=float)
    tr.add_argument("--mode", choices=MODES)
    tr.add_argument("--schedule", choices=SCHEDULES, help="sequential visiting order")
    tr.add_argument("--workers", type=int, help="workers per device")
    tr.add_argument("--devices", type=int)
    tr.add_argument("--wave-budget", type=int)
    tr.add_argument("--merge-mode", choices=MERGE_MODES)
    tr.add_argument("--duplicate", type=int, help="copies of every training document")
    tr.add_argument("--holdout", type=float, help="per-group held-out fraction")
    tr.add_argument("--fold-in-iterations", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", help="output directory")
    tr.add_argument("--eval-every", type=int)
    tr.add_argument("--snapshot-every", type=int)

    ev = sub.add_parser("evaluate", help="held-out perplexity of a snapshot")
    ev.add_argument("snapshot")
    ev.add_argument("heldout", help="held-out corpus file written by train")
    ev.add_argument("--fold-in-iterations", type=int, default=DEFAULT_FOLD_IN_ITERATIONS)
    ev.add_argument("--seed", type=int, default=0)

    tp = sub.add_parser("topics", help="topic table of a snapshot")
    tp.add_argument("snapshot")
    tp.add_argument("-n", "--words", type=int, default=50, help="top words per topic (capped at the vocabulary size)")
    tp.add_argument("--out", help="write the table here instead of stdout")

    cp = sub.add_parser("compare", help="Hellinger heatmap between two snapshots")
    cp.add_argument("snapshot_a")
    cp.add_argument("snapshot_b")
    cp.add_argument("--out", default="heatmap.txt", help="heatmap file")
    cp.add_argument("--group", type=int, help="compare one group's rows instead of the shared base rows")
    cp.add_argument("--method", choices=("greedy", "optimal"), default="greedy")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            changes[key] = value
    if args.corpus:
        changes["corpus"] = [parse_group_spec(s) for s in args.corpus]
    return cfg.replace(**changes).validate()


def cmd_train(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    result = train(cfg)
    if result.perplexity:
        it, rep = result.perplexity[-1]
        print(f"iteration {it}: held-out perplexity {rep.overall:.4f}")
    if result.seconds:
        print(f"mean seconds per iteration {np.mean(result.seconds):.4f}")
    print(f"artifacts written to {cfg.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    snap = snapshot.load(args.snapshot)
    test = read_heldout(args.heldout)
    state = snap.state
    if test.vocabulary != state.corpus.vocabulary:
        raise DataError("held-out corpus vocabulary differs from the snapshot's")
    if test.group_names != state.corpus.group_names:
        raise DataError("held-out corpus groups differ from the snapshot's")
    rep = held_out_perplexity(test, estimate(state), state.hyper, args.fold_in_iterations, args.seed)
    print(f"overall\t{rep.overall!r}")
    for name, value in rep.per_group.items():
        print(f"{name}\t{value!r}")
    return EXIT_OK


def cmd_topics(args: argparse.Namespace) -> int:
    if args.words < 1:
        raise UsageError("-n must be >= 1")
    state = snapshot.load(args.snapshot).state
    n = min(args.words, state.V)
    rows = topic_table(estimate(state), state.corpus.group_names, state.corpus.vocabulary, n)
    text = format_topic_table(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    a = snapshot.load(args.snapshot_a)
    b = snapshot.load(args.snapshot_b)
    if a.fingerprint != b.fingerprint:
        raise DataError("snapshots were trained on different corpora (fingerprint mismatch)")
    if a.state.K != b.state.K:
        raise DataError(f"snapshots have different topic counts: {a.state.K} vs {b.state.K}")
    if args.group is not None and not 0 <= args.group < a.state.I:
        raise UsageError(f"--group must lie in [0, {a.state.I})")
    al = align_and_heatmap(estimate(a.state), estimate(b.state), args.group, args.method)
    Path(args.out).write_text(heatmap_text(al.aligned()), encoding="utf-8")
    print("permutation " + " ".join(map(str, al.permutation.tolist())))
    print(f"matched mean Hellinger {float(al.matched.mean()):.6f}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "topics": cmd_topics, "compare": cmd_compare}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except (UsageError, UnsupportedConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, CacheOverflowError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (DataError, SPDPError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
