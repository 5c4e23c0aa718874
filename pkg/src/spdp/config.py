"""Run configuration stored as a flat ``key = value`` text file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, UsageError
from .parallel import DEFAULT_WAVE_BUDGET, MERGE_MODES

MODES = ("sequential", "parallel")
SCHEDULES = ("corpus", "reordered")


@dataclass
class RunConfig:
    """Everything needed to replay a training run.

    ``corpus`` holds ``(group name, path)`` pairs in group order.  With
    ``eval_every`` or ``snapshot_every`` set to 0 only the final state is
    evaluated or saved.  ``holdout`` is the per-group test fraction (0 keeps
    every document for training and disables perplexity).
    """

    corpus: list[tuple[str, str]] = field(default_factory=list)
    stopwords: str | None = None
    topics: int = 32
    iterations: int = 2000
    eval_every: int = 10
    snapshot_every: int = 0
    alpha: float = 0.1
    beta: float = 0.1
    discount: float = 0.7
    concentration: float = 100.0
    mode: str = "sequential"
    schedule: str = "corpus"
    workers: int = 1
    devices: int = 1
    wave_budget: int = DEFAULT_WAVE_BUDGET
    merge_mode: str = "shared"
    duplicate_copies: int = 1
    holdout: float = 0.1
    fold_in_iterations: int = 10
    seed: int = 0
    out: str = "run"

    def validate(self) -> "RunConfig":
        if not self.corpus:
            raise UsageError("at least one corpus group (name=path) is required")
        names = [n for n, _ in self.corpus]
        if len(set(names)) != len(names):
            raise UsageError(f"group names must be unique, got {names}")
        for name, _ in self.corpus:
            if not name or any(c.isspace() for c in name):
                raise UsageError(f"group name {name!r} must be non-empty without whitespace")
        positive = ("topics", "workers", "devices", "wave_budget", "duplicate_copies", "alpha", "beta", "concentration")
        for key in positive:
            if not getattr(self, key) > 0:
                raise UsageError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("iterations", "eval_every", "snapshot_every", "fold_in_iterations", "seed"):
            if getattr(self, key) < 0:
                raise UsageError(f"{key} must be >= 0, got {getattr(self, key)}")
        if not 0.0 <= self.discount < 1.0:
            raise UsageError(f"discount must lie in [0, 1), got {self.discount}")
        if not 0.0 <= self.holdout < 1.0:
            raise UsageError(f"holdout must lie in [0, 1), got {self.holdout}")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.schedule not in SCHEDULES:
            raise UsageError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.merge_mode not in MERGE_MODES:
            raise UsageError(f"merge_mode must be one of {MERGE_MODES}, got {self.merge_mode!r}")
        return self

    # -- file format ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "corpus":
                lines.extend(f"corpus = {name}={path}" for name, path in value)
            elif value is None:
                continue
            elif isinstance(value, float):
                lines.append(f"{f.name} = {value!r}")
            else:
                lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        corpus = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise UsageError(f"{source}: line {lineno}: expected a known 'key = value', got {raw!r}")
            if key == "corpus":
                corpus.append(parse_group_spec(value))
                continue
            try:
                setattr(cfg, key, _convert(types[key], value))
            except ValueError as exc:
                raise UsageError(f"{source}: line {lineno}: bad value for {key}: {value!r}") from exc
        if corpus:
            cfg.corpus = corpus
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        return cls.from_text(text, str(path))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _convert(kind: str, value: str):
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def parse_group_spec(spec: str) -> tuple[str, str]:
    """``name=path`` into ``(name, path)``; the path may itself contain ``=``."""
    name, sep, path = spec.partition("=")
    if not sep or not name or not path:
        raise UsageError(f"corpus groups are given as name=path, got {spec!r}")
    return name, path
