"""Synthetic grouped corpora drawn from a known topic mixture."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Group


@dataclass
class PlantedCorpus:
    corpus: Corpus
    topics: np.ndarray  # (K, V) planted word distributions shared by all groups
    group_topics: np.ndarray  # (I, K, V) per-group distributions actually sampled from
    theta: list[np.ndarray]  # per group, (D_i, K) document mixtures


def planted_corpus(
    groups: int = 2,
    docs_per_group: int = 500,
    mean_length: int = 100,
    K: int = 8,
    V: int = 400,
    topic_concentration: float = 0.05,
    doc_concentration: float = 0.3,
    group_noise: float = 0.0,
    seed: int = 0,
) -> PlantedCorpus:
    """Sample documents from ``K`` planted topics.

    Topics are ``Dirichlet(topic_concentration)`` draws over ``V`` words.
    Each group may perturb them (``group_noise`` is the weight of a fresh
    Dirichlet draw mixed into every row).  Document lengths are Poisson with
    the given mean, at least 1.
    """
    rng = np.random.default_rng(seed)
    topics = rng.dirichlet(np.full(V, topic_concentration), size=K)
    group_topics = np.empty((groups, K, V))
    built, thetas = [], []
    for i in range(groups):
        noise = rng.dirichlet(np.full(V, topic_concentration), size=K)
        group_topics[i] = (1.0 - group_noise) * topics + group_noise * noise
        cdf = np.cumsum(group_topics[i], axis=1)
        cdf[:, -1] = 1.0
        theta = rng.dirichlet(np.full(K, doc_concentration), size=docs_per_group)
        docs = []
        for d in range(docs_per_group):
            L = max(1, int(rng.poisson(mean_length)))
            z = rng.choice(K, size=L, p=theta[d])
            u = rng.random(L)
            words = np.array([np.searchsorted(cdf[k], x, side="right") for k, x in zip(z, u)])
            docs.append(tuple(int(w) for w in np.minimum(words, V - 1)))
        built.append(Group(f"g{i}", tuple(docs)))
        thetas.append(theta)
    vocab = tuple(f"w{v:04d}" for v in range(V))
    return PlantedCorpus(Corpus(tuple(built), vocab), topics, group_topics, thetas)


def write_text_files(corpus: Corpus, directory: str | Path) -> list[tuple[str, Path]]:
    """One file per group with one space-separated document per line."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for g in corpus.groups:
        path = directory / f"{g.name}.txt"
        path.write_text("".join(" ".join(corpus.vocabulary[w] for w in doc) + "\n" for doc in g.documents), encoding="utf-8")
        out.append((g.name, path))
    return out
