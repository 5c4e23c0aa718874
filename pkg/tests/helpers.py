"""Shared builders for test corpora and sampler runs."""

from __future__ import annotations

from collections import Counter

import numpy as np

from spdp.corpus import Corpus, Group
from spdp.model import Hyperparameters, TransformMatrix, gibbs_sweep, init_state


def tiny_corpus(docs, V) -> Corpus:
    """``docs`` is a list of ``(group, [word ids])``; groups are numbered from 0."""
    I = 1 + max(g for g, _ in docs)
    groups = [Group(f"g{i}", tuple(tuple(ws) for g, ws in docs if g == i)) for i in range(I)]
    return Corpus(tuple(groups), tuple(f"w{v}" for v in range(V)))


def ordered_docs(docs):
    """Documents in the flat order the package uses (group-major)."""
    I = 1 + max(g for g, _ in docs)
    return [(i, ws) for i in range(I) for g, ws in docs if g == i]


def hyper_from(setup) -> Hyperparameters:
    return Hyperparameters(
        alpha=np.asarray(setup["alpha"], dtype=float),
        beta=np.asarray(setup["beta"], dtype=float),
        discount=np.asarray(setup["discount"], dtype=float),
        concentration=np.asarray(setup["concentration"], dtype=float),
    )


def transform_from(P, I, V):
    if P is None:
        return None
    return TransformMatrix.from_dense([np.asarray(P[i], dtype=float) for i in range(I)])


def sample_z_distribution(corpus, hyper, P=None, sweeps=20000, burn=500, seed=0):
    """Empirical distribution of the full topic vector over post-burn-in sweeps."""
    state = init_state(corpus, hyper, P, rng=seed)
    for it in range(1, burn + 1):
        gibbs_sweep(state, it, seed)
    counts = Counter()
    for it in range(burn + 1, burn + sweeps + 1):
        gibbs_sweep(state, it, seed)
        counts[tuple(state.z.tolist())] += 1
    return {z: c / sweeps for z, c in counts.items()}, state


def marginals_from(dist, N, K):
    out = np.zeros((N, K))
    for z, p in dist.items():
        out[np.arange(N), list(z)] += p
    return out


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def random_dense_transform(rng, I, V, n_perms=2):
    """Doubly stochastic matrices: random mixtures of the identity and permutations."""
    mats = []
    for _ in range(I):
        weights = rng.dirichlet(np.ones(n_perms + 1))
        M = weights[0] * np.eye(V)
        for wgt in weights[1:]:
            M[np.arange(V), rng.permutation(V)] += wgt
        mats.append(M)
    return mats


def random_setup(seed, identity=True, V=3, K=2, I=2):
    """Random tiny corpus, hyperparameters and transform drawn from ``seed``."""
    g = np.random.default_rng(seed)
    groups = tuple(
        Group(f"g{i}", tuple(tuple(int(x) for x in g.integers(V, size=g.integers(1, 5))) for _ in range(g.integers(1, 3))))
        for i in range(I)
    )
    c = Corpus(groups, tuple(f"w{v}" for v in range(V)))
    h = Hyperparameters(
        alpha=g.uniform(0.1, 2, (I, K)), beta=g.uniform(0.1, 2, V),
        discount=g.uniform(0, 0.9, K), concentration=g.uniform(0.5, 20, K),
    )
    P = TransformMatrix.identity_for(I, V) if identity else TransformMatrix.from_dense(random_dense_transform(g, I, V))
    return c, h, P
