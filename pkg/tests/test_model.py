import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdp.corpus import Corpus, Group
from spdp.errors import CacheOverflowError, DataError, IntegrityError
from spdp.model import (
    Choice,
    CountState,
    Hyperparameters,
    TransformMatrix,
    add_word,
    compute_proposals,
    estimate,
    gibbs_sweep,
    init_state,
    joint_log_prob,
    reconcile_indicators,
    remove_word,
)
from spdp.numerics import RngStream
from spdp.synthetic import planted_corpus

from helpers import (
    hyper_from,
    marginals_from,
    ordered_docs,
    random_setup,
    random_dense_transform,
    sample_z_distribution,
    tiny_corpus,
    total_variation,
    transform_from,
)
from oracles import TinyModel


@pytest.fixture(scope="module")
def synthetic():
    return planted_corpus(groups=2, docs_per_group=30, mean_length=20, K=4, V=40, seed=1).corpus


def test_hyperparameter_validation():
    Hyperparameters.symmetric(3, 5, 2)
    with pytest.raises(DataError):
        Hyperparameters.symmetric(3, 5, 2, discount=1.0)
    with pytest.raises(DataError):
        Hyperparameters.symmetric(3, 5, 2, alpha=0.0)
    with pytest.raises(DataError):
        Hyperparameters(alpha=np.ones((1, 2)), beta=np.ones(3), discount=np.zeros(3), concentration=np.ones(2))


def test_transform_matrix():
    ident = TransformMatrix.identity_for(2, 3)
    assert ident.identity
    assert np.array_equal(ident.dense(1), np.eye(3))
    assert TransformMatrix.from_dense([np.eye(3), np.eye(3)]).identity
    mats = [np.array([[0.5, 0.5, 0], [0, 1, 0], [0, 0, 1.0]])]
    P = TransformMatrix.from_dense(mats)
    assert not P.identity
    assert P.s_max == 2
    assert P.entry(0, 0, 1) == 0.5 and P.entry(0, 1, 0) == 0.0
    np.testing.assert_allclose(P.apply(0, np.array([0.2, 0.3, 0.5])), mats[0] @ np.array([0.2, 0.3, 0.5]))
    with pytest.raises(DataError):
        TransformMatrix.from_dense([np.array([[0.5, 0.4], [0, 1.0]])])
    with pytest.raises(DataError):
        TransformMatrix(1, 3, [[{0: 0.5, 1: 0.5}, {1: 1.0}, {2: 1.0}]], s_max=1)
    assert ident.doubly_stochastic and not P.doubly_stochastic
    assert TransformMatrix.from_dense(random_dense_transform(np.random.default_rng(1), 2, 5)).doubly_stochastic


def test_state_shape_mismatch():
    c, h, _ = random_setup(0)
    with pytest.raises(DataError):
        CountState(c, Hyperparameters.symmetric(2, c.V + 1, c.I), TransformMatrix.identity_for(c.I, c.V))


def test_init_is_consistent_and_deterministic(synthetic):
    h = Hyperparameters.symmetric(4, synthetic.V, synthetic.I)
    a = init_state(synthetic, h, rng=3)
    b = init_state(synthetic, h, rng=3)
    assert a.is_consistent()
    assert a.assignments_equal(b)
    assert not a.assignments_equal(init_state(synthetic, h, rng=4))
    assert np.all(a.t <= a.m) and np.all((a.m == 0) | (a.t >= 1))


def test_sweeps_preserve_consistency(synthetic):
    h = Hyperparameters.symmetric(4, synthetic.V, synthetic.I)
    s = init_state(synthetic, h, rng=1)
    for it in range(1, 11):
        gibbs_sweep(s, it, 1)
        s.check()


def test_sweep_order_changes_the_chain_but_not_validity(synthetic):
    h = Hyperparameters.symmetric(4, synthetic.V, synthetic.I)
    a = init_state(synthetic, h, rng=1)
    b = a.copy()
    gibbs_sweep(a, 1, 9)
    gibbs_sweep(b, 1, 9, order=np.arange(b.N)[::-1])
    assert a.is_consistent() and b.is_consistent()
    c = init_state(synthetic, h, rng=1)
    gibbs_sweep(c, 1, 9)
    assert a.assignments_equal(c)


@pytest.mark.parametrize("identity", [True, False])
def test_proposals_match_joint_differences(identity):
    worst = 0.0
    for seed in range(40):
        c, h, P = random_setup(seed, identity)
        s = init_state(c, h, P, rng=seed)
        for it in range(1, 3):
            gibbs_sweep(s, it, seed)
        p = seed % s.N
        rec = remove_word(s, p, RngStream(seed, 5))
        logw, choices = compute_proposals(s, p)
        fin = np.isfinite(logw)
        joints = []
        for ch, ok in zip(choices, fin):
            if not ok:
                joints.append(-np.inf)
                continue
            s2 = s.copy()
            add_word(s2, p, ch)
            joints.append(joint_log_prob(s2))
        joints = np.array(joints)
        d1 = logw[fin] - logw[fin][0]
        d2 = joints[fin] - joints[fin][0]
        worst = max(worst, float(np.abs(d1 - d2).max()))
        add_word(s, p, rec)
        s.check()
    assert worst <= 1e-8


def test_removal_record_restores_exactly():
    c, h, P = random_setup(7, identity=False)
    s = init_state(c, h, P, rng=7)
    gibbs_sweep(s, 1, 7)
    before = s.copy()
    for p in range(s.N):
        rec = remove_word(s, p, RngStream(1, p))
        add_word(s, p, rec)
        assert s.assignments_equal(before)
        assert s.v_lists() == before.v_lists()
        assert np.array_equal(s.t, before.t) and np.array_equal(s.Q, before.Q)


def test_joining_a_missing_table_is_rejected():
    c = Corpus((Group("g", ((0, 1),)),), ("a", "b"))
    s = init_state(c, Hyperparameters.symmetric(2, 2, 1), rng=0)
    remove_word(s, 0, RngStream(0))
    k = int(s.z[0])
    other = 1 - k if s.m[0, k, 0] == 0 else k
    if s.m[0, other, 0] == 0:
        with pytest.raises(DataError):
            add_word(s, 0, Choice(other, 0))
    with pytest.raises(DataError):
        add_word(s, 0, Choice(5, 1, 0))
    with pytest.raises(DataError):
        add_word(s, 0, Choice(0, 1, 1))  # v outside the identity row
    add_word(s, 0, Choice(0, 1, 0))
    s.check()


def test_remove_from_broken_cell_raises():
    c, h, P = random_setup(3)
    s = init_state(c, h, P, rng=3)
    i, w, k = s.flat.group_of[0], s.flat.words[0], s.z[0]
    s.t[i, k, w] = 0
    with pytest.raises(IntegrityError):
        remove_word(s, 0, RngStream(0))


def test_consistency_predicate_catches_corruption(synthetic):
    h = Hyperparameters.symmetric(4, synthetic.V, synthetic.I)
    s = init_state(synthetic, h, rng=2)
    bad = s.copy()
    bad.n[0, 0] += 1
    assert any(x.startswith("n:") for x in bad.consistency_violations())
    bad = s.copy()
    cell = np.argwhere(bad.t >= 1)[0]
    bad.t[tuple(cell)] += bad.m[tuple(cell)]
    assert bad.consistency_violations()
    bad = s.copy()
    bad.Q[0, 0] += 1
    assert any(x.startswith("Q:") for x in bad.consistency_violations())
    with pytest.raises(IntegrityError):
        bad.check()
    with pytest.raises(IntegrityError):
        joint_log_prob(bad)


def test_indicator_redraw_keeps_cell_sums(synthetic):
    h = Hyperparameters.symmetric(4, synthetic.V, synthetic.I)
    s = init_state(synthetic, h, rng=2)
    s.r[:] = 0
    assert not s.is_consistent()
    reconcile_indicators(s, 1, 0)
    s.check()


def test_rebuild_counts_recovers_everything(synthetic):
    h = Hyperparameters.symmetric(4, synthetic.V, synthetic.I)
    s = init_state(synthetic, h, rng=2)
    gibbs_sweep(s, 1, 2)
    t = s.copy()
    t.n[:] = 0
    t.m[:] = 0
    t.Q[:] = 0
    t.T[:] = 0
    t.rebuild_counts()
    assert np.array_equal(t.n, s.n) and np.array_equal(t.m, s.m) and np.array_equal(t.Q, s.Q)
    t.check()


def test_cache_overflow_is_reported():
    c = Corpus((Group("g", ((0, 0, 0, 0),)),), ("a",))
    h = Hyperparameters.symmetric(1, 1, 1)
    s = init_state(c, h, cache_size=3)
    with pytest.raises(CacheOverflowError):
        joint_log_prob(s)


@pytest.mark.parametrize("identity", [True, False])
def test_estimate_rows_are_distributions(synthetic, identity):
    I, V = synthetic.I, synthetic.V
    P = None if identity else TransformMatrix.from_dense(random_dense_transform(np.random.default_rng(0), I, V))
    h = Hyperparameters.symmetric(4, V, I)
    s = init_state(synthetic, h, P, rng=0)
    for it in range(1, 4):
        gibbs_sweep(s, it, 0)
    est = estimate(s)
    np.testing.assert_allclose(est.phi0.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(est.phi_group.sum(axis=2), 1.0, atol=1e-12)
    for th in est.theta:
        np.testing.assert_allclose(th.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(est.topic_weight.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(est.phi_group > 0)


def test_two_word_posterior_matches_enumeration():
    """One document [w0, w1], V = K = 2, default hyperparameters."""
    setup = dict(
        docs=[(0, [0, 1])], V=2, alpha=[[0.1, 0.1]], beta=[0.1, 0.1], discount=[0.7, 0.7], concentration=[100.0, 100.0]
    )
    c = tiny_corpus(setup["docs"], 2)
    exact = TinyModel(setup["docs"], 2, 2, setup["alpha"], setup["beta"], setup["discount"], setup["concentration"]).z_distribution()
    emp, _ = sample_z_distribution(c, hyper_from(setup), sweeps=50000)
    assert total_variation(emp, exact) <= 0.02


def test_transformed_posterior_matches_enumeration():
    docs = ordered_docs([(0, [0, 1, 1]), (0, [2, 0])])
    setup = dict(alpha=[[0.5, 0.2]], beta=[0.3, 0.3, 0.3], discount=[0.5, 0.2], concentration=[1.0, 3.0])
    P = [[[0.7, 0.3, 0.0], [0.0, 1.0, 0.0], [0.2, 0.0, 0.8]]]
    c = tiny_corpus(docs, 3)
    exact = TinyModel(docs, 3, 2, P=P, **setup).z_distribution()
    emp, _ = sample_z_distribution(c, hyper_from(setup), transform_from(P, 1, 3), sweeps=50000)
    assert total_variation(emp, exact) <= 0.03
    me, mx = marginals_from(emp, c.num_tokens, 2), marginals_from(exact, c.num_tokens, 2)
    assert np.abs(me - mx).max() <= 0.02


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_any_seed_keeps_consistency(seed, identity):
    c, h, P = random_setup(seed, identity)
    s = init_state(c, h, P, rng=seed)
    s.check()
    for it in range(1, 4):
        gibbs_sweep(s, it, seed)
        s.check()
    assert np.isfinite(joint_log_prob(s))
