import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncc_ued.env import (
    make_grid_level, make_matrix_level, rollout_batch,
)
from ncc_ued.policy import PolicyParams, exact_policy_gradient
from ncc_ued.scoring import (
    batch_scores, gae, optimal_return_oracle, score_learnability_binary, score_learnability_general,
    score_neg_return, score_pvl, score_regret,
)


def test_neg_return_examples():
    assert score_neg_return([1.0, 0.0], 0.9) == -0.5
    assert score_neg_return([0.0, 0.0], 0.9) == 0.0
    assert score_neg_return([0.81], 0.9) == -0.81
    with pytest.raises(ValueError):
        score_neg_return([], 0.9)


def test_oracle_examples(empty3):
    assert optimal_return_oracle(empty3, 0.9) == pytest.approx(0.729, abs=1e-15)
    enclosed = make_grid_level(3, 3, [[0, 0, 0], [0, 0, 1], [0, 1, 0]], (0, 0), (2, 2))
    assert optimal_return_oracle(enclosed, 0.9) == 0.0
    assert optimal_return_oracle(make_matrix_level((0.2, 0.7)), 0.9) == 0.7


def test_oracle_respects_horizon():
    lv = make_grid_level(3, 3, [0] * 9, (0, 0), (2, 2), horizon=3)
    assert optimal_return_oracle(lv, 0.9) == 0.0


def test_regret_examples(empty3):
    m = make_matrix_level((1.0, 0.0))
    assert score_regret([0.3], m, 0.9) == pytest.approx(0.7)
    assert score_regret([1.0, 1.0], m, 0.9) == 0.0
    enclosed = make_grid_level(3, 3, [[0, 0, 0], [0, 0, 1], [0, 1, 0]], (0, 0), (2, 2))
    assert score_regret([0.0], enclosed, 0.9) == 0.0
    assert score_regret([0.2, 0.5], m, 0.9, estimator="sampled") == pytest.approx(0.15)


def test_learnability_binary_examples():
    assert score_learnability_binary([1, 0, 1, 0]) == 0.25
    assert score_learnability_binary([1, 1, 1]) == 0.0
    assert score_learnability_binary([1] + [0] * 9) == pytest.approx(0.09, abs=1e-15)
    with pytest.raises(ValueError):
        score_learnability_binary([0.5, 1])


def test_learnability_binary_is_population_variance():
    for M in range(1, 9):
        for bits in itertools.product((0, 1), repeat=M):
            assert score_learnability_binary(bits) == pytest.approx(np.var(bits), abs=1e-15)


def test_general_learnability_examples():
    # three levels with means 0, 0.5, 1 and per-level std 0.2
    R = np.array([[-0.2, 0.2], [0.3, 0.7], [0.8, 1.2]])
    s = score_learnability_general(R).values
    mu_l = np.array([0.0, 0.5, 1.0]); var = np.var(mu_l)
    ref = 0.2 * np.exp(-(mu_l - 0.5) ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)
    np.testing.assert_allclose(s, ref, rtol=1e-12)
    assert s[1] > s[0] and s[1] > s[2]
    # level at the buffer mean: sigma_l / (sigma sqrt(2 pi))
    assert s[1] == pytest.approx(0.2 / (np.sqrt(var) * np.sqrt(2 * np.pi)), rel=1e-12)
    zero = score_learnability_general(np.array([[0.5, 0.5], [0.0, 2.0]])).values
    assert zero[0] == 0.0


def test_general_learnability_degenerate_fallback():
    R = np.array([[0.0, 1.0], [0.25, 0.75]])
    np.testing.assert_allclose(score_learnability_general(R).values, [0.5, 0.25])


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 10 ** 6))
def test_general_learnability_permutation_invariance(n, M, seed):
    rng = np.random.default_rng(seed)
    R = rng.uniform(0, 1, (n, M))
    base = score_learnability_general(R).values
    perm = rng.permutation(n)
    np.testing.assert_allclose(score_learnability_general(R[perm]).values, base[perm], rtol=1e-10, atol=1e-14)
    shuffled = np.array([rng.permutation(r) for r in R])
    np.testing.assert_allclose(score_learnability_general(shuffled).values, base, rtol=1e-10, atol=1e-14)


def test_general_learnability_monotone_in_spread():
    base = np.array([[0.1, 0.3], [0.6, 0.6], [0.9, 0.9]])
    prev = -1.0
    for d in np.linspace(0, 0.3, 7):
        R = base.copy()
        R[1] = [0.6 - d, 0.6 + d]
        v = score_learnability_general(R).values[1]
        assert v >= prev
        prev = v


def test_pvl_examples():
    rewards = [0.0, 0.0, 1.0]
    from ncc_ued.env import returns_to_go
    v = returns_to_go(rewards, 0.9)
    assert score_pvl([rewards], [v], 0.9, 0.95) == pytest.approx(0.0, abs=1e-15)
    assert score_pvl([[0.0, 0.0]], [[5.0, 5.0]], 0.9, 0.95) == 0.0
    assert score_pvl([[0.4]], [[0.0]], 0.9, 0.95) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        score_pvl([[0.4, 0.0]], [[0.0]], 0.9, 0.95)


def test_gae_hand_computed():
    # deltas: 0 + .9*.5 - 0 = .45, 1 - .5 = .5; adv0 = .45 + .9*.5*.5 = .675
    np.testing.assert_allclose(gae([0.0, 1.0], [0.0, 0.5], 0.9, 0.5), [0.675, 0.5])


def test_regret_and_neg_return_share_gradient():
    # the two scores differ by a constant in x, so their expectations share gradients
    lv = make_matrix_level((0.9, 0.2))
    p = PolicyParams(np.array([[0.3, -0.1]]), zeta=0.1)
    h = 1e-6

    def expected(kind, logits):
        q = PolicyParams(logits, 0.1)
        J = q.prob_table()[0] @ np.array(lv.payoff)
        return -J if kind == "neg" else 0.9 - J

    for i in range(2):
        e = np.zeros((1, 2)); e[0, i] = h
        d_neg = (expected("neg", p.logits + e) - expected("neg", p.logits - e)) / (2 * h)
        d_reg = (expected("reg", p.logits + e) - expected("reg", p.logits - e)) / (2 * h)
        assert d_neg == pytest.approx(d_reg, abs=1e-9)
        assert d_neg == pytest.approx(-exact_policy_gradient(p, lv, 0.9)[0, i], abs=1e-8)


def test_batch_scores_align_with_single_level_functions(rng):
    levels = [make_grid_level(3, 3, [0] * 9, (0, 0), g, horizon=10) for g in ((2, 2), (1, 0), (0, 2))]
    p = PolicyParams.for_level(levels[0])
    batch = rollout_batch(p.prob_table(), [lv for lv in levels for _ in range(6)], rng, 0.9)
    R = batch.returns().reshape(3, 6)
    np.testing.assert_allclose(batch_scores(batch, levels, "neg-return", 0.9).values, -R.mean(axis=1))
    reg = [optimal_return_oracle(lv, 0.9) - R[i].mean() for i, lv in enumerate(levels)]
    np.testing.assert_allclose(batch_scores(batch, levels, "regret", 0.9).values, reg)
    np.testing.assert_allclose(batch_scores(batch, levels, "learnability", 0.9).values,
                               score_learnability_general(R).values)
    succ = batch.success().reshape(3, 6)
    np.testing.assert_allclose(batch_scores(batch, levels, "learnability-binary", 0.9).values,
                               [score_learnability_binary(r) for r in succ])
    assert np.all(batch_scores(batch, levels, "pvl", 0.9).values >= 0)
    with pytest.raises(ValueError):
        batch_scores(batch, levels, "maxmc", 0.9)
