import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgia.beliefs import (
    BeliefTables,
    Posterior,
    Selection,
    ZeroProbabilityType,
    expected_immediate_reward,
    joint_prior,
    posterior,
)
from sgia.game_model import BaseGame, CostScheme, SignalingFamily, uniform_profile
from sgia.instances import random_instance


def hand_instance(rewards=(2.0, -1.0)):
    """One agent, T(.|h) = (0.4, 0.6) everywhere, tau(theta1|s1) = 0.9, tau(theta1|s2) = 0.2."""
    R = np.array(rewards, float).reshape(1, 2, 1)
    T = np.tile([0.4, 0.6], (2, 1, 1))
    game = BaseGame(R, T, np.array([0.4, 0.6]), 0.9)
    rule = np.array([[0.9, 0.1], [0.2, 0.8]])
    fam = SignalingFamily((np.broadcast_to(rule[None, :, None, :], (2, 2, 1, 2)),))
    return game, fam, CostScheme("CB", (np.zeros(1),))


def test_hand_prior_entries():
    game, fam, _ = hand_instance()
    p = joint_prior(game, fam, 0, (0,))
    np.testing.assert_allclose(p, [[0.36, 0.04], [0.12, 0.48]], atol=1e-15)
    assert p.sum() == pytest.approx(1.0)


def test_hand_posterior_and_reward():
    game, fam, scheme = hand_instance()
    post = posterior(game, fam, 0, 0, 1, (0,))
    assert post.type_prob == pytest.approx(0.48)
    assert post.mu_s[0] == pytest.approx(0.75)
    assert expected_immediate_reward(game, scheme, post, 0, 1, 0, (0,)) == pytest.approx(1.25)


def test_zero_probability_type_raises_with_location():
    game, fam, _ = hand_instance()
    rule = np.array([[1.0, 0.0], [1.0, 0.0]])
    fam0 = SignalingFamily((np.broadcast_to(rule[None, :, None, :], (2, 2, 1, 2)),))
    with pytest.raises(ZeroProbabilityType) as info:
        posterior(game, fam0, 0, 1, 1, (0,))
    assert (info.value.agent, info.value.theta_i, info.value.h) == (0, 1, 1)


def test_single_state_prior_is_the_rule():
    game = BaseGame(np.zeros((1, 1, 2)), np.ones((1, 2, 1)), np.ones(1), 0.9)
    rule = np.array([0.3, 0.7])
    fam = SignalingFamily((np.broadcast_to(rule, (2, 1, 1, 2)),))
    np.testing.assert_allclose(joint_prior(game, fam, 1, (0,))[0], rule)


def test_uninformative_posterior_is_the_transition():
    game, _, _ = random_instance(4)
    flat = np.full((8, 2, 1, 2), 0.5)
    fam = SignalingFamily((flat, flat))
    for h in range(8):
        post = posterior(game, fam, 0, 1, h, (0, 0))
        np.testing.assert_allclose(post.mu_s, game.transition_by_history[h], rtol=0, atol=1e-15)


def test_perfect_information_posterior_is_degenerate():
    game, _, _ = random_instance(5)
    eye = np.broadcast_to(np.eye(2)[:, None, :], (8, 2, 1, 2))
    fam = SignalingFamily((eye, eye))
    post = posterior(game, fam, 0, 1, 3, (0, 0))
    np.testing.assert_allclose(post.mu, [[0.0, 0.0], [0.0, 1.0]])


def test_point_mass_reward_is_table_entry():
    game, fam, _ = hand_instance()
    scheme = CostScheme("SAB", (np.array([[-0.3], [0.5]]),))
    mu = np.array([[1.0], [0.0]])
    post = Posterior(mu, 0, 0, 0, (0,), 1.0, np.eye(2) / 2)
    assert expected_immediate_reward(game, scheme, post, 0, 0, 0, (0,)) == pytest.approx(2.0 - 0.3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_posteriors_reassemble_the_prior(seed):
    game, fam, _ = random_instance(seed)
    counts = fam.type_counts
    for h in (0, 5):
        g = (1, 0)
        p = joint_prior(game, fam, h, g).reshape((2,) + counts)
        for i in range(2):
            for k in range(counts[i]):
                post = posterior(game, fam, i, k, h, g)
                rebuilt = post.mu * post.type_prob
                want = np.moveaxis(p, 1 + i, 1)[:, k].reshape(2, -1)
                np.testing.assert_allclose(rebuilt, want, atol=1e-12)


def test_marginals_are_consistent():
    game, fam, _ = random_instance(9)
    post = posterior(game, fam, 1, 0, 6, (1, 1))
    assert post.mu.sum() == pytest.approx(1.0, abs=1e-12)
    assert post.mu_s.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(post.mu_theta, post.mu.sum(axis=0))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(0, 7))
def test_reward_is_linear_in_posterior(w, h):
    game, fam, scheme = random_instance(2)
    p1 = posterior(game, fam, 0, 0, h, (0, 1))
    p2 = posterior(game, fam, 0, 0, h, (1, 0))
    mix = Posterior(w * p1.mu + (1 - w) * p2.mu, 0, 0, h, (0, 1), 1.0, p1.own_joint)
    # CB costs depend only on g, so hold g fixed across the mixture
    p2g = Posterior(p2.mu, 0, 0, h, (0, 1), 1.0, p1.own_joint)
    a = (1, 0)
    r = lambda q: expected_immediate_reward(game, scheme, q, 0, h, 0, a)
    assert r(mix) == pytest.approx(w * r(p1) + (1 - w) * r(p2g), abs=1e-12)


def test_vectorized_posteriors_match_scalar_ones():
    game, fam, scheme = random_instance(6)
    prof = uniform_profile(game, fam).with_beta(0, 2, 1)
    sel = Selection.from_profile(game, fam, scheme, prof.beta)
    tables = BeliefTables(game, sel, prof.pi)
    for i in range(2):
        for h in range(8):
            g = tuple(prof.beta[:, h])
            for k in range(2):
                post = posterior(game, fam, i, k, h, g)
                assert tables.type_prob[i][h, k] == pytest.approx(post.type_prob, abs=1e-14)
                np.testing.assert_allclose(tables.mu_s[i][h, k], post.mu_s, atol=1e-14)
