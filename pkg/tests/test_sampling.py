"""Trajectory sampling: determinism, exploration noise, and marginals."""

import math

import numpy as np
import pytest
from scipy import stats

from gflownets import (
    STREAM_DIAGNOSTICS,
    STREAM_SAMPLE,
    STREAM_TRAIN,
    ExplorationPolicy,
    HyperGrid,
    TabularPolicy,
    action_probabilities,
    batch_rng,
    sample_batch,
    sample_trajectory,
    terminal_log_marginals,
    validate_trajectory,
)


def randomized_policy(env, seed, scale=1.0):
    policy = TabularPolicy(env)
    rng = np.random.default_rng(seed)
    for p in policy.parameters().values():
        p.data = rng.normal(scale=scale, size=p.data.shape)
    return policy


def as_keys(trajectories):
    return [tuple(t.actions) for t in trajectories]


# ----------------------------------------------------------------------
# determinism and stream separation
# ----------------------------------------------------------------------
def test_same_seed_and_batch_index_reproduce_the_batch():
    policy = randomized_policy(HyperGrid(6, 2), seed=0)
    a = sample_batch(policy, 16, batch_rng(7, 3))
    b = sample_batch(policy, 16, batch_rng(7, 3))
    assert as_keys(a) == as_keys(b)
    assert [t.states for t in a] == [t.states for t in b]


def test_distinct_batch_indices_and_streams_decorrelate():
    policy = randomized_policy(HyperGrid(6, 2), seed=0)
    base = as_keys(sample_batch(policy, 16, batch_rng(7, 0, STREAM_TRAIN)))
    other_batch = as_keys(sample_batch(policy, 16, batch_rng(7, 1, STREAM_TRAIN)))
    other_stream = as_keys(sample_batch(policy, 16, batch_rng(7, 0, STREAM_DIAGNOSTICS)))
    other_seed = as_keys(sample_batch(policy, 16, batch_rng(8, 0, STREAM_TRAIN)))
    assert base != other_batch
    assert base != other_stream
    assert base != other_seed
    assert STREAM_TRAIN != STREAM_DIAGNOSTICS != STREAM_SAMPLE


def test_generator_streams_differ_at_the_raw_level():
    same = batch_rng(3, 5).integers(0, 2**63, 8)
    again = batch_rng(3, 5).integers(0, 2**63, 8)
    other = batch_rng(3, 5, STREAM_SAMPLE).integers(0, 2**63, 8)
    np.testing.assert_array_equal(same, again)
    assert not np.array_equal(same, other)


# ----------------------------------------------------------------------
# every sampled trajectory is a valid complete trajectory
# ----------------------------------------------------------------------
def test_sampled_trajectories_validate():
    env = HyperGrid(5, 3, *(1e-3, 0.5, 2.0))
    policy = randomized_policy(env, seed=1)
    for traj in sample_batch(policy, 64, batch_rng(1, 0)):
        assert traj.complete
        validate_trajectory(env, traj)
        assert env.is_terminal(traj.last_state)
    single = sample_trajectory(policy, batch_rng(1, 1))
    validate_trajectory(env, single)


def test_batch_size_must_be_positive():
    policy = randomized_policy(HyperGrid(3, 1), seed=2)
    with pytest.raises(ValueError):
        sample_batch(policy, 0, batch_rng(0, 0))


# ----------------------------------------------------------------------
# exploration arithmetic
# ----------------------------------------------------------------------
def test_exploration_parameter_validation():
    with pytest.raises(ValueError):
        ExplorationPolicy(epsilon=-0.1)
    with pytest.raises(ValueError):
        ExplorationPolicy(epsilon=1.5)
    with pytest.raises(ValueError):
        ExplorationPolicy(temperature=0.0)
    assert ExplorationPolicy().is_identity
    assert not ExplorationPolicy(epsilon=0.2).is_identity
    assert not ExplorationPolicy(temperature=2.0).is_identity


def test_epsilon_mixing_formula():
    with np.errstate(divide="ignore"):
        rows = np.log(np.array([[0.7, 0.2, 0.1], [0.5, 0.5, 0.0]]))
    rows[1, 2] = -np.inf  # masked slot
    got = action_probabilities(rows, ExplorationPolicy(epsilon=0.3))
    want = np.array([
        0.7 * np.array([0.7, 0.2, 0.1]) + 0.3 / 3.0,
        0.7 * np.array([0.5, 0.5, 0.0]) + 0.3 * np.array([0.5, 0.5, 0.0]),
    ])
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert got[1, 2] == 0.0  # masked slots never gain probability


def test_tempering_exponentiates_before_mixing():
    p = np.array([0.7, 0.2, 0.1])
    rows = np.log(p)[None, :]
    got = action_probabilities(rows, ExplorationPolicy(temperature=2.0))
    want = p ** 0.5 / (p ** 0.5).sum()
    np.testing.assert_allclose(got[0], want, atol=1e-12)
    # near-zero temperature concentrates on the argmax
    cold = action_probabilities(rows, ExplorationPolicy(temperature=0.01))
    assert cold[0, 0] > 1.0 - 1e-10


def test_identity_exploration_matches_no_exploration():
    policy = randomized_policy(HyperGrid(5, 2), seed=3)
    plain = sample_batch(policy, 32, batch_rng(3, 0))
    ident = sample_batch(policy, 32, batch_rng(3, 0), ExplorationPolicy())
    assert as_keys(plain) == as_keys(ident)


def test_single_allowed_action_is_forced():
    rows = np.full((1, 4), -np.inf)
    rows[0, 2] = -1.7
    probs = action_probabilities(rows, ExplorationPolicy(epsilon=0.9, temperature=4.0))
    np.testing.assert_allclose(probs, [[0.0, 0.0, 1.0, 0.0]], atol=1e-15)


# ----------------------------------------------------------------------
# statistical checks
# ----------------------------------------------------------------------
def test_full_epsilon_draws_uniformly_over_allowed_actions():
    env = HyperGrid(4, 2)
    policy = randomized_policy(env, seed=4, scale=3.0)  # sharply peaked base
    batch = sample_batch(policy, 9999, batch_rng(4, 0), ExplorationPolicy(epsilon=1.0))
    first = np.array([t.actions[0] for t in batch])
    counts = np.bincount(first, minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_terminal_frequencies_match_exact_marginals():
    env = HyperGrid(2, 2, *(1e-3, 0.5, 2.0))
    policy = randomized_policy(env, seed=5)
    marginals = {s: math.exp(v) for s, v in terminal_log_marginals(policy).items()}
    n = 40_000
    batch = sample_batch(policy, n, batch_rng(5, 0))
    counts: dict = {}
    for t in batch:
        counts[t.last_state] = counts.get(t.last_state, 0) + 1
    assert abs(sum(marginals.values()) - 1.0) < 1e-9
    for s, p in marginals.items():
        freq = counts.get(s, 0) / n
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(freq - p) <= 4.0 * sigma + 1.0 / n, (s, freq, p)


def test_exploration_widens_the_sampled_support():
    env = HyperGrid(8, 2, *(1e-3, 0.5, 2.0))
    policy = randomized_policy(env, seed=6, scale=3.0)
    plain = {t.last_state for t in sample_batch(policy, 512, batch_rng(6, 0))}
    mixed = {
        t.last_state
        for t in sample_batch(policy, 512, batch_rng(6, 0), ExplorationPolicy(epsilon=0.5))
    }
    assert len(mixed) > len(plain)
