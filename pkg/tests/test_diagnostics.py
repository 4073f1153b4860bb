"""Gradient similarity diagnostics and exact flow substitutions."""

import math

import numpy as np
import pytest

from gflownets import (
    DIAGNOSED_OBJECTIVES,
    FLOW_SOURCES,
    HyperGrid,
    TabularPolicy,
    batch_rng,
    cross_objective_similarity,
    enumerate_complete_trajectories,
    exact_target,
    flow_override_for,
    per_trajectory_gradients,
    sample_batch,
    similarity_records,
    subbatch_similarity,
    subtb_loss,
    true_backward_log_flow,
    true_forward_log_flow,
)


def randomized_policy(env, seed, scale=1.0):
    policy = TabularPolicy(env)
    rng = np.random.default_rng(seed)
    for p in policy.parameters().values():
        p.data = rng.normal(scale=scale, size=p.data.shape)
    return policy


def setup(seed=0, n=8, height=4, ndim=2):
    env = HyperGrid(height, ndim, *(1e-3, 0.5, 2.0))
    policy = randomized_policy(env, seed)
    trajs = sample_batch(policy, n, batch_rng(seed, 0))
    return env, policy, trajs


# ----------------------------------------------------------------------
# per-trajectory gradient rows
# ----------------------------------------------------------------------
def test_mean_gradient_row_equals_trajectory_scope_batch_gradient():
    env, policy, trajs = setup(seed=0)
    rows = per_trajectory_gradients(policy, trajs, "subtb", lam=0.8)
    quantities = [policy.trajectory_quantities(t) for t in trajs]
    loss = subtb_loss(quantities, lam=0.8, scope="trajectory")
    policy.zero_grad()
    loss.backward()
    batch_grad = policy.flat_gradient(policy.policy_logit_names())
    np.testing.assert_allclose(rows.mean(axis=0), batch_grad, atol=1e-12)


def test_gradient_rows_cover_only_policy_logits():
    env, policy, trajs = setup(seed=1, n=4)
    rows = per_trajectory_gradients(policy, trajs, "db")
    width = policy.pf_table.data.size + policy.pb_table.data.size
    assert rows.shape == (4, width)


def test_objectives_produce_distinct_gradient_rows():
    env, policy, trajs = setup(seed=2, n=4)
    by_objective = {
        obj: per_trajectory_gradients(policy, trajs, obj, lam=0.8)
        for obj in DIAGNOSED_OBJECTIVES
    }
    assert not np.allclose(by_objective["db"], by_objective["tb"])
    assert not np.allclose(by_objective["subtb"], by_objective["tb"])


# ----------------------------------------------------------------------
# sub-batch cosine curves
# ----------------------------------------------------------------------
def test_full_batch_self_similarity_is_exactly_one():
    env, policy, trajs = setup(seed=3, n=8)
    grads = per_trajectory_gradients(policy, trajs, "subtb", lam=0.8)
    assert subbatch_similarity(grads, k=3) == 1.0


def test_similarity_worked_example():
    rows = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    assert subbatch_similarity(rows, k=2) == 1.0
    assert subbatch_similarity(rows, k=1) == pytest.approx(1.0, abs=1e-12)
    assert subbatch_similarity(rows, k=0) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_antipodal_rows_average_to_zero_similarity():
    v = np.array([2.0, -1.0, 0.5])
    grads = np.stack([v, -v])
    # the full-batch mean is exactly zero, so cosines degrade to 0
    assert subbatch_similarity(grads, k=0) == 0.0


def test_similarity_input_validation():
    grads = np.ones((3, 2))
    with pytest.raises(ValueError):
        subbatch_similarity(grads, k=0)
    square = np.ones((4, 2))
    with pytest.raises(ValueError):
        subbatch_similarity(square, k=3)
    with pytest.raises(ValueError):
        subbatch_similarity(square, k=-1)


def test_tb_against_itself_at_full_batch_is_one():
    env, policy, trajs = setup(seed=4, n=8)
    assert cross_objective_similarity(policy, trajs, "tb", k=3) == 1.0


def test_self_similarity_rises_with_subbatch_size():
    env, policy, trajs = setup(seed=5, n=64, height=6)
    grads = per_trajectory_gradients(policy, trajs, "db")
    curve = [subbatch_similarity(grads, k) for k in range(7)]
    assert curve[-1] == 1.0
    assert curve[0] < curve[-1]
    # largest sub-batches should sit near the top of the curve
    assert curve[5] >= curve[0]


# ----------------------------------------------------------------------
# exact flow substitutions
# ----------------------------------------------------------------------
def brute_force_forward_flow(env, policy):
    """F(s) = Z * sum of path probabilities over trajectories visiting s."""
    non_terminal = [s for s in env.states() if not env.is_terminal(s)]
    rows = policy.log_pf_matrix(non_terminal)
    row_of = {s: i for i, s in enumerate(non_terminal)}
    z = math.exp(exact_target(env).log_z)
    visit: dict = {}
    for traj in enumerate_complete_trajectories(env):
        p = math.exp(sum(
            rows[row_of[s], a] for s, a in zip(traj.states[:-1], traj.actions)
        ))
        for s in traj.states:
            visit[s] = visit.get(s, 0.0) + p
    return {s: z * v for s, v in visit.items()}


def brute_force_backward_flow(env, policy):
    """F(s) = sum over trajectories through s of R(end) * backward weight."""
    non_initial = [s for s in env.states() if not env.is_initial(s)]
    rows = policy.log_pb_matrix(non_initial)
    row_of = {s: i for i, s in enumerate(non_initial)}
    out: dict = {}
    for traj in enumerate_complete_trajectories(env):
        w = math.exp(sum(
            rows[row_of[t], env.backward_action_index(t, a)]
            for t, a in zip(traj.states[1:], traj.actions)
        ))
        mass = math.exp(env.log_reward(traj.last_state)) * w
        for s in traj.states:
            out[s] = out.get(s, 0.0) + mass
    return out


def test_true_forward_flow_matches_trajectory_enumeration():
    env, policy, _ = setup(seed=6, n=1, height=3)
    got = true_forward_log_flow(policy)
    want = brute_force_forward_flow(env, policy)
    assert set(got) == set(env.states())
    for s, v in want.items():
        assert math.exp(got[s]) == pytest.approx(v, abs=1e-10)
    log_z = exact_target(env).log_z
    assert got[env.initial_state()] == pytest.approx(log_z, abs=1e-12)
    terminal_total = sum(math.exp(got[s]) for s in env.terminal_states())
    assert terminal_total == pytest.approx(math.exp(log_z), abs=1e-9)


def test_true_backward_flow_matches_trajectory_enumeration():
    env, policy, _ = setup(seed=7, n=1, height=3)
    got = true_backward_log_flow(policy)
    want = brute_force_backward_flow(env, policy)
    for s, v in want.items():
        assert math.exp(got[s]) == pytest.approx(v, abs=1e-10)
    # terminal flows are the rewards; the initial flow is the partition sum
    for s in env.terminal_states():
        assert got[s] == pytest.approx(env.log_reward(s), abs=1e-12)
    assert got[env.initial_state()] == pytest.approx(exact_target(env).log_z, abs=1e-10)


def test_flow_override_selection_and_effect():
    env, policy, trajs = setup(seed=8, n=4)
    assert flow_override_for(policy, "learned") is None
    with pytest.raises(ValueError):
        flow_override_for(policy, "oracle")
    learned = per_trajectory_gradients(policy, trajs, "db")
    substituted = per_trajectory_gradients(
        policy, trajs, "db", flow_override=flow_override_for(policy, "true_backward"))
    assert not np.allclose(learned, substituted)
    # intermediate flows cancel out of the TB residual, and both exact
    # sources pin the initial slot to the true partition function, so the
    # two substitutions give the same TB gradients
    tb_forward = per_trajectory_gradients(
        policy, trajs, "tb", flow_override=flow_override_for(policy, "true_forward"))
    tb_backward = per_trajectory_gradients(
        policy, trajs, "tb", flow_override=flow_override_for(policy, "true_backward"))
    np.testing.assert_allclose(tb_forward, tb_backward, rtol=1e-9, atol=1e-9)


# ----------------------------------------------------------------------
# record emission
# ----------------------------------------------------------------------
def test_similarity_records_schema_and_coverage():
    env, policy, trajs = setup(seed=9, n=8)
    rows = similarity_records(policy, trajs, lam=0.8, iteration=500)
    assert len(rows) == len(FLOW_SOURCES) * len(DIAGNOSED_OBJECTIVES) * 2 * 4
    pairs = {r["objective_pair"] for r in rows}
    assert pairs == {
        "db_self", "db_vs_tb", "subtb_self", "subtb_vs_tb", "tb_self", "tb_vs_tb",
    }
    assert {r["flow_source"] for r in rows} == set(FLOW_SOURCES)
    for r in rows:
        assert r["iteration"] == 500
        assert 0 <= r["k"] <= 3
        assert -1.0 - 1e-12 <= r["mean_cosine"] <= 1.0 + 1e-12
    full_tb = [r for r in rows if r["objective_pair"] == "tb_vs_tb" and r["k"] == 3]
    assert all(r["mean_cosine"] == 1.0 for r in full_tb)


def test_similarity_records_require_power_of_two_batches():
    env, policy, trajs = setup(seed=10, n=8)
    with pytest.raises(ValueError):
        similarity_records(policy, trajs[:5])
