"""MLP construction, tape/numpy agreement, and Adam update contracts."""

import numpy as np
import pytest

from gflownets.autodiff import Tensor, tsum
from gflownets.nn import Adam, Mlp, MlpSpec


def make_mlp(seed=0, in_dim=5, hidden=(8, 6), activation="leaky_relu"):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(in_dim, (("a", 3), ("b", 1)), hidden, activation)
    return Mlp(spec, rng)


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec(0, (("a", 1),))
    with pytest.raises(ValueError):
        MlpSpec(3, ())
    with pytest.raises(ValueError):
        MlpSpec(3, (("a", 1),), activation="relu6")


def test_init_is_uniform_within_fan_in_bound():
    mlp = make_mlp(seed=3, in_dim=16)
    w0 = mlp.params["w0"].data
    bound = 1.0 / 4.0
    assert np.all(np.abs(w0) <= bound)
    assert w0.std() > 0.1 * bound  # actually random, not degenerate


@pytest.mark.parametrize("activation", ["leaky_relu", "tanh"])
def test_forward_and_forward_np_agree_exactly(activation):
    mlp = make_mlp(seed=1, activation=activation)
    x = np.random.default_rng(2).normal(size=(7, 5))
    tape = mlp.forward(x)
    plain = mlp.forward_np(x)
    for name in ("a", "b"):
        np.testing.assert_array_equal(tape[name].data, plain[name])


def test_forward_counters_track_calls_and_rows():
    mlp = make_mlp()
    x = np.zeros((4, 5))
    mlp.forward(x)
    mlp.forward_np(x)
    assert mlp.forward_calls == 2
    assert mlp.rows_evaluated == 8


def test_forward_rejects_non_batched_input():
    mlp = make_mlp()
    with pytest.raises(ValueError):
        mlp.forward(np.zeros(5))
    with pytest.raises(ValueError):
        mlp.forward_np(np.zeros(5))


def test_mlp_gradients_flow_to_all_parameters():
    mlp = make_mlp(seed=4)
    x = np.random.default_rng(5).normal(size=(3, 5))
    heads = mlp.forward(x)
    (tsum(heads["a"]) + tsum(heads["b"])).backward()
    for name, p in mlp.params.items():
        assert p.grad is not None, name
        assert np.any(p.grad != 0.0), name


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------
def test_adam_first_step_matches_hand_computation():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam([([p], 0.1)])
    p.grad = np.array([0.5, -1.0])
    assert opt.step()
    # with bias correction the first step moves by lr * g/(|g| + eps)
    expected = np.array([1.0, 2.0]) - 0.1 * np.array([0.5, -1.0]) / (
        np.abs(np.array([0.5, -1.0])) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    assert opt.t == 1


def test_adam_second_step_uses_bias_corrected_moments():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([([p], 0.01)])
    g1, g2 = np.array([1.0]), np.array([2.0])
    p.grad = g1.copy()
    opt.step()
    p.grad = g2.copy()
    opt.step()
    m = 0.9 * (0.1 * g1) + 0.1 * g2
    v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
    m_hat = m / (1 - 0.9**2)
    v_hat = v / (1 - 0.999**2)
    step1 = 0.01 * (0.1 * g1 / (1 - 0.9)) / (np.sqrt(0.001 * g1**2 / (1 - 0.999)) + 1e-8)
    expected = -step1 - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_adam_per_group_learning_rates():
    a = Tensor(np.array([0.0]), requires_grad=True)
    b = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([([a], 0.001), ([b], 0.01)])
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(b.data, 10.0 * a.data, rtol=1e-9)


def test_adam_skips_whole_step_on_nonfinite_gradient():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([([a, b], 0.1)])
    a.grad = np.array([np.nan])
    b.grad = np.array([1.0])
    assert not opt.step()
    np.testing.assert_array_equal(a.data, [1.0])
    np.testing.assert_array_equal(b.data, [1.0])
    assert opt.t == 0
    assert opt.skipped_steps == 1
    # moments untouched: a later clean step behaves like the first step
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    assert opt.step()
    assert opt.t == 1


def test_adam_missing_gradient_counts_as_zero():
    a = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([([a], 0.1)])
    assert opt.step()
    np.testing.assert_array_equal(a.data, [1.0])


def test_adam_rejects_bad_inputs():
    p = Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(ValueError):
        Adam([([p], 0.0)])
    with pytest.raises(ValueError):
        Adam([([Tensor(np.zeros(1))], 0.1)])


def test_adam_state_roundtrip_resumes_identically():
    rng = np.random.default_rng(8)

    def run(steps, carry_state=None, start=None):
        p = Tensor(np.zeros(3) if start is None else start.copy(), requires_grad=True)
        opt = Adam([([p], 0.05)])
        if carry_state is not None:
            opt.load_state_arrays(carry_state)
        gs = rng.normal(size=(steps, 3))
        for g in gs:
            p.grad = g.copy()
            opt.step()
        return p.data.copy(), opt.state_arrays()

    rng = np.random.default_rng(8)
    full, _ = run(6)
    rng = np.random.default_rng(8)
    half, state = run(3)
    resumed, _ = run(3, carry_state={k: np.array(v) for k, v in state.items()}, start=half)
    np.testing.assert_array_equal(full, resumed)
