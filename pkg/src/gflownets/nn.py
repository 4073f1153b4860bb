"""Multi-layer perceptrons and the Adam optimizer on top of :mod:`autodiff`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, leaky_relu, matmul, tanh

__all__ = ["MlpSpec", "Mlp", "Adam"]

_ACTIVATIONS = {
    "leaky_relu": (leaky_relu, lambda x: np.where(x > 0, x, 0.01 * x)),
    "tanh": (tanh, np.tanh),
}


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a shared-trunk network with one or more output heads."""

    in_dim: int
    heads: tuple[tuple[str, int], ...]
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.in_dim <= 0:
            raise ValueError("in_dim must be positive")
        if not self.heads:
            raise ValueError("at least one output head is required")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class Mlp:
    """Fully connected trunk with named linear heads.

    ``forward`` builds a differentiable graph; ``forward_np`` runs the same
    arithmetic without recording, for sampling and evaluation hot paths.
    The two paths use identical numpy expressions, so their outputs agree
    bit for bit.
    """

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self._trunk: list[tuple[Tensor, Tensor]] = []
        self._heads: dict[str, tuple[Tensor, Tensor]] = {}
        fan_in = spec.in_dim
        for i, width in enumerate(spec.hidden):
            w, b = _init_linear(fan_in, width, rng)
            self.params[f"w{i}"] = w
            self.params[f"b{i}"] = b
            self._trunk.append((w, b))
            fan_in = width
        for name, width in spec.heads:
            w, b = _init_linear(fan_in, width, rng)
            self.params[f"head_{name}_w"] = w
            self.params[f"head_{name}_b"] = b
            self._heads[name] = (w, b)
        # forward-pass economy counters, used to verify one pass per state
        self.forward_calls = 0
        self.rows_evaluated = 0

    def forward(self, x) -> dict[str, Tensor]:
        """Differentiable forward pass for a (batch, in_dim) input."""
        act, _ = _ACTIVATIONS[self.spec.activation]
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.data.ndim != 2:
            raise ValueError("forward expects a 2-D batch of encodings")
        self.forward_calls += 1
        self.rows_evaluated += h.data.shape[0]
        for w, b in self._trunk:
            h = act(add(matmul(h, w), b))
        return {name: add(matmul(h, w), b) for name, (w, b) in self._heads.items()}

    def forward_np(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Tape-free forward pass with arithmetic identical to ``forward``."""
        _, act = _ACTIVATIONS[self.spec.activation]
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2:
            raise ValueError("forward_np expects a 2-D batch of encodings")
        self.forward_calls += 1
        self.rows_evaluated += h.shape[0]
        for w, b in self._trunk:
            h = act(h @ w.data + b.data)
        return {name: h @ w.data + b.data for name, (w, b) in self._heads.items()}


def _init_linear(fan_in: int, fan_out: int, rng: np.random.Generator):
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True)
    return w, b


@dataclass
class _Slot:
    param: Tensor
    lr: float
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros_like(self.param.data)
        self.v = np.zeros_like(self.param.data)


class Adam:
    """Adam with bias correction and per-group learning rates.

    ``groups`` is a list of ``(params, lr)`` pairs.  A step in which any
    gradient contains NaN or infinity is skipped entirely: no parameter or
    moment moves and the step counter does not advance.  Skips are counted
    in ``skipped_steps`` so callers can log them.
    """

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.skipped_steps = 0
        self._slots: list[_Slot] = []
        for params, lr in groups:
            if lr <= 0:
                raise ValueError("learning rate must be positive")
            for p in params:
                if not p.requires_grad:
                    raise ValueError("optimizer received a non-trainable tensor")
                self._slots.append(_Slot(p, lr))

    def zero_grad(self) -> None:
        for slot in self._slots:
            slot.param.grad = None

    def step(self) -> bool:
        """Apply one update.  Returns False (and changes nothing) on non-finite grads."""
        grads = []
        for slot in self._slots:
            g = slot.param.grad
            g = np.zeros_like(slot.param.data) if g is None else g
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                return False
            grads.append(g)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for slot, g in zip(self._slots, grads):
            slot.m = self.beta1 * slot.m + (1.0 - self.beta1) * g
            slot.v = self.beta2 * slot.v + (1.0 - self.beta2) * (g * g)
            m_hat = slot.m / bc1
            v_hat = slot.v / bc2
            slot.param.data -= slot.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return True

    # ------------------------------------------------------------------
    # checkpoint support
    # ------------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "adam/t": np.asarray([self.t], dtype=np.int64),
            "adam/skipped": np.asarray([self.skipped_steps], dtype=np.int64),
        }
        for i, slot in enumerate(self._slots):
            out[f"adam/m/{i}"] = slot.m
            out[f"adam/v/{i}"] = slot.v
        return out

    def load_state_arrays(self, arrays) -> None:
        self.t = int(arrays["adam/t"][0])
        self.skipped_steps = int(arrays["adam/skipped"][0])
        for i, slot in enumerate(self._slots):
            slot.m = np.array(arrays[f"adam/m/{i}"], dtype=np.float64)
            slot.v = np.array(arrays[f"adam/v/{i}"], dtype=np.float64)
