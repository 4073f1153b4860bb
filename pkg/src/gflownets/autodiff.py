"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and records the primitive operation
that produced it, forming a dynamic computation graph.  Calling
:meth:`Tensor.backward` on a scalar output walks the graph once in reverse
topological order and accumulates gradients into every tensor created with
``requires_grad=True``.

Only the primitives needed by the policy/objective stack are provided:
dense affine maps, pointwise nonlinearities, masked log-softmax, flat
gather, concatenation, cumulative and full sums, and log-sum-exp.  All
arithmetic is float64; there is no implicit down-casting.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "add",
    "mul",
    "matmul",
    "leaky_relu",
    "tanh",
    "masked_log_softmax",
    "gather_flat",
    "concat",
    "reshape",
    "cumsum",
    "tsum",
    "logsumexp",
    "logaddexp_const",
    "finite_difference_gradient",
]


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """Node of the computation graph.

    Parameters
    ----------
    data : array_like
        Values, converted to a float64 ndarray.
    requires_grad : bool
        Whether gradients should be accumulated into ``self.grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward_fn=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = _parents
        self._backward_fn = _backward_fn

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # graph traversal
    # ------------------------------------------------------------------
    def backward(self, seed=None) -> None:
        """Accumulate gradients of ``self`` into all upstream tensors.

        ``seed`` defaults to 1 and is only optional for scalar outputs.
        Each node is visited exactly once, in reverse topological order,
        so gradient accumulation is linear in graph size.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar tensor")
            seed = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): _as_array(seed).reshape(self.data.shape)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ------------------------------------------------------------------
    # operator sugar
    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, mul_scalar(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul_scalar(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        raise TypeError("tensor division only supports scalar divisors")

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Create a graph leaf."""
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    """Create a leaf that never receives gradients."""
    return Tensor(data, requires_grad=False)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; each node appears after all its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _requires(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out_data, _requires(a, b), (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor(out_data, _requires(a, b), (a, b), backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def backward(g):
        return (g * c,)

    return Tensor(out_data, _requires(a), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out_data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out_data, _requires(a, b), (a, b), backward)


def leaky_relu(x: Tensor, negative_slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    out_data = np.where(pos, x.data, negative_slope * x.data)

    def backward(g):
        return (np.where(pos, g, negative_slope * g),)

    return Tensor(out_data, _requires(x), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor(out_data, _requires(x), (x,), backward)


def masked_log_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Log-softmax along the last axis restricted to ``mask == True`` entries.

    Disallowed entries are -inf in the output and receive zero gradient.
    Every row must contain at least one allowed entry.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.data.shape:
        raise ValueError("mask shape must match logits shape")
    if not mask.any(axis=-1).all():
        raise ValueError("each row needs at least one allowed entry")
    masked = np.where(mask, x.data, -np.inf)
    peak = np.max(masked, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(masked - peak), axis=-1, keepdims=True)) + peak
    out_data = np.where(mask, x.data - log_norm, -np.inf)
    probs = np.where(mask, np.exp(out_data), 0.0)

    def backward(g):
        g = np.where(mask, g, 0.0)
        return (g - probs * np.sum(g, axis=-1, keepdims=True),)

    return Tensor(out_data, _requires(x), (x,), backward)


def gather_flat(x: Tensor, flat_indices) -> Tensor:
    """Pick ``x.flat[flat_indices]`` as a 1-D tensor.

    The backward pass scatter-adds, so repeated indices accumulate.
    """
    idx = np.asarray(flat_indices, dtype=np.intp).ravel()
    out_data = x.data.ravel()[idx]

    def backward(g):
        gx = np.zeros(x.data.size, dtype=np.float64)
        np.add.at(gx, idx, g)
        return (gx.reshape(x.data.shape),)

    return Tensor(out_data, _requires(x), (x,), backward)


def concat(tensors) -> Tensor:
    """Concatenate 1-D tensors (scalars are treated as length-1)."""
    parts = [t if isinstance(t, Tensor) else constant(t) for t in tensors]
    sizes = [p.data.size for p in parts]
    out_data = np.concatenate([p.data.reshape(-1) for p in parts])
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[offsets[i]:offsets[i + 1]].reshape(p.data.shape)
            for i, p in enumerate(parts)
        )

    return Tensor(out_data, _requires(*parts), tuple(parts), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return Tensor(out_data, _requires(x), (x,), backward)


def cumsum(x: Tensor) -> Tensor:
    """Inclusive prefix sum of a 1-D tensor."""
    if x.data.ndim != 1:
        raise ValueError("cumsum expects a 1-D tensor")
    out_data = np.cumsum(x.data)

    def backward(g):
        return (np.cumsum(g[::-1])[::-1],)

    return Tensor(out_data, _requires(x), (x,), backward)


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out_data = np.asarray(x.data.sum())

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return Tensor(out_data, _requires(x), (x,), backward)


def logsumexp(x: Tensor) -> Tensor:
    """log(sum(exp(x))) of a 1-D tensor, stable against large magnitudes."""
    if x.data.ndim != 1:
        raise ValueError("logsumexp expects a 1-D tensor")
    peak = np.max(x.data)
    if not np.isfinite(peak):
        peak = 0.0
    out_data = np.asarray(np.log(np.sum(np.exp(x.data - peak))) + peak)
    weights = np.exp(x.data - out_data)

    def backward(g):
        return (g * weights,)

    return Tensor(out_data, _requires(x), (x,), backward)


def logaddexp_const(x: Tensor, log_const: float) -> Tensor:
    """Elementwise log(exp(x) + c) given log c, used for damped flow ratios."""
    out_data = np.logaddexp(x.data, log_const)
    weight = np.exp(x.data - out_data)

    def backward(g):
        return (g * weight,)

    return Tensor(out_data, _requires(x), (x,), backward)


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------
def finite_difference_gradient(fn, arrays, index: int, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``fn(*arrays)`` w.r.t. ``arrays[index]``.

    ``fn`` must return a float.  Used as the reference oracle when checking
    the reverse-mode engine.
    """
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        orig = target[ix]
        h = step * max(1.0, abs(orig))
        target[ix] = orig + h
        up = fn(*base)
        target[ix] = orig - h
        down = fn(*base)
        target[ix] = orig
        grad[ix] = (up - down) / (2.0 * h)
        it.iternext()
    return grad
