"""Parameterizations of forward/backward policies and state or edge flows.

Each parameterization exposes two evaluation paths:

* fast numpy paths (``log_pf_matrix`` and friends) used while sampling and
  in dynamic-programming evaluations, and
* a differentiable path (``trajectory_quantities``) that assembles, for one
  trajectory, the per-transition log-probabilities and per-state log-flows
  as graph tensors for the balance objectives.

Both paths share the same arithmetic, so they agree exactly.

The per-state log-flow vector substitutes the scalar ``log Z`` parameter at
the initial state and ``log R`` at the terminal state.  An optional
``flow_override`` mapping replaces learned non-terminal flows by fixed
constants, which the gradient diagnostics use to study objectives at
externally supplied flows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import EnvironmentMismatchError, NonFiniteLogitError
from .nn import Mlp, MlpSpec

__all__ = [
    "TransitionQuantities",
    "TabularPolicy",
    "MlpPolicy",
    "EdgeFlowPolicy",
    "FlowMatchingQuantities",
]


@dataclass
class TransitionQuantities:
    """Differentiable quantities of one trajectory.

    ``log_pf`` and ``log_pb`` have one entry per transition; ``log_flow``
    has one entry per state, with the initial slot holding ``log Z`` and
    the terminal slot holding the constant ``log R``.
    """

    log_pf: Tensor
    log_pb: Tensor
    log_flow: Tensor
    log_reward: float | None
    trajectory: object


@dataclass
class FlowMatchingQuantities:
    """Per-state inflow/outflow log-sums for the non-initial states of a trajectory."""

    log_inflow: Tensor
    log_outflow: Tensor
    trajectory: object


def _stack_forward_masks(env, states) -> np.ndarray:
    return np.stack([env.forward_mask(s) for s in states])


def _stack_backward_masks(env, states) -> np.ndarray:
    return np.stack([env.backward_mask(s) for s in states])


def _check_finite_logits(rows: np.ndarray, masks: np.ndarray, states) -> None:
    bad = ~np.isfinite(np.where(masks, rows, 0.0))
    if bad.any():
        which = int(np.flatnonzero(bad.any(axis=-1))[0])
        raise NonFiniteLogitError(
            f"non-finite policy logits for state {states[which]}", state=states[which]
        )


def _masked_log_softmax_np(rows: np.ndarray, masks: np.ndarray) -> np.ndarray:
    masked = np.where(masks, rows, -np.inf)
    peak = np.max(masked, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(masked - peak), axis=-1, keepdims=True)) + peak
    return np.where(masks, rows - log_norm, -np.inf)


def _uniform_log_pb_rows(masks: np.ndarray) -> np.ndarray:
    counts = masks.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.where(masks, -np.log(counts), -np.inf)


class _PolicyBase:
    """Shared helpers for state-flow parameterizations."""

    env = None
    uniform_pb = False

    # -- required hooks -------------------------------------------------
    def _pf_rows_np(self, states) -> np.ndarray:
        raise NotImplementedError

    def _pb_rows_np(self, states) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def policy_logit_names(self) -> list[str]:
        """Parameters counted as policy logits by the gradient diagnostics."""
        raise NotImplementedError

    # -- numpy fast paths ------------------------------------------------
    def log_pf_matrix(self, states) -> np.ndarray:
        """Rows of normalized forward log-probabilities, -inf where masked."""
        masks = _stack_forward_masks(self.env, states)
        rows = self._pf_rows_np(states)
        _check_finite_logits(rows, masks, states)
        return _masked_log_softmax_np(rows, masks)

    def log_pb_matrix(self, states) -> np.ndarray:
        masks = _stack_backward_masks(self.env, states)
        if self.uniform_pb:
            return _uniform_log_pb_rows(masks)
        rows = self._pb_rows_np(states)
        _check_finite_logits(rows, masks, states)
        return _masked_log_softmax_np(rows, masks)

    def log_state_flow(self, state) -> float:
        """Learned log F(s) with terminal and initial-state substitution.

        Terminal states return log R(x) from the environment; the initial
        state returns the log Z parameter when the parameterization ties
        them (state-flow parameterizations do).
        """
        env = self.env
        if env.is_terminal(state):
            return env.log_reward(state)
        if env.is_initial(state) and hasattr(self, "log_z"):
            return float(self.log_z.data)
        return float(self.log_flow_np([state])[0])

    # -- gradients --------------------------------------------------------
    def flat_gradient(self, names=None) -> np.ndarray:
        """Concatenate gradients of the named parameters (all by default)."""
        params = self.parameters()
        names = list(params) if names is None else list(names)
        parts = []
        for name in names:
            p = params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            parts.append(np.asarray(g, dtype=np.float64).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # -- checkpointing ------------------------------------------------------
    def save_arrays(self) -> dict[str, np.ndarray]:
        return {f"param/{k}": v.data for k, v in self.parameters().items()}

    def load_arrays(self, arrays) -> None:
        for k, v in self.parameters().items():
            stored = np.asarray(arrays[f"param/{k}"], dtype=np.float64)
            if stored.shape != v.data.shape:
                raise EnvironmentMismatchError(
                    f"checkpoint shape {stored.shape} does not match parameter {k} {v.data.shape}"
                )
            v.data = stored.copy()


class TabularPolicy(_PolicyBase):
    """One logit row per state: forward logits, backward logits, log-flows, log Z.

    All tables start at zero, so the initial policy is uniform over the
    allowed actions and all flows start at 1.
    """

    kind = "tabular"

    def __init__(self, env, uniform_pb: bool = False):
        env._require_enumerable()
        self.env = env
        self.uniform_pb = uniform_pb
        n = env.n_states
        self.pf_table = Tensor(np.zeros((n, env.n_forward_actions)), requires_grad=True)
        self.flow_table = Tensor(np.zeros(n), requires_grad=True)
        self.log_z = Tensor(np.zeros(()), requires_grad=True)
        if not uniform_pb:
            self.pb_table = Tensor(np.zeros((n, env.n_backward_actions)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = {"pf": self.pf_table, "flow": self.flow_table, "log_z": self.log_z}
        if not self.uniform_pb:
            out["pb"] = self.pb_table
        return out

    def policy_logit_names(self) -> list[str]:
        return ["pf"] if self.uniform_pb else ["pf", "pb"]

    def param_groups(self, lr: float, z_lr_multiplier: float = 10.0):
        main = [p for name, p in self.parameters().items() if name != "log_z"]
        return [(main, lr), ([self.log_z], lr * z_lr_multiplier)]

    # -- row lookups -------------------------------------------------------
    def _indices(self, states) -> np.ndarray:
        return np.asarray([self.env.state_index(s) for s in states], dtype=np.intp)

    def _pf_rows_np(self, states) -> np.ndarray:
        return self.pf_table.data[self._indices(states)]

    def _pb_rows_np(self, states) -> np.ndarray:
        return self.pb_table.data[self._indices(states)]

    def log_flow_np(self, states) -> np.ndarray:
        """Learned non-terminal log-flows without Z or reward substitution."""
        return self.flow_table.data[self._indices(states)]

    # -- differentiable path -------------------------------------------------
    def trajectory_quantities(self, trajectory, flow_override=None) -> TransitionQuantities:
        env = self.env
        states = trajectory.states
        actions = np.asarray(trajectory.actions, dtype=np.intp)
        n = trajectory.n_transitions
        idx = self._indices(states)
        n_f = env.n_forward_actions

        fwd_masks = _stack_forward_masks(env, states[:-1])
        flat_rows = (idx[:-1, None] * n_f + np.arange(n_f)[None, :]).ravel()
        pf_rows = ad.reshape(ad.gather_flat(self.pf_table, flat_rows), (n, n_f))
        _check_finite_logits(pf_rows.data, fwd_masks, states[:-1])
        pf_log = ad.masked_log_softmax(pf_rows, fwd_masks)
        log_pf = ad.gather_flat(pf_log, np.arange(n) * n_f + actions)

        slots = np.asarray(
            [env.backward_action_index(t, a) for t, a in zip(states[1:], trajectory.actions)],
            dtype=np.intp,
        )
        bwd_masks = _stack_backward_masks(env, states[1:])
        if self.uniform_pb:
            rows = _uniform_log_pb_rows(bwd_masks)
            log_pb = ad.constant(rows[np.arange(n), slots])
        else:
            n_b = env.n_backward_actions
            flat_rows_b = (idx[1:, None] * n_b + np.arange(n_b)[None, :]).ravel()
            pb_rows = ad.reshape(ad.gather_flat(self.pb_table, flat_rows_b), (n, n_b))
            _check_finite_logits(pb_rows.data, bwd_masks, states[1:])
            pb_log = ad.masked_log_softmax(pb_rows, bwd_masks)
            log_pb = ad.gather_flat(pb_log, np.arange(n) * n_b + slots)

        log_flow, log_reward = _assemble_log_flow(
            self, states, idx, flow_override,
            gather=lambda mids: ad.gather_flat(self.flow_table, idx[mids]),
        )
        return TransitionQuantities(log_pf, log_pb, log_flow, log_reward, trajectory)


class MlpPolicy(_PolicyBase):
    """Shared-trunk network with forward, backward, and flow heads plus log Z.

    ``trajectory_quantities`` evaluates the network exactly once on the
    trajectory's distinct states and slices every head from that single
    pass.
    """

    kind = "mlp"

    def __init__(self, env, hidden=(256, 256), activation: str = "leaky_relu",
                 uniform_pb: bool = False, seed: int = 0):
        self.env = env
        self.uniform_pb = uniform_pb
        heads = [("pf", env.n_forward_actions), ("flow", 1)]
        if not uniform_pb:
            heads.insert(1, ("pb", env.n_backward_actions))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4,)))
        self.mlp = Mlp(MlpSpec(env.encoding_dim, tuple(heads), tuple(hidden), activation), rng)
        self.log_z = Tensor(np.zeros(()), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.mlp.params)
        out["log_z"] = self.log_z
        return out

    def policy_logit_names(self) -> list[str]:
        raise EnvironmentMismatchError(
            "per-trajectory gradient diagnostics require a tabular parameterization"
        )

    def param_groups(self, lr: float, z_lr_multiplier: float = 10.0):
        return [(list(self.mlp.params.values()), lr), ([self.log_z], lr * z_lr_multiplier)]

    def _encode(self, states) -> np.ndarray:
        return np.stack([self.env.encode(s) for s in states])

    def _pf_rows_np(self, states) -> np.ndarray:
        return self.mlp.forward_np(self._encode(states))["pf"]

    def _pb_rows_np(self, states) -> np.ndarray:
        return self.mlp.forward_np(self._encode(states))["pb"]

    def log_flow_np(self, states) -> np.ndarray:
        return self.mlp.forward_np(self._encode(states))["flow"][:, 0]

    def trajectory_quantities(self, trajectory, flow_override=None) -> TransitionQuantities:
        env = self.env
        states = trajectory.states
        actions = np.asarray(trajectory.actions, dtype=np.intp)
        n = trajectory.n_transitions
        n_f = env.n_forward_actions

        heads = self.mlp.forward(self._encode(states))

        fwd_masks = _stack_forward_masks(env, states[:-1])
        pf_rows = ad.reshape(ad.gather_flat(heads["pf"], np.arange(n * n_f)), (n, n_f))
        _check_finite_logits(pf_rows.data, fwd_masks, states[:-1])
        pf_log = ad.masked_log_softmax(pf_rows, fwd_masks)
        log_pf = ad.gather_flat(pf_log, np.arange(n) * n_f + actions)

        slots = np.asarray(
            [env.backward_action_index(t, a) for t, a in zip(states[1:], trajectory.actions)],
            dtype=np.intp,
        )
        bwd_masks = _stack_backward_masks(env, states[1:])
        if self.uniform_pb:
            rows = _uniform_log_pb_rows(bwd_masks)
            log_pb = ad.constant(rows[np.arange(n), slots])
        else:
            n_b = env.n_backward_actions
            pb_all = heads["pb"]
            pb_rows = ad.reshape(
                ad.gather_flat(pb_all, np.arange(n_b, (n + 1) * n_b)), (n, n_b)
            )
            _check_finite_logits(pb_rows.data, bwd_masks, states[1:])
            pb_log = ad.masked_log_softmax(pb_rows, bwd_masks)
            log_pb = ad.gather_flat(pb_log, np.arange(n) * n_b + slots)

        flow_col = heads["flow"]
        log_flow, log_reward = _assemble_log_flow(
            self, states, None, flow_override,
            gather=lambda mids: ad.gather_flat(flow_col, np.asarray(mids, dtype=np.intp)),
        )
        return TransitionQuantities(log_pf, log_pb, log_flow, log_reward, trajectory)


def _assemble_log_flow(policy, states, idx, flow_override, gather):
    """Build the per-state log-flow vector of a trajectory.

    ``gather`` maps a list of positions within the trajectory to a tensor of
    learned flows for those states (tabular passes state indices through
    ``idx``; the network variant indexes its flow head rows directly).
    """
    env = policy.env
    n_states = len(states)
    last_terminal = env.is_terminal(states[-1])
    log_reward = env.log_reward(states[-1]) if last_terminal else None

    parts = []
    if flow_override is not None:
        first = ad.constant(np.asarray([float(flow_override[states[0]])]))
    elif env.is_initial(states[0]):
        first = ad.reshape(policy.log_z, (1,))
    else:
        first = ad.reshape(gather([0] if idx is None else [0]), (1,))
    parts.append(first)

    mid_positions = list(range(1, n_states - 1 if last_terminal else n_states))
    if mid_positions:
        if flow_override is not None:
            parts.append(ad.constant(
                np.asarray([float(flow_override[states[i]]) for i in mid_positions])
            ))
        else:
            parts.append(gather(mid_positions))
    if last_terminal:
        parts.append(ad.constant(np.asarray([log_reward])))
    return ad.concat(parts), log_reward


class EdgeFlowPolicy(_PolicyBase):
    """Log-flow per DAG edge; the forward policy is its softmax per state.

    State flows and the backward policy are derived: the flow of a
    non-terminal state is the log-sum-exp of its outgoing edges, the
    partition function is the initial state's flow, and the backward
    probability of an edge is its share of the child's inflow.
    """

    kind = "edge"

    def __init__(self, env):
        env._require_enumerable()
        self.env = env
        self.edge_table = Tensor(
            np.zeros((env.n_states, env.n_forward_actions)), requires_grad=True
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"edge": self.edge_table}

    def policy_logit_names(self) -> list[str]:
        raise EnvironmentMismatchError(
            "per-trajectory gradient diagnostics require a tabular parameterization"
        )

    def param_groups(self, lr: float, z_lr_multiplier: float = 10.0):
        return [([self.edge_table], lr)]

    def _indices(self, states) -> np.ndarray:
        return np.asarray([self.env.state_index(s) for s in states], dtype=np.intp)

    def _pf_rows_np(self, states) -> np.ndarray:
        return self.edge_table.data[self._indices(states)]

    def log_pb_matrix(self, states) -> np.ndarray:
        """Backward probabilities induced by edge flows (derived, not learned)."""
        env = self.env
        out = np.full((len(states), env.n_backward_actions), -np.inf)
        for i, t in enumerate(states):
            if env.is_initial(t):
                continue
            entries = []
            for parent, action in env.parents(t):
                slot = env.backward_action_index(t, action)
                entries.append((slot, self.edge_table.data[env.state_index(parent), action]))
            if not entries:
                continue
            values = np.asarray([v for _, v in entries])
            norm = _logsumexp_np(values)
            for (slot, v) in entries:
                out[i, slot] = v - norm
        return out

    def log_flow_np(self, states) -> np.ndarray:
        """Derived state log-flow: log-sum-exp of outgoing edges, log R at terminals."""
        env = self.env
        out = np.empty(len(states))
        masks = _stack_forward_masks(env, states)
        rows = self.edge_table.data[self._indices(states)]
        for i, s in enumerate(states):
            if env.is_terminal(s):
                out[i] = env.log_reward(s)
            else:
                out[i] = _logsumexp_np(rows[i][masks[i]])
        return out

    def log_partition(self) -> float:
        """log Z as the derived flow of the initial state."""
        return float(self.log_flow_np([self.env.initial_state()])[0])

    def trajectory_quantities(self, trajectory, flow_override=None):
        raise EnvironmentMismatchError(
            "edge-flow parameterizations train with the flow-matching objective; "
            "balance objectives need state-flow parameterizations"
        )

    def flow_matching_quantities(self, trajectory, epsilon: float = 0.0) -> FlowMatchingQuantities:
        """Inflow and outflow log-sums for states s_1..s_n of the trajectory.

        ``epsilon`` dampens both sides as log(eps + sum), matching the
        flow-matching loss definition; zero leaves sums untouched.
        """
        env = self.env
        log_eps = -np.inf if epsilon == 0.0 else float(np.log(epsilon))
        in_parts, out_parts = [], []
        for state in trajectory.states[1:]:
            in_edges = env.parents(state)
            flat = [env.state_index(p) * env.n_forward_actions + a for p, a in in_edges]
            inflow = ad.logsumexp(ad.gather_flat(self.edge_table, np.asarray(flat, dtype=np.intp)))
            if env.is_terminal(state):
                outflow = ad.constant(np.asarray(env.log_reward(state)))
            else:
                mask = env.forward_mask(state)
                row = env.state_index(state) * env.n_forward_actions
                flat_out = row + np.flatnonzero(mask)
                outflow = ad.logsumexp(ad.gather_flat(self.edge_table, flat_out))
            if log_eps > -np.inf:
                inflow = ad.logaddexp_const(ad.reshape(inflow, (1,)), log_eps)
                outflow = ad.logaddexp_const(ad.reshape(outflow, (1,)), log_eps)
            in_parts.append(ad.reshape(inflow, (1,)))
            out_parts.append(ad.reshape(outflow, (1,)))
        return FlowMatchingQuantities(ad.concat(in_parts), ad.concat(out_parts), trajectory)


def _logsumexp_np(values: np.ndarray) -> float:
    peak = np.max(values)
    if not np.isfinite(peak):
        return float(peak)
    return float(np.log(np.sum(np.exp(values - peak))) + peak)
