"""Balance objectives: flow matching, detailed/trajectory balance, and SubTB.

All squared-log-ratio losses are expressed through per-transition residuals

    delta_i = log F(s_i) + log P_F(s_{i+1}|s_i) - log F(s_{i+1}) - log P_B(s_i|s_{i+1})

and their prefix sums ``D_0 = 0, D_m = delta_0 + ... + delta_{m-1}``.
Because the flow vector carries ``log Z`` at the initial slot and ``log R``
at the terminal slot, each subtrajectory balance term is ``(D_j - D_i)**2``,
the detailed-balance term is ``delta_i**2``, and the trajectory-balance
residual is ``D_n``.  This telescoped form evaluates the O(n^2)
subtrajectory pairs of one trajectory in a handful of vector ops.

Weighted SubTB combines all pairs with geometric weights ``lam**(j-i)``,
normalized either over the whole batch (default) or within each
trajectory.  Weights are normalized in log space, so extreme ``lam``
values reproduce the detailed-balance (lam -> 0) and trajectory-balance
(lam -> inf) endpoints without overflow.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import EnvironmentMismatchError, NonFiniteLossError
from .policies import EdgeFlowPolicy

__all__ = [
    "transition_residuals",
    "prefix_residuals",
    "subtrajectory_loss",
    "subtrajectory_pair_count",
    "pair_indices",
    "normalized_pair_weights",
    "subtb_loss",
    "tb_loss",
    "db_loss",
    "fm_loss",
    "per_trajectory_loss",
    "batch_loss",
    "OBJECTIVES",
]

OBJECTIVES = ("fm", "db", "tb", "subtb")


def transition_residuals(tq) -> Tensor:
    """Per-transition detailed-balance residuals delta_i of one trajectory."""
    n = tq.trajectory.n_transitions
    lo = ad.gather_flat(tq.log_flow, np.arange(n))
    hi = ad.gather_flat(tq.log_flow, np.arange(1, n + 1))
    return lo + tq.log_pf - hi - tq.log_pb


def prefix_residuals(tq) -> Tensor:
    """Prefix sums D_0..D_n of the transition residuals, with D_0 = 0."""
    return ad.concat([ad.constant(np.zeros(1)), ad.cumsum(transition_residuals(tq))])


def subtrajectory_loss(tq, i: int, j: int) -> Tensor:
    """Squared balance residual of the subtrajectory s_i..s_j."""
    n = tq.trajectory.n_transitions
    if not 0 <= i < j <= n:
        raise ValueError(f"need 0 <= i < j <= {n}, got ({i}, {j})")
    d = prefix_residuals(tq)
    diff = ad.gather_flat(d, [j]) - ad.gather_flat(d, [i])
    return ad.tsum(ad.mul(diff, diff))


def subtrajectory_pair_count(n: int, l_max: int | None = None) -> int:
    """Number of (i, j) pairs with 0 <= i < j <= n and j - i <= l_max."""
    if l_max is None or l_max >= n:
        return n * (n + 1) // 2
    if l_max < 1:
        raise ValueError("l_max must be at least 1")
    # gaps 1..l_max contribute n+1-gap pairs each
    return sum(n + 1 - g for g in range(1, l_max + 1))


@functools.lru_cache(maxsize=512)
def pair_indices(n: int, l_max: int | None = None):
    """Index arrays (starts, ends, gaps) of all counted subtrajectory pairs."""
    starts, ends = np.triu_indices(n + 1, k=1)
    if l_max is not None and l_max < n:
        keep = (ends - starts) <= l_max
        starts, ends = starts[keep], ends[keep]
    gaps = ends - starts
    for arr in (starts, ends, gaps):
        arr.setflags(write=False)
    return starts, ends, gaps


def normalized_pair_weights(gaps: np.ndarray, lam: float) -> np.ndarray:
    """exp-normalized geometric weights lam**gap, stable for extreme lam."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    log_w = gaps.astype(np.float64) * math.log(lam)
    log_w -= log_w.max()
    w = np.exp(log_w)
    return w / w.sum()


def _squared_pair_residuals(tq, l_max):
    n = tq.trajectory.n_transitions
    starts, ends, gaps = pair_indices(n, l_max)
    d = prefix_residuals(tq)
    diff = ad.gather_flat(d, ends) - ad.gather_flat(d, starts)
    return ad.mul(diff, diff), gaps


def subtb_loss(quantities, lam: float = 0.9, l_max: int | None = None,
               scope: str = "batch") -> Tensor:
    """Weighted subtrajectory-balance loss of a batch.

    ``scope="batch"`` normalizes the geometric weights over every pair in
    the batch; ``scope="trajectory"`` normalizes within each trajectory and
    averages the per-trajectory losses.
    """
    if scope not in ("batch", "trajectory"):
        raise ValueError(f"unknown scope {scope!r}")
    if not quantities:
        raise ValueError("empty batch")
    squared, gap_list = [], []
    for tq in quantities:
        sq, gaps = _squared_pair_residuals(tq, l_max)
        squared.append(sq)
        gap_list.append(gaps)
    if scope == "trajectory":
        total = None
        for sq, gaps in zip(squared, gap_list):
            w = normalized_pair_weights(gaps, lam)
            term = ad.tsum(ad.mul(sq, ad.constant(w)))
            total = term if total is None else total + term
        loss = total * (1.0 / len(quantities))
    else:
        all_gaps = np.concatenate(gap_list)
        w = normalized_pair_weights(all_gaps, lam)
        total, offset = None, 0
        for sq, gaps in zip(squared, gap_list):
            w_traj = w[offset:offset + gaps.size]
            offset += gaps.size
            term = ad.tsum(ad.mul(sq, ad.constant(w_traj)))
            total = term if total is None else total + term
        loss = total
    _check_loss_finite(loss, quantities)
    return loss


def tb_loss(quantities) -> Tensor:
    """Mean squared full-trajectory balance residual over the batch."""
    if not quantities:
        raise ValueError("empty batch")
    total = None
    for tq in quantities:
        n = tq.trajectory.n_transitions
        r = ad.gather_flat(prefix_residuals(tq), [n])
        term = ad.tsum(ad.mul(r, r))
        total = term if total is None else total + term
    loss = total * (1.0 / len(quantities))
    _check_loss_finite(loss, quantities)
    return loss


def db_loss(quantities) -> Tensor:
    """Mean squared per-transition residual, pooled over the batch."""
    if not quantities:
        raise ValueError("empty batch")
    total, count = None, 0
    for tq in quantities:
        delta = transition_residuals(tq)
        term = ad.tsum(ad.mul(delta, delta))
        count += tq.trajectory.n_transitions
        total = term if total is None else total + term
    loss = total * (1.0 / count)
    _check_loss_finite(loss, quantities)
    return loss


def fm_loss(quantities) -> Tensor:
    """Mean squared inflow/outflow log-ratio over non-initial visited states."""
    if not quantities:
        raise ValueError("empty batch")
    total, count = None, 0
    for q in quantities:
        diff = q.log_inflow - q.log_outflow
        term = ad.tsum(ad.mul(diff, diff))
        count += q.log_inflow.size
        total = term if total is None else total + term
    loss = total * (1.0 / count)
    _check_loss_finite(loss, quantities)
    return loss


def per_trajectory_loss(tq, objective: str, lam: float = 0.9,
                        l_max: int | None = None) -> Tensor:
    """Loss of a single trajectory under one objective.

    Subtrajectory weights are normalized within the trajectory, so the mean
    of per-trajectory gradients over a batch equals the batch gradient used
    by the diagnostics.
    """
    if objective == "subtb":
        return subtb_loss([tq], lam=lam, l_max=l_max, scope="trajectory")
    if objective == "tb":
        return tb_loss([tq])
    if objective == "db":
        return db_loss([tq])
    raise ValueError(f"unknown objective {objective!r}")


def batch_loss(policy, trajectories, objective: str, *, lam: float = 0.9,
               l_max: int | None = None, scope: str = "batch",
               fm_epsilon: float = 0.0) -> Tensor:
    """Training loss of a batch of complete trajectories under ``policy``."""
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if objective == "fm":
        if not isinstance(policy, EdgeFlowPolicy):
            raise EnvironmentMismatchError(
                "flow matching trains edge flows; use the edge parameterization"
            )
        quantities = [policy.flow_matching_quantities(t, fm_epsilon) for t in trajectories]
        return fm_loss(quantities)
    quantities = [policy.trajectory_quantities(t) for t in trajectories]
    if objective == "subtb":
        return subtb_loss(quantities, lam=lam, l_max=l_max, scope=scope)
    if objective == "tb":
        return tb_loss(quantities)
    return db_loss(quantities)


def _check_loss_finite(loss: Tensor, quantities) -> None:
    if np.isfinite(loss.data).all():
        return
    for q in quantities:
        tensors = (
            (q.log_inflow, q.log_outflow)
            if hasattr(q, "log_inflow")
            else (q.log_pf, q.log_pb, q.log_flow)
        )
        if any(not np.isfinite(t.data).all() for t in tensors):
            raise NonFiniteLossError(
                f"non-finite loss from trajectory {q.trajectory.states}",
                trajectory=q.trajectory,
            )
    raise NonFiniteLossError("non-finite loss", trajectory=None)
