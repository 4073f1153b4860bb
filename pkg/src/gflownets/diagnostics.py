"""Gradient bias/variance diagnostics on tabular parameterizations.

For a frozen policy, a large batch (1024 by default) of trajectories is
sampled and the gradient of each objective with respect to the policy
logits is computed per trajectory.  Contiguous sub-batches of size 2**k
are averaged and compared, by cosine similarity, either against the
full-batch gradient of the same objective (self-similarity, a variance
probe) or against the full-batch trajectory-balance gradient (a bias
probe).

State flows entering the losses can be replaced by analytically exact
flows: the forward flows fixed by the true partition function and the
learned forward policy, or the backward flows fixed by the reward and the
learned backward policy.  Replacements are constants; no gradient flows
into them.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp as _lse

from .evaluation import exact_target, log_reachability
from .objectives import per_trajectory_loss

__all__ = [
    "per_trajectory_gradients",
    "subbatch_similarity",
    "cross_objective_similarity",
    "true_forward_log_flow",
    "true_backward_log_flow",
    "flow_override_for",
    "similarity_records",
    "FLOW_SOURCES",
    "DIAGNOSED_OBJECTIVES",
]

FLOW_SOURCES = ("learned", "true_forward", "true_backward")
DIAGNOSED_OBJECTIVES = ("db", "subtb", "tb")


def _gradient_rows(policy, quantities, objective, lam, l_max, names) -> np.ndarray:
    rows = []
    for tq in quantities:
        loss = per_trajectory_loss(tq, objective, lam=lam, l_max=l_max)
        policy.zero_grad()
        loss.backward()
        rows.append(policy.flat_gradient(names))
    policy.zero_grad()
    return np.stack(rows)


def per_trajectory_gradients(policy, trajectories, objective: str, lam: float = 0.8,
                             l_max: int | None = None, flow_override=None) -> np.ndarray:
    """One gradient row per trajectory, over the policy-logit coordinates only.

    Each row differentiates the trajectory's own loss (per-trajectory
    weight normalization for SubTB), so the mean row equals the batch
    gradient under the mean-loss convention.
    """
    names = policy.policy_logit_names()
    quantities = [policy.trajectory_quantities(t, flow_override=flow_override)
                  for t in trajectories]
    return _gradient_rows(policy, quantities, objective, lam, l_max, names)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def subbatch_similarity(grads: np.ndarray, k: int, reference: np.ndarray | None = None) -> float:
    """Mean cosine similarity of size-2**k sub-batch means to a reference.

    Sub-batches partition the rows in index order.  The reference defaults
    to the mean of all rows (the full-batch gradient of the same
    objective).
    """
    grads = np.asarray(grads)
    n = grads.shape[0]
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError("gradient count must be a power of two")
    size = 1 << k
    if not 1 <= size <= n:
        raise ValueError(f"k={k} outside the valid range for {n} gradients")
    if reference is None:
        reference = grads.mean(axis=0)
    means = grads.reshape(n // size, size, -1).mean(axis=1)
    return float(np.mean([_cosine(m, reference) for m in means]))


def cross_objective_similarity(policy, trajectories, small_objective: str, k: int,
                               lam: float = 0.8, l_max: int | None = None,
                               flow_override=None) -> float:
    """Sub-batch gradients of one objective against the full-batch TB gradient."""
    small = per_trajectory_gradients(policy, trajectories, small_objective,
                                     lam=lam, l_max=l_max, flow_override=flow_override)
    reference = per_trajectory_gradients(policy, trajectories, "tb",
                                         flow_override=flow_override).mean(axis=0)
    return subbatch_similarity(small, k, reference=reference)


# ----------------------------------------------------------------------
# analytically exact state flows
# ----------------------------------------------------------------------
def true_forward_log_flow(policy) -> dict:
    """log F of every state when Z is the exact partition function.

    F(s) = Z * P(a trajectory of the learned forward policy visits s);
    one forward DP in the log domain.
    """
    log_z = exact_target(policy.env).log_z
    return {s: log_z + v for s, v in log_reachability(policy).items()}


def true_backward_log_flow(policy) -> dict:
    """log F of every state fixed by the reward and the learned backward policy.

    F(x) = R(x) at terminals; one backward DP accumulates
    F(s) = sum_t F(t) * P_B(s|t) over the children of s.
    """
    env = policy.env
    env._require_enumerable()
    order = list(env.states())
    non_initial = [s for s in order if not env.is_initial(s)]
    pb_rows = policy.log_pb_matrix(non_initial)
    row_of = {s: i for i, s in enumerate(non_initial)}
    out: dict = {}
    for s in reversed(order):
        if env.is_terminal(s):
            out[s] = env.log_reward(s)
            continue
        terms = [
            out[child] + pb_rows[row_of[child], env.backward_action_index(child, action)]
            for child, action in env.children(s)
        ]
        out[s] = float(_lse(terms))
    return out


def flow_override_for(policy, flow_source: str):
    """Constant log-flow map for the given source; None keeps learned flows."""
    if flow_source == "learned":
        return None
    if flow_source == "true_forward":
        return true_forward_log_flow(policy)
    if flow_source == "true_backward":
        return true_backward_log_flow(policy)
    raise ValueError(f"unknown flow source {flow_source!r}")


def similarity_records(policy, trajectories, lam: float = 0.8,
                       l_max: int | None = None, iteration: int = 0,
                       flow_sources=FLOW_SOURCES, max_k: int | None = None) -> list[dict]:
    """All similarity-curve rows for one frozen policy snapshot.

    Emits, per flow source and per objective in {db, subtb, tb}, the
    self-similarity curve and the vs-TB curve over k = 0..log2(batch).
    """
    names = policy.policy_logit_names()
    n = len(trajectories)
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError("trajectory count must be a power of two")
    top_k = int(np.log2(n)) if max_k is None else max_k
    rows: list[dict] = []
    for source in flow_sources:
        override = flow_override_for(policy, source)
        quantities = [policy.trajectory_quantities(t, flow_override=override)
                      for t in trajectories]
        grads = {
            obj: _gradient_rows(policy, quantities, obj, lam, l_max, names)
            for obj in DIAGNOSED_OBJECTIVES
        }
        tb_reference = grads["tb"].mean(axis=0)
        for obj in DIAGNOSED_OBJECTIVES:
            for k in range(top_k + 1):
                rows.append({
                    "iteration": iteration,
                    "objective_pair": f"{obj}_self",
                    "flow_source": source,
                    "k": k,
                    "mean_cosine": subbatch_similarity(grads[obj], k),
                })
                rows.append({
                    "iteration": iteration,
                    "objective_pair": f"{obj}_vs_tb",
                    "flow_source": source,
                    "k": k,
                    "mean_cosine": subbatch_similarity(grads[obj], k, reference=tb_reference),
                })
    return rows
