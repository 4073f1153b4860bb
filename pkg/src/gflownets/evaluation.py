"""Exact and empirical evaluation of trained samplers.

Provides the exact target distribution of an enumerable environment, an
incremental sliding-window histogram of sampled terminal states with its
L1 distance to the target, dynamic-programming marginal likelihoods of the
learned forward policy, rank/linear correlations against the reward, and
mode-discovery accounting.
"""

from __future__ import annotations

import logging
from collections import deque

import numpy as np
from scipy import stats
from scipy.special import logsumexp as _lse

from .exceptions import DegenerateMetricError

__all__ = [
    "TargetDistribution",
    "exact_target",
    "SampleWindow",
    "empirical_l1",
    "log_reachability",
    "terminal_log_marginals",
    "log_marginals_of",
    "spearman_correlation",
    "pearson_log_correlation",
    "mode_ids_of",
    "sequence_test_states",
]

logger = logging.getLogger(__name__)


class TargetDistribution:
    """Reward-proportional distribution over the terminal states."""

    def __init__(self, states, log_rewards: np.ndarray):
        self.states = list(states)
        self.log_rewards = np.asarray(log_rewards, dtype=np.float64)
        self.log_z = float(_lse(self.log_rewards))
        self.probs = np.exp(self.log_rewards - self.log_z)
        self.index = {s: i for i, s in enumerate(self.states)}

    def prob_of(self, state) -> float:
        return float(self.probs[self.index[state]])

    def __len__(self) -> int:
        return len(self.states)


def exact_target(env) -> TargetDistribution:
    """Enumerate R(x)/Z exactly; requires an enumerable environment."""
    states = list(env.terminal_states())
    log_rewards = np.asarray([env.log_reward(s) for s in states])
    return TargetDistribution(states, log_rewards)


class SampleWindow:
    """Counts of the most recent ``capacity`` terminal states.

    Appends and evictions are O(1); the L1 report walks only the states
    currently present plus the target's normalization.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._buffer: deque = deque()
        self.counts: dict = {}

    def __len__(self) -> int:
        return len(self._buffer)

    def add(self, state) -> None:
        if len(self._buffer) == self.capacity:
            old = self._buffer.popleft()
            remaining = self.counts[old] - 1
            if remaining:
                self.counts[old] = remaining
            else:
                del self.counts[old]
        self._buffer.append(state)
        self.counts[state] = self.counts.get(state, 0) + 1

    def extend(self, states) -> None:
        for s in states:
            self.add(s)

    def state_arrays(self, env) -> dict[str, np.ndarray]:
        idx = np.asarray([env.state_index(s) for s in self._buffer], dtype=np.int64)
        return {"window/indices": idx, "window/capacity": np.asarray([self.capacity])}

    def load_state_arrays(self, arrays, env, index_to_state) -> None:
        self._buffer.clear()
        self.counts.clear()
        self.capacity = int(arrays["window/capacity"][0])
        for i in arrays["window/indices"]:
            self.add(index_to_state(int(i)))

    def l1_to(self, target: TargetDistribution) -> float:
        return empirical_l1(self.counts, len(self._buffer), target)


def empirical_l1(counts: dict, n: int, target: TargetDistribution) -> float:
    """L1 distance between a count histogram and the exact target."""
    if n == 0:
        raise DegenerateMetricError("no samples in the window")
    total = 0.0
    seen_mass = 0.0
    for state, c in counts.items():
        p = target.prob_of(state)
        total += abs(c / n - p)
        seen_mass += p
    return total + (1.0 - seen_mass)


# ----------------------------------------------------------------------
# marginal likelihood of the learned sampler
# ----------------------------------------------------------------------
def log_reachability(policy) -> dict:
    """Log-probability that a trajectory of the policy passes through each state.

    One dynamic-programming sweep in topological order, entirely in the
    log domain: reach(s_0) = 1 and reach(t) sums reach(s) * P_F(t|s) over
    the parents of t.
    """
    env = policy.env
    env._require_enumerable()
    order = list(env.states())
    non_terminal = [s for s in order if not env.is_terminal(s)]
    rows = policy.log_pf_matrix(non_terminal)
    row_of = {s: i for i, s in enumerate(non_terminal)}
    log_reach = {env.initial_state(): 0.0}
    for s in order:
        if s not in log_reach:
            terms = [
                log_reach[parent] + rows[row_of[parent], action]
                for parent, action in env.parents(s)
            ]
            log_reach[s] = float(_lse(terms)) if terms else -np.inf
    return log_reach


def terminal_log_marginals(policy) -> dict:
    """Exact log-probability of finishing at every terminal state.

    States the masked policy cannot reach get -inf and are counted in a
    warning.
    """
    env = policy.env
    reach = log_reachability(policy)
    out = {s: v for s, v in reach.items() if env.is_terminal(s)}
    unreachable = sum(1 for v in out.values() if v == -np.inf)
    if unreachable:
        logger.warning("%d terminal states are unreachable under the policy", unreachable)
    return out


def _tree_log_marginals(policy, states, chunk_rows: int = 8192) -> np.ndarray:
    """Path log-probabilities on tree environments, batched over prefixes."""
    env = policy.env
    prefixes, picks = [], []
    for s in states:
        node = env.initial_state()
        for tok in s.tokens:
            prefixes.append(node)
            picks.append(tok)
            node = env.child_by_action(node, tok)
        if not env.is_terminal(node):
            raise DegenerateMetricError(f"{s} is not terminal")
    logp = np.empty(len(prefixes))
    for lo in range(0, len(prefixes), chunk_rows):
        hi = min(lo + chunk_rows, len(prefixes))
        rows = policy.log_pf_matrix(prefixes[lo:hi])
        logp[lo:hi] = rows[np.arange(hi - lo), picks[lo:hi]]
    lengths = np.asarray([len(s.tokens) for s in states])
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    return np.asarray([logp[a:b].sum() for a, b in zip(bounds[:-1], bounds[1:])])


def log_marginals_of(policy, states) -> np.ndarray:
    """Log-probability the sampler assigns to the given terminal states."""
    env = policy.env
    if env.is_tree:
        return _tree_log_marginals(policy, states)
    table = terminal_log_marginals(policy)
    return np.asarray([table[s] for s in states])


# ----------------------------------------------------------------------
# correlations and mode accounting
# ----------------------------------------------------------------------
def spearman_correlation(a, b) -> float:
    """Rank correlation with average ranks on ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size or a.size < 2:
        raise DegenerateMetricError("need two same-length samples of size >= 2")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise DegenerateMetricError("rank correlation of a constant sequence is undefined")
    return float(stats.spearmanr(a, b).statistic)


def pearson_log_correlation(log_p: np.ndarray, log_q: np.ndarray) -> float:
    """Linear correlation of two log-probability vectors."""
    log_p = np.asarray(log_p, dtype=np.float64)
    log_q = np.asarray(log_q, dtype=np.float64)
    if not (np.isfinite(log_p).all() and np.isfinite(log_q).all()):
        raise DegenerateMetricError("correlation needs finite log-probabilities")
    if np.ptp(log_p) == 0.0 or np.ptp(log_q) == 0.0:
        raise DegenerateMetricError("correlation of a constant sequence is undefined")
    return float(stats.pearsonr(log_p, log_q).statistic)


def mode_ids_of(env, states) -> set:
    """Distinct mode identifiers hit by the given terminal states."""
    found = set()
    for s in states:
        mode = env.mode_id(s)
        if mode is not None:
            found.add(mode)
    return found


def _tokens_from_bits(env, bits) -> tuple:
    tokens = []
    for i in range(env.seq_len):
        chunk = bits[i * env.token_bits:(i + 1) * env.token_bits]
        value = 0
        for bit in chunk:
            value = (value << 1) | int(bit)
        tokens.append(value)
    return tuple(tokens)


def sequence_test_states(env, size: int, rng: np.random.Generator,
                         n_bins: int = 10, pool_factor: int = 8) -> list:
    """Seeded held-out terminal sequences stratified by reward quantile.

    Uniform sequences almost never land near a mode, so the candidate pool
    alternates perturbed mode strings (0 to half the bits flipped) with
    uniform draws.  The pool is then split into ``n_bins`` reward-quantile
    bins and the test set is filled round-robin across bins, so every
    reward band is represented.
    """
    if size < 1:
        raise ValueError("test set size must be positive")
    modes = env.mode_states
    state_cls = type(modes[0])
    pool_target = max(size * pool_factor, size + n_bins)
    seen: set[tuple] = set()
    pool: list = []
    attempts = 0
    max_attempts = 50 * pool_target
    while len(pool) < pool_target and attempts < max_attempts:
        if attempts % 2 == 0:
            bits = env.bits_of(modes[(attempts // 2) % len(modes)]).copy()
            flips = int(rng.integers(0, env.n_bits // 2 + 1))
            pos = rng.choice(env.n_bits, size=flips, replace=False)
            bits[pos] ^= 1
        else:
            bits = rng.integers(0, 2, size=env.n_bits, dtype=np.int8)
        attempts += 1
        tokens = _tokens_from_bits(env, bits)
        if tokens in seen:
            continue
        seen.add(tokens)
        pool.append(state_cls(tokens))
    if len(pool) < size:
        raise DegenerateMetricError(
            f"could only assemble {len(pool)} distinct sequences for a "
            f"test set of {size}")
    log_r = np.asarray([env.log_reward(s) for s in pool])
    order = np.argsort(log_r, kind="stable")
    bins = [list(part) for part in np.array_split(order, n_bins)]
    out: list = []
    while len(out) < size:
        for part in bins:
            if part:
                out.append(pool[part.pop()])
                if len(out) == size:
                    break
    return out
