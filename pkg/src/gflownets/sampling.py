"""Trajectory sampling with optional exploration noise.

Sampling draws from counter-based Philox streams keyed by (seed, stream,
batch index), so any batch can be regenerated without replaying the ones
before it; training, diagnostics, and ad-hoc sampling use distinct stream
ids and therefore never share randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environments import Trajectory

__all__ = [
    "ExplorationPolicy",
    "batch_rng",
    "STREAM_TRAIN",
    "STREAM_DIAGNOSTICS",
    "STREAM_SAMPLE",
    "STREAM_DATA",
    "sample_batch",
    "sample_trajectory",
    "action_probabilities",
]

STREAM_TRAIN = 0
STREAM_DIAGNOSTICS = 1
STREAM_SAMPLE = 2
STREAM_DATA = 3


@dataclass(frozen=True)
class ExplorationPolicy:
    """Tempering plus epsilon-uniform mixing applied to the forward policy.

    Logits are divided by ``temperature`` first, then the resulting
    distribution is mixed with the uniform distribution over allowed
    actions with weight ``epsilon``.
    """

    epsilon: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")

    @property
    def is_identity(self) -> bool:
        return self.epsilon == 0.0 and self.temperature == 1.0


def batch_rng(seed: int, batch_index: int, stream: int = STREAM_TRAIN) -> np.random.Generator:
    """Independent Philox generator for one batch of one stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, batch_index))
    return np.random.Generator(np.random.Philox(ss))


def action_probabilities(log_pf_rows: np.ndarray, exploration: ExplorationPolicy | None) -> np.ndarray:
    """Turn masked log-probability rows into sampling probabilities."""
    mask = np.isfinite(log_pf_rows)
    if exploration is None or exploration.is_identity:
        p = np.where(mask, np.exp(log_pf_rows), 0.0)
        return p / p.sum(axis=-1, keepdims=True)
    z = log_pf_rows / exploration.temperature
    z = z - np.max(np.where(mask, z, -np.inf), axis=-1, keepdims=True)
    p = np.where(mask, np.exp(z), 0.0)
    p /= p.sum(axis=-1, keepdims=True)
    eps = exploration.epsilon
    if eps > 0.0:
        uniform = mask / mask.sum(axis=-1, keepdims=True)
        p = (1.0 - eps) * p + eps * uniform
    return p


def _pick(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    cdf[:, -1] = 1.0
    return np.argmax(u[:, None] < cdf, axis=-1)


def sample_batch(policy, batch_size: int, rng: np.random.Generator,
                 exploration: ExplorationPolicy | None = None) -> list[Trajectory]:
    """Sample complete trajectories, stepping all unfinished ones together.

    Random numbers are consumed in slot order at every step, so a given
    generator state yields the same batch regardless of platform.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    env = policy.env
    start = env.initial_state()
    states = [[start] for _ in range(batch_size)]
    actions: list[list[int]] = [[] for _ in range(batch_size)]
    active = [i for i in range(batch_size) if not env.is_terminal(start)]
    for _ in range(env.max_steps + 1):
        if not active:
            break
        frontier = [states[i][-1] for i in active]
        probs = action_probabilities(policy.log_pf_matrix(frontier), exploration)
        choices = _pick(probs, rng.random(len(active)))
        still = []
        for slot, a in zip(active, choices):
            child = env.child_by_action(states[slot][-1], int(a))
            states[slot].append(child)
            actions[slot].append(int(a))
            if not env.is_terminal(child):
                still.append(slot)
        active = still
    if active:
        raise RuntimeError("trajectories exceeded the environment's maximum length")
    return [Trajectory(s, a, complete=True) for s, a in zip(states, actions)]


def sample_trajectory(policy, rng: np.random.Generator,
                      exploration: ExplorationPolicy | None = None) -> Trajectory:
    return sample_batch(policy, 1, rng, exploration)[0]
