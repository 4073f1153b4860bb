"""Discrete compositional environments: a hypercubic grid and token sequences.

Both environments expose the same surface: a pointed DAG of states with
integer-indexed forward actions, the inverse backward actions, a strictly
positive reward on terminal states, fixed-size float64 encodings for
network input, and (when small enough) exact enumeration in topological
order for dynamic-programming oracles.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    EnumerationBudgetError,
    EnvironmentMismatchError,
    InvalidTransitionError,
)

__all__ = [
    "GridState",
    "SeqState",
    "Trajectory",
    "HyperGrid",
    "BitSequence",
    "GRID_STANDARD",
    "GRID_HARDER",
    "validate_trajectory",
    "enumerate_complete_trajectories",
]

# (r0, r1, r2) presets for the grid reward
GRID_STANDARD = (1e-3, 0.5, 2.0)
GRID_HARDER = (1e-4, 1.0, 3.0)


@dataclass(frozen=True)
class GridState:
    """Lattice point plus a flag marking the terminal copy of the cell."""

    coords: tuple[int, ...]
    terminal: bool = False


@dataclass(frozen=True)
class SeqState:
    """Left-to-right partial sequence of token indices."""

    tokens: tuple[int, ...] = ()


@dataclass
class Trajectory:
    """Consecutive states joined by forward actions.

    ``complete`` marks trajectories that start at the initial state and end
    at a terminal state, which is the only kind eligible for reward terms.
    """

    states: list
    actions: list[int]
    complete: bool

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    @property
    def n_transitions(self) -> int:
        return len(self.actions)

    @property
    def last_state(self):
        return self.states[-1]


def validate_trajectory(env, trajectory: Trajectory) -> None:
    """Raise unless every consecutive pair is an edge of ``env``'s DAG."""
    if trajectory.n_transitions == 0:
        raise EnvironmentMismatchError("empty trajectory")
    for s, a, t in zip(trajectory.states, trajectory.actions, trajectory.states[1:]):
        if not env.forward_mask(s)[a]:
            raise InvalidTransitionError(f"action {a} not allowed in state {s}")
        if env.child_by_action(s, a) != t:
            raise InvalidTransitionError(f"states {s} -> {t} do not match action {a}")
    if trajectory.complete:
        if trajectory.states[0] != env.initial_state():
            raise EnvironmentMismatchError("complete trajectory must start at the initial state")
        if not env.is_terminal(trajectory.last_state):
            raise EnvironmentMismatchError("complete trajectory must end in a terminal state")


class HyperGrid:
    """D-dimensional grid of side H with an explicit stop action.

    Non-terminal states are lattice points; each has increment actions
    ``0..d-1`` (blocked at the boundary) and a stop action ``d`` leading to
    the terminal copy of the same cell.  Every cell can terminate, so there
    are ``H**d`` terminal states.  The reward is a plateau landscape

        R(x) = r0 + r1 * [all axes in (0.25, 0.5]] + r2 * [all axes in (0.3, 0.4)]

    measured on ``|x_i/(H-1) - 0.5|`` and raised to the power ``beta``.
    Cells reaching ``r0 + r1 + r2`` form the modes; there is one mode group
    per corner orthant, ``2**d`` in total.
    """

    is_tree = False

    def __init__(
        self,
        height: int = 8,
        ndim: int = 2,
        r0: float = GRID_STANDARD[0],
        r1: float = GRID_STANDARD[1],
        r2: float = GRID_STANDARD[2],
        beta: float = 1.0,
        enumeration_limit: int = 2_000_000,
    ):
        if height < 2:
            raise ValueError("height must be at least 2")
        if ndim < 1:
            raise ValueError("ndim must be at least 1")
        if min(r0, r1, r2) < 0 or r0 <= 0:
            raise ValueError("reward coefficients must be non-negative with r0 > 0")
        self.height = height
        self.ndim = ndim
        self.r0, self.r1, self.r2 = float(r0), float(r1), float(r2)
        self.beta = float(beta)
        self.enumeration_limit = enumeration_limit
        self._n_cells = height**ndim
        self._strides = tuple(height ** (ndim - 1 - i) for i in range(ndim))
        self._sorted_cells: list[tuple[int, ...]] | None = None
        # Band membership of t = |c/(H-1) - 1/2| = num / (2(H-1)), decided in
        # exact integer arithmetic: floating-point t can land on the wrong
        # side of an open bound (e.g. 12/15 - 1/2 evaluates just above 0.3).
        num = np.abs(2 * np.arange(height) - (height - 1))
        den = 2 * (height - 1)
        self._r1_axis = (4 * num > den) & (2 * num <= den)          # 0.25 < t <= 0.5
        self._mode_axis = (10 * num > 3 * den) & (10 * num < 4 * den)  # 0.3 < t < 0.4

    def __eq__(self, other):
        if not isinstance(other, HyperGrid):
            return NotImplemented
        return (self.height, self.ndim, self.r0, self.r1, self.r2, self.beta) == (
            other.height, other.ndim, other.r0, other.r1, other.r2, other.beta)

    def __repr__(self) -> str:
        return (f"HyperGrid(height={self.height}, ndim={self.ndim}, "
                f"r0={self.r0}, r1={self.r1}, r2={self.r2}, beta={self.beta})")

    # ------------------------------------------------------------------
    # DAG structure
    # ------------------------------------------------------------------
    def initial_state(self) -> GridState:
        return GridState((0,) * self.ndim)

    def is_terminal(self, state: GridState) -> bool:
        return state.terminal

    def is_initial(self, state: GridState) -> bool:
        return not state.terminal and all(c == 0 for c in state.coords)

    @property
    def n_forward_actions(self) -> int:
        return self.ndim + 1

    @property
    def n_backward_actions(self) -> int:
        # one slot per axis decrement plus one for undoing the stop action
        return self.ndim + 1

    def forward_mask(self, state: GridState) -> np.ndarray:
        mask = np.zeros(self.n_forward_actions, dtype=bool)
        if state.terminal:
            return mask
        for i, c in enumerate(state.coords):
            mask[i] = c < self.height - 1
        mask[self.ndim] = True
        return mask

    def backward_mask(self, state: GridState) -> np.ndarray:
        mask = np.zeros(self.n_backward_actions, dtype=bool)
        if state.terminal:
            mask[self.ndim] = True
            return mask
        for i, c in enumerate(state.coords):
            mask[i] = c > 0
        return mask

    def child_by_action(self, state: GridState, action: int) -> GridState:
        if state.terminal:
            raise InvalidTransitionError("terminal states have no children")
        if action == self.ndim:
            return GridState(state.coords, terminal=True)
        if not 0 <= action < self.ndim:
            raise InvalidTransitionError(f"unknown action {action}")
        if state.coords[action] >= self.height - 1:
            raise InvalidTransitionError(f"axis {action} already at the boundary")
        coords = list(state.coords)
        coords[action] += 1
        return GridState(tuple(coords))

    def parent_by_action(self, state: GridState, action: int) -> GridState:
        if action == self.ndim:
            if not state.terminal:
                raise InvalidTransitionError("only terminal states undo a stop")
            return GridState(state.coords)
        if state.terminal:
            raise InvalidTransitionError("terminal states only undo the stop action")
        if not 0 <= action < self.ndim:
            raise InvalidTransitionError(f"unknown action {action}")
        if state.coords[action] <= 0:
            raise InvalidTransitionError(f"axis {action} already at zero")
        coords = list(state.coords)
        coords[action] -= 1
        return GridState(tuple(coords))

    def children(self, state: GridState) -> list[tuple[GridState, int]]:
        if state.terminal:
            raise EnvironmentMismatchError("terminal states have no children")
        mask = self.forward_mask(state)
        return [(self.child_by_action(state, a), a) for a in np.flatnonzero(mask)]

    def parents(self, state: GridState) -> list[tuple[GridState, int]]:
        if self.is_initial(state):
            raise EnvironmentMismatchError("the initial state has no parents")
        mask = self.backward_mask(state)
        return [(self.parent_by_action(state, a), a) for a in np.flatnonzero(mask)]

    def action_between(self, state: GridState, child: GridState) -> int:
        if child.terminal:
            if not state.terminal and state.coords == child.coords:
                return self.ndim
            raise InvalidTransitionError(f"{state} -> {child} is not an edge")
        for i in range(self.ndim):
            if child.coords[i] == state.coords[i] + 1:
                rest = state.coords[:i] + state.coords[i + 1:]
                if rest == child.coords[:i] + child.coords[i + 1:] and not state.terminal:
                    return i
        raise InvalidTransitionError(f"{state} -> {child} is not an edge")

    def backward_action_index(self, state: GridState, forward_action: int) -> int:
        """Backward-head slot of ``state`` that undoes ``forward_action``."""
        if not 0 <= forward_action <= self.ndim:
            raise InvalidTransitionError(f"unknown action {forward_action}")
        return forward_action

    @property
    def max_steps(self) -> int:
        return self.ndim * (self.height - 1) + 1

    # ------------------------------------------------------------------
    # reward and modes
    # ------------------------------------------------------------------
    def reward(self, state: GridState) -> float:
        return math.exp(self.log_reward(state))

    def log_reward(self, state: GridState) -> float:
        if not state.terminal:
            raise EnvironmentMismatchError("reward is only defined on terminal states")
        coords = list(state.coords)
        r = self.r0
        if all(self._r1_axis[c] for c in coords):
            r += self.r1
        if all(self._mode_axis[c] for c in coords):
            r += self.r2
        return self.beta * math.log(r)

    def mode_id(self, state: GridState):
        """Corner orthant of a maximal-reward cell, or None off the plateau."""
        if not state.terminal:
            return None
        if not all(self._mode_axis[c] for c in state.coords):
            return None
        half = (self.height - 1) / 2.0
        return tuple(c > half for c in state.coords)

    @property
    def n_modes(self) -> int:
        return 2**self.ndim

    # ------------------------------------------------------------------
    # encoding
    # ------------------------------------------------------------------
    @property
    def encoding_dim(self) -> int:
        return self.ndim * self.height + 1

    def encode(self, state: GridState) -> np.ndarray:
        v = np.zeros(self.encoding_dim, dtype=np.float64)
        for i, c in enumerate(state.coords):
            v[i * self.height + c] = 1.0
        v[-1] = 1.0 if state.terminal else 0.0
        return v

    # ------------------------------------------------------------------
    # enumeration
    # ------------------------------------------------------------------
    @property
    def n_states(self) -> int:
        return 2 * self._n_cells

    @property
    def n_terminal_states(self) -> int:
        return self._n_cells

    @property
    def enumerable(self) -> bool:
        return self.n_states <= self.enumeration_limit

    def _require_enumerable(self) -> None:
        if not self.enumerable:
            raise EnumerationBudgetError(
                f"{self.n_states} states exceed the enumeration limit {self.enumeration_limit}"
            )

    def state_index(self, state: GridState) -> int:
        base = sum(c * s for c, s in zip(state.coords, self._strides))
        return base + (self._n_cells if state.terminal else 0)

    def state_from_index(self, index: int) -> GridState:
        if not 0 <= index < self.n_states:
            raise EnvironmentMismatchError(f"state index {index} out of range")
        terminal = index >= self._n_cells
        base = index - self._n_cells if terminal else index
        coords = []
        for stride in self._strides:
            coords.append(base // stride)
            base %= stride
        return GridState(tuple(coords), terminal=terminal)

    def states(self):
        """All states in a topological order of the DAG."""
        self._require_enumerable()
        if self._sorted_cells is None:
            cells = itertools.product(range(self.height), repeat=self.ndim)
            self._sorted_cells = sorted(cells, key=lambda c: (sum(c), c))
        # within one coordinate-sum shell, terminal copies follow their cells
        for total, group in itertools.groupby(self._sorted_cells, key=sum):
            group = list(group)
            for coords in group:
                yield GridState(coords)
            for coords in group:
                yield GridState(coords, terminal=True)

    def terminal_states(self):
        self._require_enumerable()
        for coords in itertools.product(range(self.height), repeat=self.ndim):
            yield GridState(coords, terminal=True)


class BitSequence:
    """Fixed-length sequences appended one k-bit token at a time.

    A state is a prefix of up to ``n_bits // token_bits`` tokens from a
    vocabulary of ``2**token_bits``; full prefixes are terminal, so the DAG
    is a tree.  The reward is ``exp(-beta * d(x, M))`` where ``d`` is the
    minimum Hamming distance, in bits, to a seeded set of mode strings.
    A terminal state counts toward the mode it is nearest to when within
    ``n_bits // 10`` bits of it.
    """

    is_tree = True

    def __init__(
        self,
        n_bits: int = 32,
        token_bits: int = 1,
        n_modes: int = 8,
        mode_seed: int = 0,
        beta: float = 1.0,
        enumeration_limit: int = 2_000_000,
    ):
        if n_bits < 1:
            raise ValueError("n_bits must be positive")
        if token_bits < 1 or n_bits % token_bits != 0:
            raise ValueError("token_bits must divide n_bits")
        self.n_bits = n_bits
        self.token_bits = token_bits
        self.vocab_size = 2**token_bits
        self.seq_len = n_bits // token_bits
        self.beta = float(beta)
        self.mode_seed = mode_seed
        self.enumeration_limit = enumeration_limit
        self.n_modes_requested = n_modes
        self._mode_bits = _draw_mode_strings(n_bits, n_modes, mode_seed)
        self._mode_radius = n_bits // 10
        # bits of token v, most significant first
        self._token_table = np.array(
            [[(v >> (token_bits - 1 - j)) & 1 for j in range(token_bits)]
             for v in range(self.vocab_size)],
            dtype=np.int8,
        )

    def __eq__(self, other):
        if not isinstance(other, BitSequence):
            return NotImplemented
        return (
            self.n_bits, self.token_bits, self.n_modes_requested,
            self.mode_seed, self.beta,
        ) == (
            other.n_bits, other.token_bits, other.n_modes_requested,
            other.mode_seed, other.beta,
        )

    def __repr__(self) -> str:
        return (f"BitSequence(n_bits={self.n_bits}, token_bits={self.token_bits}, "
                f"n_modes={self.n_modes_requested}, mode_seed={self.mode_seed}, "
                f"beta={self.beta})")

    # ------------------------------------------------------------------
    # DAG structure
    # ------------------------------------------------------------------
    def initial_state(self) -> SeqState:
        return SeqState(())

    def is_terminal(self, state: SeqState) -> bool:
        return len(state.tokens) == self.seq_len

    def is_initial(self, state: SeqState) -> bool:
        return len(state.tokens) == 0

    @property
    def n_forward_actions(self) -> int:
        return self.vocab_size

    @property
    def n_backward_actions(self) -> int:
        return 1

    def forward_mask(self, state: SeqState) -> np.ndarray:
        if self.is_terminal(state):
            return np.zeros(self.vocab_size, dtype=bool)
        return np.ones(self.vocab_size, dtype=bool)

    def backward_mask(self, state: SeqState) -> np.ndarray:
        return np.array([len(state.tokens) > 0])

    def child_by_action(self, state: SeqState, action: int) -> SeqState:
        if self.is_terminal(state):
            raise InvalidTransitionError("sequence is already complete")
        if not 0 <= action < self.vocab_size:
            raise InvalidTransitionError(f"unknown token {action}")
        return SeqState(state.tokens + (action,))

    def parent_by_action(self, state: SeqState, action: int) -> SeqState:
        if action != 0 or len(state.tokens) == 0:
            raise InvalidTransitionError("only the last token can be removed")
        return SeqState(state.tokens[:-1])

    def children(self, state: SeqState) -> list[tuple[SeqState, int]]:
        if self.is_terminal(state):
            raise EnvironmentMismatchError("sequence is already complete")
        return [(SeqState(state.tokens + (v,)), v) for v in range(self.vocab_size)]

    def parents(self, state: SeqState) -> list[tuple[SeqState, int]]:
        """Single (prefix, forward action) pair; the action is the last token."""
        if len(state.tokens) == 0:
            raise EnvironmentMismatchError("the initial state has no parents")
        return [(SeqState(state.tokens[:-1]), state.tokens[-1])]

    def action_between(self, state: SeqState, child: SeqState) -> int:
        if child.tokens[:-1] != state.tokens:
            raise InvalidTransitionError(f"{state} -> {child} is not an edge")
        return child.tokens[-1]

    def backward_action_index(self, state: SeqState, forward_action: int) -> int:
        """Backward-head slot of ``state`` that undoes ``forward_action``."""
        if not 0 <= forward_action < self.vocab_size:
            raise InvalidTransitionError(f"unknown token {forward_action}")
        return 0

    @property
    def max_steps(self) -> int:
        return self.seq_len

    # ------------------------------------------------------------------
    # reward and modes
    # ------------------------------------------------------------------
    def bits_of(self, state: SeqState) -> np.ndarray:
        if not state.tokens:
            return np.zeros(0, dtype=np.int8)
        return self._token_table[list(state.tokens)].reshape(-1)

    def hamming_distances(self, state: SeqState) -> np.ndarray:
        """Bit distances from a terminal state to every mode string."""
        bits = self.bits_of(state)
        return np.sum(self._mode_bits != bits[None, :], axis=1)

    def log_reward(self, state: SeqState) -> float:
        if not self.is_terminal(state):
            raise EnvironmentMismatchError("reward is only defined on terminal states")
        return -self.beta * float(self.hamming_distances(state).min())

    def reward(self, state: SeqState) -> float:
        return math.exp(self.log_reward(state))

    def mode_id(self, state: SeqState):
        if not self.is_terminal(state):
            return None
        dists = self.hamming_distances(state)
        nearest = int(np.argmin(dists))
        return nearest if dists[nearest] <= self._mode_radius else None

    @property
    def n_modes(self) -> int:
        return self._mode_bits.shape[0]

    @property
    def mode_states(self) -> list[SeqState]:
        """The mode strings themselves, as terminal states."""
        out = []
        for row in self._mode_bits:
            tokens = []
            for i in range(self.seq_len):
                chunk = row[i * self.token_bits:(i + 1) * self.token_bits]
                tokens.append(int("".join(map(str, chunk)), 2))
            out.append(SeqState(tuple(tokens)))
        return out

    # ------------------------------------------------------------------
    # encoding
    # ------------------------------------------------------------------
    @property
    def encoding_dim(self) -> int:
        return self.seq_len * self.vocab_size + 1

    def encode(self, state: SeqState) -> np.ndarray:
        v = np.zeros(self.encoding_dim, dtype=np.float64)
        for i, tok in enumerate(state.tokens):
            v[i * self.vocab_size + tok] = 1.0
        v[-1] = len(state.tokens) / self.seq_len
        return v

    # ------------------------------------------------------------------
    # enumeration
    # ------------------------------------------------------------------
    @property
    def n_states(self) -> int:
        v, length = self.vocab_size, self.seq_len
        return (v ** (length + 1) - 1) // (v - 1)

    @property
    def n_terminal_states(self) -> int:
        return self.vocab_size**self.seq_len

    @property
    def enumerable(self) -> bool:
        return self.n_states <= self.enumeration_limit

    def _require_enumerable(self) -> None:
        if not self.enumerable:
            raise EnumerationBudgetError(
                f"{self.n_states} states exceed the enumeration limit {self.enumeration_limit}"
            )

    def state_index(self, state: SeqState) -> int:
        v = self.vocab_size
        length = len(state.tokens)
        offset = (v**length - 1) // (v - 1)
        rank = 0
        for tok in state.tokens:
            rank = rank * v + tok
        return offset + rank

    def state_from_index(self, index: int) -> SeqState:
        if not 0 <= index < self.n_states:
            raise EnvironmentMismatchError(f"state index {index} out of range")
        v = self.vocab_size
        length = 0
        while index >= v**length:
            index -= v**length
            length += 1
        tokens = []
        for _ in range(length):
            index, tok = divmod(index, v)
            tokens.append(tok)
        return SeqState(tuple(reversed(tokens)))

    def states(self):
        self._require_enumerable()
        for length in range(self.seq_len + 1):
            for tokens in itertools.product(range(self.vocab_size), repeat=length):
                yield SeqState(tokens)

    def terminal_states(self):
        self._require_enumerable()
        for tokens in itertools.product(range(self.vocab_size), repeat=self.seq_len):
            yield SeqState(tokens)


def _draw_mode_strings(n_bits: int, n_modes: int, seed: int) -> np.ndarray:
    """Distinct random bit strings, reproducible from the seed."""
    if n_modes < 1:
        raise ValueError("need at least one mode string")
    if n_modes > 2**min(n_bits, 62):
        raise ValueError("more modes than distinct strings")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(91,)))
    seen: set[tuple[int, ...]] = set()
    rows = []
    while len(rows) < n_modes:
        candidate = rng.integers(0, 2, size=n_bits, dtype=np.int8)
        key = tuple(int(b) for b in candidate)
        if key not in seen:
            seen.add(key)
            rows.append(candidate)
    return np.stack(rows)


def enumerate_complete_trajectories(env, limit: int = 2_000_000):
    """Depth-first enumeration of every complete trajectory.

    Brute-force oracle for small environments; raises once ``limit``
    trajectories are exceeded.
    """
    count = 0
    stack = [(env.initial_state(), [env.initial_state()], [])]
    while stack:
        state, states, actions = stack.pop()
        if env.is_terminal(state):
            count += 1
            if count > limit:
                raise EnumerationBudgetError(f"more than {limit} complete trajectories")
            yield Trajectory(states, actions, complete=True)
            continue
        for child, action in reversed(env.children(state)):
            stack.append((child, states + [child], actions + [action]))
