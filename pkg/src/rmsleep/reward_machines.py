"""Reward machines tracking accumulated constraint violation.

A generic :class:`RewardMachine` holds the automaton description; the
constraint machines used by the environment walk a chain of ``L + 1`` states
by clamped addition of a quantised violation label and pay ``-l / L``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

DROP = "drop"
THROUGHPUT = "throughput"


@dataclass(frozen=True)
class RewardMachine:
    """Finite automaton over integer labels with a reward attached to each state."""

    n_states: int
    transition: Callable[[int, int], int]
    state_reward: Callable[[int], float]
    terminal_set: frozenset[int] = field(default_factory=frozenset)
    initial: int = 0

    def step(self, state: int, label: int) -> tuple[int, float]:
        """Move on ``label``; the reward is read at the successor state.

        Terminal states are absorbing with zero reward.
        """
        if state in self.terminal_set:
            return state, 0.0
        nxt = self.transition(state, label)
        if not 0 <= nxt < self.n_states:
            raise ValueError(f"transition left the state set: {state} -> {nxt}")
        return nxt, self.state_reward(nxt)


def quantize(rho: float, granularity: int) -> int:
    """round(L * rho), ties away from zero."""
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    x = granularity * rho
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def rm_transition(l: int, delta: int, granularity: int) -> int:
    nxt = l + delta
    if nxt < 0:
        return 0
    if nxt > granularity:
        return granularity
    return nxt


def rm_reward(l: int, granularity: int) -> float:
    return -l / granularity


def constraint_machine(granularity: int) -> RewardMachine:
    """The clamped-walk machine as a generic automaton (no terminal states)."""
    return RewardMachine(
        n_states=granularity + 1,
        transition=lambda l, d: rm_transition(l, d, granularity),
        state_reward=lambda l: rm_reward(l, granularity),
    )


@dataclass(frozen=True)
class ConstraintRM:
    granularity: int
    kind: str = DROP
    current: int = 0

    def __post_init__(self) -> None:
        if self.granularity < 1:
            raise ValueError("granularity must be >= 1")
        if not 0 <= self.current <= self.granularity:
            raise ValueError(f"state {self.current} outside 0..{self.granularity}")

    def reset(self) -> ConstraintRM:
        return replace(self, current=0)

    @property
    def reward(self) -> float:
        return rm_reward(self.current, self.granularity)


def rm_step(rm: ConstraintRM, rho: float) -> tuple[ConstraintRM, float]:
    nxt = rm_transition(rm.current, quantize(rho, rm.granularity), rm.granularity)
    return replace(rm, current=nxt), rm_reward(nxt, rm.granularity)


def augment(observation: np.ndarray, u_d: int, u_m: int, granularity: int) -> np.ndarray:
    for u in (u_d, u_m):
        if not 0 <= u <= granularity:
            raise ValueError(f"RM state {u} outside 0..{granularity}")
    extra = np.array([u_d / granularity, u_m / granularity], dtype=observation.dtype)
    return np.concatenate([observation, extra])
