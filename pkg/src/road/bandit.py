"""Sliding-window UCB over a discrete set of mixing ratios."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

DEFAULT_ARMS = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_C = 2.0
DEFAULT_WINDOW = 1000


@dataclass
class BanditState:
    """Arms, exploration constant and the retained (arm_index, reward) history.

    ``window=None`` is the growing window: every record is retained.
    ``period`` is the 1-based index of the period about to be selected, so it
    equals the number of records plus one.
    """

    arms: tuple[float, ...] = DEFAULT_ARMS
    window: int | None = DEFAULT_WINDOW
    c: float = DEFAULT_C
    history: deque = field(default=None)  # type: ignore[assignment]
    period: int = 1

    def __post_init__(self):
        self.arms = tuple(float(a) for a in self.arms)
        if not self.arms:
            raise ValueError("need at least one arm")
        if len(set(self.arms)) != len(self.arms):
            raise ValueError("arms must be distinct")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.c < 0:
            raise ValueError("exploration constant must be >= 0")
        self.history = deque(self.history or (), maxlen=self.window)

    def arm_index(self, arm: float) -> int:
        try:
            return self.arms.index(float(arm))
        except ValueError:
            raise ValueError(f"{arm} is not one of the arms {self.arms}") from None


def window_means(state: BanditState) -> list[tuple[float, int]]:
    """Per-arm (mean, count) over the retained window; mean is NaN when count is 0."""
    sums = [0.0] * len(state.arms)
    counts = [0] * len(state.arms)
    for i, r in state.history:
        sums[i] += r
        counts[i] += 1
    return [(s / n if n else math.nan, n) for s, n in zip(sums, counts)]


def ucb_values(state: BanditState) -> list[float]:
    """UCB index per arm; +inf for arms absent from the window."""
    horizon = state.period if state.window is None else min(state.period, state.window)
    log_term = math.log(horizon)
    return [mean + math.sqrt(state.c * log_term / n) if n else math.inf
            for mean, n in window_means(state)]


def select_arm(state: BanditState) -> float:
    values = ucb_values(state)
    best = max(range(len(values)), key=lambda i: (values[i], -i))
    return state.arms[best]


def record(state: BanditState, arm: float, reward: float) -> BanditState:
    if not math.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    state.history.append((state.arm_index(arm), float(reward)))
    state.period += 1
    return state


def make_bandit(arms: Sequence[float] = DEFAULT_ARMS, window: int | None = DEFAULT_WINDOW,
                c: float = DEFAULT_C) -> BanditState:
    return BanditState(tuple(arms), window, c)
