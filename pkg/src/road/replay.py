"""Online replay buffer, offline/online mixed sampling and mixing strategies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from road.agent import Batch, OfflineDataset, concat_batches
from road.bandit import BanditState, record, select_arm
from road.mdp import Transition


class EmptySourceError(ValueError):
    """A data source required by the requested mixture holds no transitions."""


class OnlineBuffer:
    """Fixed-capacity FIFO ring of online transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.total_inserted = 0
        self._state = np.zeros(capacity, dtype=np.int64)
        self._action = np.zeros(capacity, dtype=np.int64)
        self._reward = np.zeros(capacity)
        self._next_state = np.zeros(capacity, dtype=np.int64)
        self._done = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return min(self.total_inserted, self.capacity)

    def push(self, t: Transition) -> "OnlineBuffer":
        i = self.total_inserted % self.capacity
        self._state[i], self._action[i], self._reward[i], self._next_state[i], self._done[i] = t
        self.total_inserted += 1
        return self

    def take(self, idx: np.ndarray) -> Batch:
        """Elements at logical positions ``idx`` (0 is the oldest retained)."""
        pos = (self.total_inserted - len(self) + np.asarray(idx)) % self.capacity
        return Batch(self._state[pos], self._action[pos], self._reward[pos], self._next_state[pos],
                     self._done[pos], np.zeros(len(pos), dtype=bool))

    def contents(self) -> Batch:
        return self.take(np.arange(len(self)))

    def transitions(self) -> list[Transition]:
        return self.contents().transitions()


def sample_offline(offline: OfflineDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    return offline.transitions.take(rng.integers(len(offline), size=batch_size))


def sample_online(online: OnlineBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    if len(online) == 0:
        raise EmptySourceError("online buffer is empty")
    return online.take(rng.integers(len(online), size=batch_size))


def sample_mixed(offline: OfflineDataset | None, online: OnlineBuffer, m: float, batch_size: int,
                 rng: np.random.Generator) -> Batch:
    """Each element comes from the offline set with probability ``m``, else from the buffer."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"mixing ratio must lie in [0, 1], got {m}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if m < 1.0 and len(online) == 0:
        raise EmptySourceError("online buffer is empty but m < 1 requires online samples")
    if m > 0.0 and (offline is None or len(offline) == 0):
        raise EmptySourceError("offline dataset is empty but m > 0 requires offline samples")
    from_offline = rng.random(batch_size) < m
    n_off = int(from_offline.sum())
    parts = []
    if n_off:
        parts.append(sample_offline(offline, n_off, rng))
    if n_off < batch_size:
        parts.append(sample_online(online, batch_size - n_off, rng))
    batch = concat_batches(parts) if len(parts) > 1 else parts[0]
    # restore the drawn interleaving so the tags line up with the Bernoulli draws
    order = np.empty(batch_size, dtype=np.int64)
    order[np.flatnonzero(from_offline)] = np.arange(n_off)
    order[np.flatnonzero(~from_offline)] = n_off + np.arange(batch_size - n_off)
    return batch.take(order)


def union_batch(offline: OfflineDataset | None, online: OnlineBuffer) -> Batch:
    parts = []
    if offline is not None:
        parts.append(offline.transitions)
    if len(online):
        parts.append(online.contents())
    if not parts:
        raise EmptySourceError("both data sources are empty")
    return concat_batches(parts)


def sample_weighted(offline: OfflineDataset | None, online: OnlineBuffer, weights: np.ndarray,
                    batch_size: int, rng: np.random.Generator) -> Batch:
    """Draw from the union (offline first, then buffer oldest-first) with per-sample weights."""
    pool = union_batch(offline, online)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(pool),):
        raise ValueError(f"need {len(pool)} weights, got {weights.shape}")
    cum = np.cumsum(weights)
    idx = np.searchsorted(cum, rng.random(batch_size) * cum[-1], side="right")
    return pool.take(np.minimum(idx, len(pool) - 1))


def br_weights(offline: OfflineDataset | None, online_policy_occupancy: np.ndarray, smoothing: float = 1e-3,
               online: OnlineBuffer | None = None) -> np.ndarray:
    """Tabular balanced-replay priorities over the union of both sources.

    A sample at pair (s, a) gets weight proportional to
    ``(d_pi(s, a) + smoothing) / (d_data(s, a) + smoothing)`` where ``d_data`` is
    the empirical pair frequency over the union. Normalized to sum to 1.
    """
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    occ = np.asarray(online_policy_occupancy, dtype=float)
    occ = occ / occ.sum()
    pool = union_batch(offline, online if online is not None else OnlineBuffer(1))
    counts = np.zeros(occ.shape)
    np.add.at(counts, (pool.state, pool.action), 1.0)
    ratio = (occ + smoothing) / (counts / len(pool) + smoothing)
    w = ratio[pool.state, pool.action]
    return w / w.sum()


@dataclass(frozen=True)
class MixingDirective:
    ratio: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if (self.ratio is None) == (self.weights is None):
            raise ValueError("directive needs exactly one of ratio or weights")
        if self.ratio is not None and not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.weights is not None:
            w = np.asarray(self.weights)
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative and sum to 1")


class Strategy:
    """Base class: one directive per period."""

    label = "strategy"

    def next_directive(self, period_index: int, **context) -> MixingDirective:
        raise NotImplementedError

    def observe(self, directive: MixingDirective, reward: float) -> None:
        """Period-end feedback; only adaptive strategies use it."""


class Fixed(Strategy):
    def __init__(self, m: float):
        if not 0.0 <= m <= 1.0:
            raise ValueError("m must lie in [0, 1]")
        self.m = float(m)
        self.label = f"fixed({self.m:g})"

    def next_directive(self, period_index: int, **context) -> MixingDirective:
        return MixingDirective(ratio=self.m)


class Decreasing(Strategy):
    label = "decreasing"

    def __init__(self, m_high: float = 0.5, m_low: float = 0.1, total_periods: int = 100):
        if not 0.0 <= m_low <= m_high <= 1.0:
            raise ValueError("need 0 <= m_low <= m_high <= 1")
        if total_periods < 1:
            raise ValueError("total_periods must be >= 1")
        self.m_high, self.m_low, self.total_periods = float(m_high), float(m_low), int(total_periods)

    def ratio(self, period_index: int) -> float:
        if not 0 <= period_index < self.total_periods:
            raise ValueError(f"period {period_index} outside schedule of {self.total_periods} periods")
        if self.total_periods == 1:
            return self.m_high
        frac = period_index / (self.total_periods - 1)
        return self.m_high - (self.m_high - self.m_low) * frac

    def next_directive(self, period_index: int, **context) -> MixingDirective:
        return MixingDirective(ratio=self.ratio(period_index))


class Uniform(Strategy):
    label = "uniform"

    def __init__(self, arms: Sequence[float], rng: np.random.Generator):
        if not arms:
            raise ValueError("need at least one arm")
        self.arms = tuple(float(a) for a in arms)
        self.rng = rng

    def next_directive(self, period_index: int, **context) -> MixingDirective:
        return MixingDirective(ratio=self.arms[int(self.rng.integers(len(self.arms)))])


class BalancedReplay(Strategy):
    """Needs ``offline``, ``online`` and ``occupancy`` in the directive context."""

    label = "balanced_replay"

    def __init__(self, smoothing: float = 1e-3):
        if smoothing <= 0:
            raise ValueError("smoothing must be > 0")
        self.smoothing = float(smoothing)

    def next_directive(self, period_index: int, **context) -> MixingDirective:
        w = br_weights(context["offline"], context["occupancy"], self.smoothing, online=context["online"])
        return MixingDirective(weights=w)


class Road(Strategy):
    label = "road"

    def __init__(self, bandit: BanditState):
        self.bandit = bandit

    def next_directive(self, period_index: int, **context) -> MixingDirective:
        return MixingDirective(ratio=select_arm(self.bandit))

    def observe(self, directive: MixingDirective, reward: float) -> None:
        record(self.bandit, directive.ratio, reward)


def next_directive(state: Strategy, period_index: int, **context) -> MixingDirective:
    return state.next_directive(period_index, **context)
