"""Surrogate bandit reward: perceived improvement on offline minus on online data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from road.agent import Batch, OfflineDataset
from road.replay import OnlineBuffer, sample_offline, sample_online


@dataclass(frozen=True)
class SurrogateConfig:
    kappa: float = 1.0
    batch_size: int = 256
    action_expectation: str = "exact"  # or "sampled"

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.action_expectation not in ("exact", "sampled"):
            raise ValueError("action_expectation must be 'exact' or 'sampled'")


@dataclass(frozen=True)
class SurrogateStats:
    delta_off: float
    delta_on: float
    r_q: float


def perceived_improvement(q: np.ndarray, policy: np.ndarray, batch: Batch, exact: bool = True,
                          rng: np.random.Generator | None = None) -> float:
    """Mean policy value at the batch states minus mean value of the batch's own actions."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    s = batch.state
    # differences first, so a constant row gives exactly zero and shifts cancel
    gaps = q[s] - q[s, batch.action][:, None]
    if exact:
        improvement = (policy[s] * gaps).sum(axis=1)
    else:
        cum = np.cumsum(policy[s], axis=1)
        u = rng.random(len(s))[:, None] * cum[:, -1:]
        a = np.minimum((cum <= u).sum(axis=1), q.shape[1] - 1)
        improvement = gaps[np.arange(len(s)), a]
    return float(improvement.mean())


def compute_rq(q: np.ndarray, policy: np.ndarray, offline_batch: Batch, online_batch: Batch,
               cfg: SurrogateConfig = SurrogateConfig(), rng: np.random.Generator | None = None) -> SurrogateStats:
    exact = cfg.action_expectation == "exact"
    if not exact and rng is None:
        raise ValueError("sampled action expectation needs a random generator")
    if len(offline_batch) == 0 or len(online_batch) == 0:
        raise ValueError("both batches must be non-empty")
    d_off = perceived_improvement(q, policy, offline_batch, exact, rng)
    d_on = perceived_improvement(q, policy, online_batch, exact, rng)
    r_q = d_off - cfg.kappa * d_on
    if not np.isfinite(r_q):
        raise FloatingPointError("non-finite surrogate reward")
    return SurrogateStats(d_off, d_on, r_q)


def period_stats(q: np.ndarray, policy: np.ndarray, offline: OfflineDataset, online: OnlineBuffer,
                 cfg: SurrogateConfig, rng: np.random.Generator) -> SurrogateStats:
    """Draw one batch from each source and evaluate the surrogate on them."""
    off = sample_offline(offline, cfg.batch_size, rng)
    on = sample_online(online, cfg.batch_size, rng)
    return compute_rq(q, policy, off, on, cfg, rng)


def period_reward(q: np.ndarray, policy: np.ndarray, offline: OfflineDataset, online: OnlineBuffer,
                  cfg: SurrogateConfig, rng: np.random.Generator) -> float:
    return period_stats(q, policy, offline, online, cfg, rng).r_q
