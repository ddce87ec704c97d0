"""Tabular Q-learning, fitted Q-iteration and policy extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from road.mdp import Mdp, Transition, check_policy, rollout


@dataclass(frozen=True)
class AgentConfig:
    learning_rate: float = 1e-3
    discount: float = 0.9
    inv_temperature: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.inv_temperature <= 0:
            raise ValueError("inv_temperature must be > 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


class Batch(NamedTuple):
    """Column-oriented transitions. ``offline`` tags each element's source."""

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    offline: np.ndarray

    def __len__(self) -> int:
        return len(self.state)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], offline: bool = True) -> "Batch":
        n = len(transitions)
        cols = list(zip(*transitions)) if n else [(), (), (), (), ()]
        return cls(
            np.asarray(cols[0], dtype=np.int64),
            np.asarray(cols[1], dtype=np.int64),
            np.asarray(cols[2], dtype=float),
            np.asarray(cols[3], dtype=np.int64),
            np.asarray(cols[4], dtype=bool),
            np.full(n, offline, dtype=bool),
        )

    def transitions(self) -> list[Transition]:
        return [Transition(int(s), int(a), float(r), int(n), bool(d))
                for s, a, r, n, d in zip(self.state, self.action, self.reward, self.next_state, self.done)]

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(*(col[idx] for col in self))


def concat_batches(batches: Sequence[Batch]) -> Batch:
    return Batch(*(np.concatenate(cols) for cols in zip(*batches)))


def _td_targets(q: np.ndarray, batch: Batch, discount: float) -> np.ndarray:
    return batch.reward + discount * q[batch.next_state].max(axis=1) * (~batch.done)


def q_learning_update(q: np.ndarray, t: Transition, cfg: AgentConfig) -> np.ndarray:
    """One TD(0) step on ``q[t.state, t.action]``; returns a new table."""
    s, a, r, s2, done = t
    target = r + (0.0 if done else cfg.discount * float(np.max(q[s2])))
    value = q[s, a] + cfg.learning_rate * (target - q[s, a])
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite Q value at ({s}, {a})")
    out = np.array(q, dtype=float)
    out[s, a] = value
    return out


def q_learning_batch_update(q: np.ndarray, batch: Batch, cfg: AgentConfig) -> np.ndarray:
    """Semi-gradient step on the summed squared TD error of ``batch``.

    All targets use the incoming table, so duplicates of a pair accumulate their
    TD errors. Equal to sequential ``q_learning_update`` calls to first order in
    the learning rate.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    td = _td_targets(q, batch, cfg.discount) - q[batch.state, batch.action]
    out = np.array(q, dtype=float)
    np.add.at(out, (batch.state, batch.action), cfg.learning_rate * td)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite Q values after batch update")
    return out


def fqi_batch_update(q_prev: np.ndarray, batch: Batch, cfg: AgentConfig) -> np.ndarray:
    """Exact regression step: visited pairs take the mean of their Bellman targets."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    targets = _td_targets(q_prev, batch, cfg.discount)
    sums = np.zeros(q_prev.shape)
    counts = np.zeros(q_prev.shape)
    np.add.at(sums, (batch.state, batch.action), targets)
    np.add.at(counts, (batch.state, batch.action), 1.0)
    out = np.array(q_prev, dtype=float)
    seen = counts > 0
    out[seen] = sums[seen] / counts[seen]
    return out


def softmax_policy(q: np.ndarray, beta: float) -> np.ndarray:
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    z = beta * np.asarray(q, dtype=float)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def epsilon_greedy_policy(q: np.ndarray, epsilon: float) -> np.ndarray:
    """Epsilon-greedy with the greedy mass split evenly across tied maxima."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(q, dtype=float)
    n_actions = q.shape[1]
    best = q == q.max(axis=1, keepdims=True)
    greedy = best / best.sum(axis=1, keepdims=True)
    return (1.0 - epsilon) * greedy + epsilon / n_actions


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    transitions: Batch
    behavior_label: str
    seed: int | None = None

    def __post_init__(self):
        if len(self.transitions) == 0:
            raise ValueError("offline dataset must be non-empty")
        for col in self.transitions:
            col.setflags(write=False)

    def __len__(self) -> int:
        return len(self.transitions)

    def validate_for(self, mdp: Mdp) -> None:
        t = self.transitions
        if (t.state.min() < 0 or t.state.max() >= mdp.n_states or t.next_state.min() < 0
                or t.next_state.max() >= mdp.n_states or t.action.min() < 0
                or t.action.max() >= mdp.n_actions):
            raise ValueError("dataset indices out of range for this MDP")

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        t = self.transitions
        lines = ["state,action,reward,next_state,done"]
        lines += [f"{s},{a},{r!r},{n},{int(d)}" for s, a, r, n, d in
                  zip(t.state.tolist(), t.action.tolist(), t.reward.tolist(), t.next_state.tolist(), t.done.tolist())]
        path.write_text("\n".join(lines) + "\n")
        meta = {"behavior_label": self.behavior_label, "seed": self.seed, "n_transitions": len(self)}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def from_csv(cls, path: str | Path) -> "OfflineDataset":
        path = Path(path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        batch = Batch(rows[:, 0].astype(np.int64), rows[:, 1].astype(np.int64), rows[:, 2].astype(float),
                      rows[:, 3].astype(np.int64), rows[:, 4].astype(bool), np.ones(len(rows), dtype=bool))
        return cls(batch, meta.get("behavior_label", ""), meta.get("seed"))


def generate_offline_dataset(mdp: Mdp, policies: Sequence[tuple[np.ndarray, float]], n_steps: int,
                             rng: np.random.Generator, label: str | None = None,
                             max_episode_steps: int = 100, seed: int | None = None) -> OfflineDataset:
    """Roll out a per-episode mixture of behavior policies until ``n_steps`` transitions exist."""
    if not policies:
        raise ValueError("need at least one behavior policy")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    probs = [check_policy(mdp, p) for p, _ in policies]
    weights = np.array([w for _, w in policies], dtype=float)
    if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("policy weights must be nonnegative and sum to 1")
    collected: list[Transition] = []
    while len(collected) < n_steps:
        k = int(rng.choice(len(probs), p=weights))
        traj = rollout(mdp, probs[k], min(max_episode_steps, n_steps - len(collected)), rng)
        collected.extend(traj.transitions)
    if label is None:
        label = " + ".join(f"{w:g}*policy{i}" for i, w in enumerate(weights))
    return OfflineDataset(Batch.from_transitions(collected, offline=True), label, seed)
