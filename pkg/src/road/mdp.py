"""Finite tabular MDPs: construction, exact evaluation and sampling."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

PROB_ATOL = 1e-12


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    done: bool


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple[Transition, ...]
    discounted_return: float

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with absorbing, zero-reward terminal states.

    ``transition`` has shape (S, A, S), ``reward`` (S, A). Arrays are copied and
    made read-only on construction.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float
    terminal: np.ndarray = field(default=None)  # type: ignore[assignment]
    _cum: np.ndarray = field(init=False, repr=False)
    _cum0: np.ndarray = field(init=False, repr=False)
    _fast: tuple = field(init=False, repr=False)

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        mu = np.array(self.initial_dist, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        n_states, n_actions = p.shape[:2]
        if n_states < 1 or n_actions < 1:
            raise ValueError("need at least one state and one action")
        if r.shape != (n_states, n_actions):
            raise ValueError(f"reward must have shape {(n_states, n_actions)}, got {r.shape}")
        if mu.shape != (n_states,):
            raise ValueError(f"initial_dist must have shape {(n_states,)}, got {mu.shape}")
        if self.terminal is None:
            term = np.zeros(n_states, dtype=bool)
        else:
            term = np.array(self.terminal, dtype=bool)
            if term.shape != (n_states,):
                raise ValueError(f"terminal must have shape {(n_states,)}")
        if not 0.0 < float(self.discount) < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if (p < 0).any() or not np.allclose(p.sum(axis=2), 1.0, rtol=0, atol=PROB_ATOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if (mu < 0).any() or abs(mu.sum() - 1.0) > PROB_ATOL:
            raise ValueError("initial_dist must be nonnegative and sum to 1")
        if not np.isfinite(r).all():
            raise ValueError("reward must be finite")
        for s in np.flatnonzero(term):
            if not (p[s, :, s] == 1.0).all() or (r[s] != 0.0).any():
                raise ValueError(f"terminal state {s} must self-loop with reward 0")
        for name, arr in (("transition", p), ("reward", r), ("initial_dist", mu), ("terminal", term)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))
        cum = np.cumsum(p, axis=2)
        cum[..., -1] = 1.0
        cum0 = np.cumsum(mu)
        cum0[-1] = 1.0
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "_cum0", cum0)
        # plain-list copies for the scalar sampling loop
        object.__setattr__(self, "_fast", (cum.tolist(), r.tolist(), term.tolist(), cum0.tolist()))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_states, self.n_actions)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "discount": self.discount,
            "terminal": self.terminal.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mdp":
        mdp = cls(
            transition=np.asarray(doc["transition"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            discount=doc["discount"],
            terminal=np.asarray(doc.get("terminal", [False] * len(doc["initial_dist"])), dtype=bool),
        )
        if mdp.n_states != doc.get("n_states", mdp.n_states) or mdp.n_actions != doc.get("n_actions", mdp.n_actions):
            raise ValueError("n_states / n_actions disagree with array shapes")
        return mdp

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path: str | Path) -> "Mdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_chain_mdp(n_cells: int = 10, step_reward: float = -1.0, goal_reward: float = 10.0,
                    discount: float = 0.9) -> Mdp:
    """Deterministic chain from cell 0 to terminal cell ``n_cells - 1``.

    Action 0 advances one cell, action 1 advances two (clamped at the terminal).
    Entering the terminal pays ``goal_reward``; any other move pays ``step_reward``.
    """
    if n_cells < 3:
        raise ValueError(f"n_cells must be >= 3, got {n_cells}")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {discount}")
    goal = n_cells - 1
    p = np.zeros((n_cells, 2, n_cells))
    r = np.zeros((n_cells, 2))
    for s in range(goal):
        for a, stride in enumerate((1, 2)):
            nxt = min(s + stride, goal)
            p[s, a, nxt] = 1.0
            r[s, a] = goal_reward if nxt == goal else step_reward
    p[goal, :, goal] = 1.0
    mu = np.zeros(n_cells)
    mu[0] = 1.0
    terminal = np.zeros(n_cells, dtype=bool)
    terminal[goal] = True
    return Mdp(p, r, mu, discount, terminal)


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator, discount: float = 0.9,
               concentration: float = 1.0) -> Mdp:
    """Dense random MDP with Dirichlet transitions and no terminal states."""
    p = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    r = rng.normal(size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    return Mdp(p, r, mu, discount)


def check_policy(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != mdp.shape:
        raise ValueError(f"policy must have shape {mdp.shape}, got {policy.shape}")
    if (policy < 0).any() or not np.allclose(policy.sum(axis=1), 1.0, rtol=0, atol=PROB_ATOL):
        raise ValueError("policy rows must be nonnegative and sum to 1")
    return policy


def _check_index(mdp: Mdp, state: int, action: int) -> None:
    if not 0 <= state < mdp.n_states:
        raise IndexError(f"state {state} out of range [0, {mdp.n_states})")
    if not 0 <= action < mdp.n_actions:
        raise IndexError(f"action {action} out of range [0, {mdp.n_actions})")


def step(mdp: Mdp, state: int, action: int, rng: np.random.Generator) -> Transition:
    _check_index(mdp, state, action)
    cum, reward, terminal, _ = mdp._fast
    if terminal[state]:
        return Transition(state, action, 0.0, state, True)
    nxt = bisect_right(cum[state][action], rng.random())
    return Transition(state, action, reward[state][action], nxt, terminal[nxt])


def sample_initial_state(mdp: Mdp, rng: np.random.Generator) -> int:
    return bisect_right(mdp._fast[3], rng.random())


def _policy_cum(policy: np.ndarray) -> list[list[float]]:
    cum = np.cumsum(policy, axis=1)
    cum /= cum[:, -1:]
    cum[:, -1] = 1.0
    return cum.tolist()


def sample_action(policy: np.ndarray, state: int, rng: np.random.Generator) -> int:
    row = policy[state]
    return min(bisect_right(np.cumsum(row).tolist(), rng.random() * row.sum()), len(row) - 1)


def rollout(mdp: Mdp, policy: np.ndarray, max_steps: int, rng: np.random.Generator) -> Trajectory:
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    pcum = _policy_cum(np.asarray(policy, dtype=float))
    state = sample_initial_state(mdp, rng)
    transitions = []
    ret, disc = 0.0, 1.0
    for _ in range(max_steps):
        t = step(mdp, state, bisect_right(pcum[state], rng.random()), rng)
        transitions.append(t)
        ret += disc * t.reward
        disc *= mdp.discount
        if t.done:
            break
        state = t.next_state
    return Trajectory(tuple(transitions), ret)


def _policy_system(mdp: Mdp, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    policy = check_policy(mdp, policy)
    p_pi = np.einsum("sa,sat->st", policy, mdp.transition)
    r_pi = (policy * mdp.reward).sum(axis=1)
    return np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # gamma < 1 keeps (I - gamma P) nonsingular; a failure here is a bug, not user error
    x = np.linalg.solve(a, b)
    if not np.isfinite(x).all():
        raise FloatingPointError("policy evaluation produced non-finite values")
    return x


def state_values(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    a, r_pi = _policy_system(mdp, policy)
    return _solve(a, r_pi)


def policy_return(mdp: Mdp, policy: np.ndarray) -> float:
    """Exact expected discounted return from the initial distribution."""
    return float(mdp.initial_dist @ state_values(mdp, policy))


def exact_occupancy(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    """Normalized discounted state-action occupancy, shape (S, A), summing to 1."""
    a, _ = _policy_system(mdp, policy)
    nu = (1.0 - mdp.discount) * _solve(a.T, mdp.initial_dist)
    return nu[:, None] * policy


def bellman_backup(mdp: Mdp, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.shape:
        raise ValueError(f"q must have shape {mdp.shape}, got {q.shape}")
    v = q.max(axis=1)
    v[mdp.terminal] = 0.0
    out = mdp.reward + mdp.discount * mdp.transition @ v
    out[mdp.terminal] = 0.0
    return out


def value_iteration(mdp: Mdp, tol: float = 1e-12, max_iter: int = 100_000, minimize: bool = False) -> np.ndarray:
    """Optimal (or, with ``minimize``, pessimal) action values."""
    q = np.zeros(mdp.shape)
    for _ in range(max_iter):
        if minimize:
            v = q.min(axis=1)
            v[mdp.terminal] = 0.0
            new = mdp.reward + mdp.discount * mdp.transition @ v
            new[mdp.terminal] = 0.0
        else:
            new = bellman_backup(mdp, q)
        if np.abs(new - q).max() <= tol:
            return new
        q = new
    return q


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic argmax policy; ties go to the lowest action index."""
    q = np.asarray(q)
    policy = np.zeros(q.shape)
    policy[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return policy


def return_bounds(mdp: Mdp) -> tuple[float, float]:
    """(worst, best) return over deterministic stationary policies."""
    worst = policy_return(mdp, greedy_policy(-value_iteration(mdp, minimize=True)))
    best = policy_return(mdp, greedy_policy(value_iteration(mdp)))
    return worst, best


def normalized_score(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if hi - lo <= 0:
        return 100.0
    return 100.0 * (value - lo) / (hi - lo)
