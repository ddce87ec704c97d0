import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from road.agent import Batch, OfflineDataset, epsilon_greedy_policy, softmax_policy
from road.mdp import Transition
from road.replay import OnlineBuffer
from road.surrogate import SurrogateConfig, compute_rq, perceived_improvement, period_reward, period_stats


def batch_of(pairs, offline=True):
    return Batch.from_transitions([Transition(s, a, 0.0, s, False) for s, a in pairs], offline=offline)


def random_fixture(rng, n_states=4, n_actions=3, n=64):
    q = rng.normal(size=(n_states, n_actions))
    pol = softmax_policy(rng.normal(size=q.shape), 1.0)
    off = batch_of(zip(rng.integers(n_states, size=n), rng.integers(n_actions, size=n)))
    on = batch_of(zip(rng.integers(n_states, size=n), rng.integers(n_actions, size=n)), offline=False)
    return q, pol, off, on


def test_hand_fixture():
    q = np.array([[1.0, 0.0]])
    pol = np.array([[0.5, 0.5]])
    stats = compute_rq(q, pol, batch_of([(0, 0)] * 4), batch_of([(0, 1)] * 3), SurrogateConfig(kappa=1.0))
    assert stats.delta_off == -0.5
    assert stats.delta_on == 0.5
    assert stats.r_q == -1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e6, 1e6))
def test_constant_q_gives_zero(seed, value):
    _, pol, off, on = random_fixture(np.random.default_rng(seed))
    stats = compute_rq(np.full((4, 3), value), pol, off, on)
    assert stats.delta_off == 0.0 and stats.delta_on == 0.0 and stats.r_q == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
def test_shift_invariance(seed, shift):
    q, pol, off, on = random_fixture(np.random.default_rng(seed))
    a = compute_rq(q, pol, off, on)
    b = compute_rq(q + shift, pol, off, on)
    assert abs(a.delta_off - b.delta_off) <= 1e-12 * max(1.0, abs(shift))
    assert abs(a.delta_on - b.delta_on) <= 1e-12 * max(1.0, abs(shift))
    assert abs(a.r_q - b.r_q) <= 1e-12 * max(1.0, abs(shift))


def test_affine_in_kappa():
    q, pol, off, on = random_fixture(np.random.default_rng(1))
    r = {k: compute_rq(q, pol, off, on, SurrogateConfig(kappa=k)).r_q for k in (0.0, 1.0, 2.0)}
    d_on = compute_rq(q, pol, off, on).delta_on
    assert r[0.0] == compute_rq(q, pol, off, on).delta_off
    assert r[1.0] - r[0.0] == pytest.approx(-d_on, abs=1e-12)
    assert r[2.0] - r[1.0] == pytest.approx(-d_on, abs=1e-12)


def test_r_q_identity():
    q, pol, off, on = random_fixture(np.random.default_rng(2))
    cfg = SurrogateConfig(kappa=0.7)
    s = compute_rq(q, pol, off, on, cfg)
    assert s.r_q == s.delta_off - 0.7 * s.delta_on


def test_greedy_support_degeneracy():
    q = np.array([[0.0, 2.0], [5.0, 1.0]])
    pol = epsilon_greedy_policy(q, 0.0)
    off = batch_of([(0, 1), (1, 0), (0, 1)])
    assert perceived_improvement(q, pol, off) == 0.0


def test_sampled_agrees_with_exact():
    rng = np.random.default_rng(3)
    q, pol, off, on = random_fixture(rng)
    exact = compute_rq(q, pol, off, on).r_q
    cfg = SurrogateConfig(action_expectation="sampled")
    draws = np.array([compute_rq(q, pol, off, on, cfg, rng).r_q for _ in range(1000)])
    assert abs(draws.mean() - exact) <= 3 * draws.std(ddof=1) / np.sqrt(len(draws))


def test_errors():
    q = np.zeros((1, 2))
    pol = np.array([[0.5, 0.5]])
    with pytest.raises(ValueError):
        compute_rq(q, pol, batch_of([]), batch_of([(0, 0)]))
    with pytest.raises(ValueError):
        compute_rq(q, pol, batch_of([(0, 0)]), batch_of([(0, 0)]), SurrogateConfig(action_expectation="sampled"))
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        compute_rq(np.array([[np.inf, 0.0]]), pol, batch_of([(0, 0)]), batch_of([(0, 1)]))
    for bad in ({"kappa": -1}, {"batch_size": 0}, {"action_expectation": "mc"}):
        with pytest.raises(ValueError):
            SurrogateConfig(**bad)


def test_period_reward_deterministic():
    rng = np.random.default_rng(4)
    q, pol, off, _ = random_fixture(rng)
    offline = OfflineDataset(off, "test")
    buf = OnlineBuffer(50)
    for s, a in zip(rng.integers(4, size=30), rng.integers(3, size=30)):
        buf.push(Transition(int(s), int(a), 0.0, int(s), False))
    cfg = SurrogateConfig(batch_size=32)
    a = period_reward(q, pol, offline, buf, cfg, np.random.default_rng(9))
    b = period_reward(q, pol, offline, buf, cfg, np.random.default_rng(9))
    assert a == b == period_stats(q, pol, offline, buf, cfg, np.random.default_rng(9)).r_q


def test_defaults():
    cfg = SurrogateConfig()
    assert (cfg.kappa, cfg.batch_size, cfg.action_expectation) == (1.0, 256, "exact")
