"""Numerical checks of the mixing-ratio hypergradient and the overestimation-bias analysis.

The hypergradient is worked out for linear Q-functions ``f = Phi @ w`` fitted by
weighted least squares under ``d_m = m * d_off + (1 - m) * d_on`` and a softmax
policy. The bias experiments sample Gaussian value-error fields over a single
state's action set.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from road.agent import softmax_policy
from road.mdp import Mdp, bellman_backup, exact_occupancy, random_mdp


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class LinearQ:
    features: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.features, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if phi.ndim != 2 or w.shape != (phi.shape[1],):
            raise ValueError("features must be (pairs, p) and weights length p")
        if np.linalg.matrix_rank(phi, tol=1e-10) < phi.shape[1]:
            raise ValueError("features must have full column rank")
        object.__setattr__(self, "features", phi)
        object.__setattr__(self, "weights", w)

    def values(self, shape: tuple[int, int]) -> np.ndarray:
        return (self.features @ self.weights).reshape(shape)


def weighted_fqi_solve(phi: np.ndarray, targets: np.ndarray, mix_weights: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Weights minimizing ``sum d (y - phi w)^2 + ridge |w|^2``."""
    phi = np.asarray(phi, dtype=float)
    d = np.asarray(mix_weights, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if (d < 0).any():
        raise ValueError("mixing weights must be nonnegative")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    h = phi.T @ (d[:, None] * phi) + ridge * np.eye(phi.shape[1])
    if ridge == 0 and np.linalg.matrix_rank(h) < phi.shape[1]:
        raise SingularSystemError("weighted normal matrix is singular; use ridge > 0")
    return np.linalg.solve(h, phi.T @ (d * y))


def outer_objective(mdp: Mdp, phi: np.ndarray, w: np.ndarray, beta: float) -> float:
    """Occupancy-weighted value of ``f = phi w`` under its own softmax policy."""
    f = (np.asarray(phi) @ w).reshape(mdp.shape)
    return float((exact_occupancy(mdp, softmax_policy(f, beta)) * f).sum())


def outer_gradient_f(mdp: Mdp, f: np.ndarray, beta: float) -> np.ndarray:
    """Exact gradient of ``outer_objective`` with respect to the table ``f``.

    Equals ``d(s,a) * (1 + beta * (G(s,a) - E_pi G(s,.)))`` where ``G`` is the
    one-step lookahead of the value of reward ``E_pi f`` under the policy.
    """
    f = np.asarray(f, dtype=float).reshape(mdp.shape)
    pi = softmax_policy(f, beta)
    occ = exact_occupancy(mdp, pi)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    u = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, (pi * f).sum(axis=1))
    g = f + mdp.discount * mdp.transition @ u
    adv = g - (pi * g).sum(axis=1, keepdims=True)
    return occ * (1.0 + beta * adv)


def _mixture(d_off, d_on, m):
    return m * np.asarray(d_off, dtype=float).ravel() + (1.0 - m) * np.asarray(d_on, dtype=float).ravel()


def outer_gradient_m(mdp: Mdp, phi: np.ndarray, targets: np.ndarray, d_off: np.ndarray, d_on: np.ndarray,
                     m: float, beta: float, ridge: float = 1e-8) -> float:
    """d/dm of ``outer_objective`` at the weighted least-squares fit under ``d_m``."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    d_m = _mixture(d_off, d_on, m)
    if ridge == 0 and (d_m <= 0).any():
        raise SingularSystemError("d_m has zero entries; use ridge > 0")
    h = phi.T @ (d_m[:, None] * phi) + ridge * np.eye(phi.shape[1])
    w = np.linalg.solve(h, phi.T @ (d_m * y))
    dd = np.asarray(d_off, dtype=float).ravel() - np.asarray(d_on, dtype=float).ravel()
    dw = np.linalg.solve(h, phi.T @ (dd * (y - phi @ w)))
    grad_f = outer_gradient_f(mdp, phi @ w, beta).ravel()
    return float(grad_f @ (phi @ dw))


def approximate_gradient_m(mdp: Mdp, f: np.ndarray, targets: np.ndarray, d_off: np.ndarray, d_on: np.ndarray,
                           m: float, beta: float) -> float:
    """Tabular closed form with the ``f ~ Q^pi`` substitution.

    Uses ``pi'(a|s) = pi(a|s) (1 + A_f(s, a))`` in place of the exact policy
    derivative. Only meaningful as a comparison against ``outer_gradient_m``.
    """
    f = np.asarray(f, dtype=float).reshape(mdp.shape)
    pi = softmax_policy(f, beta)
    occ = exact_occupancy(mdp, pi)
    adv = f - (pi * f).sum(axis=1, keepdims=True)
    delta = f.ravel() - np.asarray(targets, dtype=float).ravel()
    d_m = _mixture(d_off, d_on, m)
    dd = np.asarray(d_off, dtype=float).ravel() - np.asarray(d_on, dtype=float).ravel()
    return float(-((occ * (1.0 + adv)).ravel() / d_m * dd * delta).sum())


def finite_difference_gradient_m(mdp: Mdp, phi: np.ndarray, targets: np.ndarray, d_off: np.ndarray,
                                 d_on: np.ndarray, m: float, beta: float, ridge: float = 1e-8,
                                 h: float = 1e-5) -> float:
    def objective(mm):
        w = weighted_fqi_solve(phi, targets, _mixture(d_off, d_on, mm), ridge)
        return outer_objective(mdp, phi, w, beta)

    return (objective(m + h) - objective(m - h)) / (2.0 * h)


@dataclass(frozen=True, eq=False)
class GradientFixture:
    mdp: Mdp
    phi: np.ndarray
    targets: np.ndarray
    d_off: np.ndarray
    d_on: np.ndarray
    m: float
    beta: float


def random_gradient_fixture(rng: np.random.Generator, max_states: int = 6, max_actions: int = 3) -> GradientFixture:
    n_states = int(rng.integers(2, max_states + 1))
    n_actions = int(rng.integers(2, max_actions + 1))
    mdp = random_mdp(n_states, n_actions, rng, discount=float(rng.uniform(0.5, 0.95)))
    n_pairs = n_states * n_actions
    p = int(rng.integers(1, n_pairs - 1))
    phi = rng.normal(size=(n_pairs, p))
    targets = bellman_backup(mdp, rng.normal(size=mdp.shape)).ravel()
    d_off = rng.dirichlet(np.ones(n_pairs))
    d_on = rng.dirichlet(np.ones(n_pairs))
    return GradientFixture(mdp, phi, targets, d_off, d_on, float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.5, 2.0)))


def gradient_check(n_fixtures: int = 20, seed: int = 0, ridge: float = 1e-8, h: float = 1e-5) -> list[dict]:
    """Analytic versus central-difference hypergradients on random fixtures."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_fixtures):
        fx = random_gradient_fixture(rng)
        args = (fx.mdp, fx.phi, fx.targets, fx.d_off, fx.d_on, fx.m, fx.beta, ridge)
        analytic = outer_gradient_m(*args)
        fd = finite_difference_gradient_m(*args, h=h)
        rows.append({
            "fixture": i,
            "n_states": fx.mdp.n_states,
            "n_actions": fx.mdp.n_actions,
            "n_features": fx.phi.shape[1],
            "m": fx.m,
            "beta": fx.beta,
            "analytic": analytic,
            "finite_difference": fd,
            "relative_error": abs(analytic - fd) / max(abs(fd), 1e-8),
        })
    return rows


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Gaussian error field over actions with covariance ``amplitude * kernel``."""

    kernel: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("kernel must be square")
        if np.abs(k - k.T).max() > 1e-12:
            raise ValueError("kernel must be symmetric")
        if np.linalg.eigvalsh(k).min() < -1e-10:
            raise ValueError("kernel must be positive semidefinite")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        object.__setattr__(self, "kernel", k)

    @property
    def covariance(self) -> np.ndarray:
        return self.amplitude * self.kernel

    def factor(self) -> np.ndarray:
        """Matrix ``L`` with ``L @ L.T == covariance``, keeping only the nonzero spectrum."""
        vals, vecs = np.linalg.eigh(self.covariance)
        keep = vals > 1e-12 * max(vals.max(), 0.0)
        if not keep.any():
            return np.zeros((len(vals), 1))
        return vecs[:, keep] * np.sqrt(vals[keep])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        factor = self.factor()
        return rng.standard_normal((n, factor.shape[1])) @ factor.T


@dataclass(frozen=True)
class BiasReport:
    empirical_bias: float
    empirical_bias_se: float
    predicted_bias: float
    empirical_true_advantage: float
    empirical_true_advantage_se: float
    predicted_true_advantage: float
    snr: float
    baseline_bias: float
    baseline_bias_se: float
    relative_bias: float
    relative_bias_se: float
    clipped_fraction: float
    n_draws: int

    def to_dict(self) -> dict:
        return asdict(self)


def _mean_se(total: float, total_sq: float, n: int) -> tuple[float, float]:
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, float(np.sqrt(var / n))


def bias_monte_carlo(f_true: np.ndarray, noise: NoiseModel, base_policy: np.ndarray, beta_pg: float,
                     n_draws: int, rng: np.random.Generator, update: str = "linear",
                     chunk_elements: int = 2_000_000) -> BiasReport:
    """Monte Carlo bias of one policy-improvement step against a noisy value row.

    Each draw perturbs ``f_true`` by a sample of ``noise`` and improves
    ``base_policy`` against the noisy row, either with the first-order step
    ``pi_k * (1 + beta * advantage)`` (clipped and renormalized if it turns
    negative) or the exponential tilt ``pi_k * exp(beta * advantage)``.

    ``relative_bias`` subtracts the zero-mean baseline term ``E_{pi_k}[eps]``
    draw by draw; it estimates the same quantity as ``empirical_bias`` with far
    lower variance and is what ``snr`` is built from.
    """
    f = np.asarray(f_true, dtype=float)
    pk = np.asarray(base_policy, dtype=float)
    if f.shape != pk.shape or noise.kernel.shape != (len(f), len(f)):
        raise ValueError("f_true, base_policy and noise kernel must agree in size")
    if (pk < 0).any() or abs(pk.sum() - 1.0) > 1e-12:
        raise ValueError("base_policy must be a probability row")
    if update not in ("linear", "exponential"):
        raise ValueError("update must be 'linear' or 'exponential'")
    if n_draws < 2:
        raise ValueError("need at least two draws")
    factor = noise.factor()
    v_true = pk @ f
    sums = np.zeros(4)
    sq = np.zeros(4)
    var_eps_total = 0.0
    clipped = 0
    chunk = max(1, chunk_elements // len(f))
    done = 0
    while done < n_draws:
        n = min(chunk, n_draws - done)
        eps = rng.standard_normal((n, factor.shape[1])) @ factor.T
        f_hat = f + eps
        adv = f_hat - (f_hat @ pk)[:, None]
        if update == "linear":
            pi = pk * (1.0 + beta_pg * adv)
            bad = (pi < 0).any(axis=1)
            if bad.any():
                clipped += int(bad.sum())
                pi[bad] = np.clip(pi[bad], 0.0, None)
                pi[bad] /= pi[bad].sum(axis=1, keepdims=True)
        else:
            tilt = np.exp(beta_pg * (adv - adv.max(axis=1, keepdims=True)))
            pi = pk * tilt
            pi /= pi.sum(axis=1, keepdims=True)
        bias = (pi * eps).sum(axis=1)
        baseline = eps @ pk
        true_adv = pi @ f - v_true
        cols = np.stack([bias, baseline, bias - baseline, true_adv])
        sums += cols.sum(axis=1)
        sq += (cols ** 2).sum(axis=1)
        var_eps_total += float(((eps ** 2) @ pk - baseline ** 2).sum())
        done += n
    (b, b_se), (b0, b0_se), (rb, rb_se), (ta, ta_se) = (_mean_se(sums[i], sq[i], n_draws) for i in range(4))
    var_f = float(pk @ (f - v_true) ** 2)
    snr = rb / ta if ta != 0 else (0.0 if rb == 0 else float("inf"))
    return BiasReport(
        empirical_bias=b, empirical_bias_se=b_se,
        predicted_bias=beta_pg * var_eps_total / n_draws,
        empirical_true_advantage=ta, empirical_true_advantage_se=ta_se,
        predicted_true_advantage=beta_pg * var_f,
        snr=snr,
        baseline_bias=b0, baseline_bias_se=b0_se,
        relative_bias=rb, relative_bias_se=rb_se,
        clipped_fraction=clipped / n_draws, n_draws=n_draws,
    )


def expected_variance_under(policy: np.ndarray, kernel: np.ndarray) -> float:
    """Closed form of ``E[Var_{a~policy}(eps)]`` for a zero-mean field with covariance ``kernel``."""
    p = np.asarray(policy, dtype=float)
    k = np.asarray(kernel, dtype=float)
    return float(p @ np.diag(k) - p @ k @ p)


def characteristic_length(values: np.ndarray, grid: np.ndarray | None = None) -> float:
    """Ratio of L2 norm to L2 norm of the central-difference gradient; inf if flat."""
    values = np.asarray(values, dtype=float)
    if len(values) < 3:
        raise ValueError("need at least 3 grid points")
    if grid is None:
        grad, span = np.gradient(values), len(values) - 1.0
    else:
        grid = np.asarray(grid, dtype=float)
        grad, span = np.gradient(values, grid), float(grid[-1] - grid[0])
    vnorm, gnorm = np.linalg.norm(values), np.linalg.norm(grad)
    # rounding in the grid spacing leaves a tiny gradient on constant input
    if gnorm <= 1e-10 * vnorm / span or gnorm == 0:
        return float("inf")
    return float(vnorm / gnorm)


def gradient_matrix(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    return np.gradient(np.eye(len(grid)), grid, axis=0)


def noise_characteristic_length(noise: NoiseModel, grid: np.ndarray) -> float:
    cov = noise.covariance
    total = np.trace(cov)
    g = gradient_matrix(grid)
    grad_total = float(np.einsum("ij,jk,ik->", g, cov, g))
    if grad_total <= 0:
        return float("inf")
    return float(np.sqrt(total / grad_total))


def snr_prediction(f_true: np.ndarray, noise: NoiseModel, grid: np.ndarray) -> float:
    """Closed-form ``(E[eps^2] / |f|^2) * (lambda_f / lambda_eps)^2``.

    Zero noise gives 0. A flat noise field (infinite length) also gives 0; a flat
    ``f`` with nonzero rough noise gives inf.
    """
    f = np.asarray(f_true, dtype=float)
    noise_power = np.trace(noise.covariance) / len(f)
    if noise_power == 0:
        return 0.0
    lam_eps = noise_characteristic_length(noise, grid)
    if np.isinf(lam_eps):
        return 0.0
    signal_power = float(np.mean(f ** 2))
    lam_f = characteristic_length(f, grid)
    if signal_power == 0 or np.isinf(lam_f):
        return float("inf")
    return float(noise_power / signal_power * (lam_f / lam_eps) ** 2)


def bias_check(n_draws: int = 100_000, seed: int = 0) -> dict:
    """Closed-form versus Monte Carlo bias for white and fully correlated noise."""
    rng = np.random.default_rng(seed)
    n_actions, beta = 4, 0.01
    uniform = np.full(n_actions, 1.0 / n_actions)
    f = np.zeros(n_actions)
    white = NoiseModel(np.eye(n_actions))
    correlated = NoiseModel(np.ones((n_actions, n_actions)))
    out = {}
    for name, noise in (("white", white), ("correlated", correlated)):
        rep = bias_monte_carlo(f, noise, uniform, beta, n_draws, rng)
        closed = beta * expected_variance_under(uniform, noise.covariance)
        out[name] = {
            **rep.to_dict(),
            "closed_form_bias": closed,
            "z_score": (rep.empirical_bias - closed) / rep.empirical_bias_se if rep.empirical_bias_se else 0.0,
        }
    return out
