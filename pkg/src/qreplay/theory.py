"""Desk-scale checks of the memorization/generalization tradeoff theory.

Synthetic strongly-convex environments (equal-curvature quadratics with
random centers) have a closed-form joint optimum, which makes two
directional claims cheap to probe by Monte Carlo:

* the probability that one parameter vector is epsilon-good for *every*
  stored environment decays as the number of environments grows;
* the error of an alpha-quantile estimated from m sampled risks shrinks
  as m grows.

Both are validated as trends, not as bound constants.
"""

import math
from dataclasses import dataclass

import numpy as np

from .quantile import phi_inverse


@dataclass
class QuadraticEnv:
    """loss(theta) = curvature/2 * ||theta - center||^2, restricted to the
    ball of radius ``radius`` (where it is curvature-strongly-convex and
    (2 * curvature * radius)-Lipschitz)."""

    center: np.ndarray
    curvature: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        if self.curvature <= 0:
            raise ValueError("curvature must be positive")
        if np.linalg.norm(self.center) > self.radius + 1e-12:
            raise ValueError("center must lie inside the domain ball")

    def loss(self, theta):
        d = np.asarray(theta, dtype=np.float64) - self.center
        return 0.5 * self.curvature * float(d @ d)


def global_solution(envs):
    """Minimizer of the summed losses: the centroid of the centers
    (requires equal curvature, where the closed form holds)."""
    if not envs:
        raise ValueError("no environments")
    curv = envs[0].curvature
    if any(abs(e.curvature - curv) > 1e-12 for e in envs):
        raise ValueError("environments must share one curvature")
    return np.mean([e.center for e in envs], axis=0)


def _uniform_ball(rng, n, dim, radius):
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return x * r


@dataclass
class TrialEstimate:
    value: float
    std_error: float


def memorization_probability(m, epsilon, n_trials, noise_scale, seed,
                             dim=2, curvature=1.0, radius=1.0):
    """Monte-Carlo estimate of P[every one of m environments has excess
    risk <= epsilon] for a parameter near (but not at) the joint optimum.

    Each trial draws m centers uniformly in the radius ball, places the
    candidate at the joint optimum plus isotropic Gaussian noise of scale
    noise_scale, and checks all m excess risks at once.
    """
    if m < 1 or n_trials < 1:
        raise ValueError("m and n_trials must be >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    centers = _uniform_ball(rng, n_trials * m, dim, radius).reshape(
        n_trials, m, dim
    )
    optimum = centers.mean(axis=1)
    theta = optimum + noise_scale * rng.normal(size=(n_trials, dim))
    # Excess risk per env: c/2 (||theta - c_tau||^2 - ||opt - c_tau||^2).
    d_theta = theta[:, None, :] - centers
    d_opt = optimum[:, None, :] - centers
    excess = 0.5 * curvature * (
        (d_theta ** 2).sum(axis=2) - (d_opt ** 2).sum(axis=2)
    )
    ok = (excess <= epsilon).all(axis=1)
    p = float(ok.mean())
    return TrialEstimate(p, math.sqrt(p * (1.0 - p) / n_trials))


@dataclass
class QuantileErrorEstimate:
    """Mean absolute deviation from the true alpha-quantile, for both the
    empirical order-statistic quantile and the Gaussian-fit quantile."""

    empirical_error: float
    gaussian_error: float


def quantile_estimation_error(m, alpha, n_trials, seed,
                              dist_mean=0.0, dist_std=1.0):
    """Estimate how far quantiles computed from m sampled risks fall from
    the true quantile of the risk distribution (Gaussian with the given
    mean/std; std 0 gives a degenerate point mass).

    The Gaussian fit uses the conventional std scaling here: this probes
    quantile *estimation*, not the trainer's update rule.
    """
    if m < 2:
        raise ValueError("need m >= 2 risks per trial")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    rng = np.random.default_rng(seed)
    true_q = dist_mean + dist_std * phi_inverse(alpha)
    if dist_std > 0:
        draws = rng.normal(dist_mean, dist_std, size=(n_trials, m))
    else:
        draws = np.full((n_trials, m), float(dist_mean))
    empirical = np.quantile(draws, alpha, axis=1)
    fits = draws.mean(axis=1) + draws.std(axis=1, ddof=1) * phi_inverse(alpha)
    return QuantileErrorEstimate(
        float(np.mean(np.abs(empirical - true_q))),
        float(np.mean(np.abs(fits - true_q))),
    )
