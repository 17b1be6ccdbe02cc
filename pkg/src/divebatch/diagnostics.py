"""Empirical verifiers for the optimizer's supporting mathematics.

All stochastic checks run on the mean-anchored quadratic objective
L(theta) = (1/n) sum_i 0.5 ||theta - z_i||^2, whose minimizer (the anchor
mean) and moment constants are available in closed form, so every bound can
be evaluated without estimating unknowns.  Expectations are estimated over
explicit seed ensembles with 95% confidence intervals; a check only fails
when the empirical mean lands beyond the bound plus the interval half-width.
Aggregation uses order-independent statistics (means, counts); reordering
ensemble members moves results by less than 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import LogisticModel, MlpModel, QuadraticModel, per_sample_grad, per_sample_loss
from .optim import DegenerateGradientError
from .streams import DIAGNOSTICS, stream

_Z95 = 1.959963984540054  # two-sided 95% normal quantile


class RobbinsMonroError(ValueError):
    """The stepsize sequence violates the divergent-sum / convergent-square-sum conditions."""


@dataclass(frozen=True)
class ConvergenceConstants:
    """Smoothness and moment constants of the objective and its stochastic gradients.

    ``L``: Lipschitz constant of the full gradient.  ``mu``/``mu_G``: lower and
    upper alignment of the expected stochastic gradient with the full one.
    ``M``/``M_V``: constant and gradient-proportional variance terms.
    ``L_inf``: lower bound on the objective.
    """

    L: float
    mu: float
    mu_G: float
    M: float
    M_V: float
    L_inf: float

    @property
    def M_G(self) -> float:
        return self.M_V + self.mu_G**2

    @property
    def max_fixed_step(self) -> float:
        return self.mu / (self.L * self.M_G)


def quadratic_constants(anchors: np.ndarray) -> ConvergenceConstants:
    """Closed-form constants for the mean-anchored quadratic.

    The single-sample gradient theta - z_i is an unbiased estimate of the full
    gradient theta - mean(z) (so mu = mu_G = 1), its variance is the anchor
    scatter independent of theta (M = mean ||z_i - mean||^2, M_V = 0), and the
    full gradient is 1-Lipschitz.  The minimum value equals half the scatter.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    center = anchors.mean(axis=0)
    scatter = float(np.mean(np.einsum("ij,ij->i", anchors - center, anchors - center)))
    return ConvergenceConstants(L=1.0, mu=1.0, mu_G=1.0, M=scatter, M_V=0.0, L_inf=0.5 * scatter)


@dataclass
class FiniteDiffReport:
    model_family: str
    trials: int
    step: float
    tol: float
    rel_errors: np.ndarray
    passed: bool

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max())


@dataclass
class OneStepBoundReport:
    """One-step distance-contraction check for a diversity-sized mini-batch."""

    empirical_lhs: float
    bound_rhs: float
    ci_halfwidth: float
    batch_size: int
    delta: float
    num_samples: int
    passed: bool


@dataclass
class BoundCheckReport:
    steps: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    ci_halfwidth: np.ndarray
    violations: int
    passed: bool
    constants: ConvergenceConstants
    details: dict = field(default_factory=dict)


def _random_model(family: str, rng: np.random.Generator):
    """Unit-scaled random instance of a family, plus one random sample."""
    if family == "logistic":
        d = 12
        model = LogisticModel(rng.standard_normal(d), float(rng.standard_normal()))
    elif family == "mlp":
        d, h = 8, 5
        model = MlpModel(
            rng.standard_normal((h, d)), rng.standard_normal(h),
            rng.standard_normal(h), float(rng.standard_normal()),
        )
    elif family == "quadratic":
        d = 16
        model = QuadraticModel(rng.standard_normal(d))
    else:
        raise ValueError(f"unknown model family {family!r}")
    x = rng.uniform(-1.0, 1.0, size=d)
    y = float(rng.integers(0, 2))
    return model, x, y


def finite_diff_check(model_family: str, trials: int = 100, step: float = 1e-5,
                      tol: float = 1e-5, seed: int = 0) -> FiniteDiffReport:
    """Compare analytic per-sample gradients against central differences.

    For each trial the relative error is ||g_analytic - g_fd|| / ||g_analytic||
    (L2); the check passes when every trial stays within ``tol``.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = stream(seed, DIAGNOSTICS, 0)
    errors = np.empty(trials)
    for t in range(trials):
        model, x, y = _random_model(model_family, rng)
        analytic = per_sample_grad(model, x, y)
        flat = model.to_flat()
        fd = np.empty_like(flat)
        for j in range(flat.size):
            bumped = flat.copy()
            bumped[j] = flat[j] + step
            hi = per_sample_loss(model.from_flat(bumped), x, y)
            bumped[j] = flat[j] - step
            lo = per_sample_loss(model.from_flat(bumped), x, y)
            fd[j] = (hi - lo) / (2.0 * step)
        scale = max(float(np.linalg.norm(analytic)), 1e-8)
        errors[t] = float(np.linalg.norm(analytic - fd)) / scale
    return FiniteDiffReport(model_family, trials, step, tol, errors, bool((errors <= tol).all()))


def _quadratic_moments(anchors: np.ndarray, theta: np.ndarray):
    """Mean gradient, mean squared gradient norm, and their diversity-identity check.

    Returns (mean_grad, M_sq, G_sq) with M_sq = mean_i ||grad_i||^2 and
    G_sq = ||mean gradient||^2, verifying that n * diversity recomputed from
    the raw sums matches M_sq / G_sq to 1e-12 relative.
    """
    model = QuadraticModel(theta)
    stats = model.grad_stats(anchors, None)
    n = anchors.shape[0]
    mean_grad = stats.grad_sum / n
    m_sq = stats.sq_norm_sum / n
    g_sq = float(np.dot(mean_grad, mean_grad))
    if g_sq > 0.0:
        n_delta_from_sums = n * stats.sq_norm_sum / float(np.dot(stats.grad_sum, stats.grad_sum))
        ratio = m_sq / g_sq
        if abs(n_delta_from_sums - ratio) > 1e-12 * abs(ratio):
            raise AssertionError(
                f"diversity identity violated: n*diversity={n_delta_from_sums!r} vs M^2/G={ratio!r}"
            )
    return mean_grad, m_sq, g_sq


def one_step_bound_check(anchors: np.ndarray, theta_t: np.ndarray, eta: float, delta: float,
                         num_samples: int, *, seed: int = 0, batch_size: int | None = None,
                         chunk_size: int = 20000) -> OneStepBoundReport:
    """Monte Carlo check of the one-step expected-distance bound.

    Draws mini-batches of size m = floor(delta * n * diversity) + 1 uniformly
    with replacement (the regime the bound is proved in), applies
    theta' = theta - eta * sum of batch gradients, and compares the averaged
    squared distance to the optimum against the closed-form right-hand side
    ||theta - theta*||^2 - m (2 eta <grad, theta - theta*> - (1+delta) eta^2 M^2).

    The flooring keeps m - 1 <= delta * n * diversity, which is exactly the
    condition under which the bound holds; rounding up could overshoot it by
    more than the Monte Carlo interval.  Pass ``batch_size`` explicitly to
    probe points where the diversity ratio is undefined (e.g. the optimum).
    """
    if num_samples <= 0:
        raise ValueError(f"num_samples must be positive, got {num_samples}")
    anchors = np.asarray(anchors, dtype=np.float64)
    theta_t = np.asarray(theta_t, dtype=np.float64)
    n = anchors.shape[0]
    mean_grad, m_sq, g_sq = _quadratic_moments(anchors, theta_t)
    if batch_size is None:
        if g_sq < 1e-300:
            raise DegenerateGradientError("mean gradient is zero at theta_t; pass batch_size explicitly")
        m = int(math.floor(delta * (m_sq / g_sq))) + 1
        if m > 10**6:
            raise DegenerateGradientError(
                f"diversity-sized batch {m} is impractically large; theta_t is numerically "
                "stationary, pass batch_size explicitly"
            )
    else:
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        m = int(batch_size)

    theta_star = anchors.mean(axis=0)
    offset = theta_t - theta_star
    dist0 = float(np.dot(offset, offset))
    rhs = dist0 - m * (2.0 * eta * float(np.dot(mean_grad, offset)) - (1.0 + delta) * eta**2 * m_sq)

    rng = stream(seed, DIAGNOSTICS, 1)
    total = 0.0
    total_sq = 0.0
    done = 0
    base = (1.0 - eta * m) * theta_t - theta_star
    while done < num_samples:
        count = min(chunk_size, num_samples - done)
        idx = rng.integers(0, n, size=(count, m))
        batch_sums = anchors[idx].sum(axis=1)
        moved = base[None, :] + eta * batch_sums
        dists = np.einsum("ij,ij->i", moved, moved)
        total += float(dists.sum())
        total_sq += float(np.dot(dists, dists))
        done += count
    mean_lhs = total / num_samples
    var = max(total_sq / num_samples - mean_lhs**2, 0.0)
    ci = _Z95 * math.sqrt(var / num_samples)
    return OneStepBoundReport(mean_lhs, rhs, ci, m, delta, num_samples,
                            passed=mean_lhs <= rhs + ci)


def _run_sgd_ensemble(anchors, theta_init, alphas, seeds, rng):
    """Single-sample SGD over a seed ensemble; returns per-step ||full gradient||^2.

    The full gradient of the quadratic is theta - mean(z), so the trajectory
    of its squared norm is exact, not sampled.  Shape (seeds, T).
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    n = anchors.shape[0]
    T = len(alphas)
    center = anchors.mean(axis=0)
    theta = np.tile(theta_init, (seeds, 1))
    grad_sq = np.empty((seeds, T))
    for t in range(T):
        diff = theta - center
        grad_sq[:, t] = np.einsum("ij,ij->i", diff, diff)
        picks = anchors[rng.integers(0, n, size=seeds)]
        theta = theta - alphas[t] * (theta - picks)
    return grad_sq


def _default_theta_init(anchors, rng):
    center = np.asarray(anchors, dtype=np.float64).mean(axis=0)
    return center + rng.standard_normal(center.shape[0])


def fixed_step_bound_check(anchors: np.ndarray, alpha: float, T: int, *, seeds: int = 64,
                           seed: int = 0, theta_init: np.ndarray | None = None) -> BoundCheckReport:
    """Prefix-averaged gradient-norm bound under a constant admissible stepsize.

    Runs single-sample SGD for T steps over a seed ensemble and checks, for
    every prefix length T', that the ensemble mean of (1/T') sum ||grad||^2
    stays below alpha*L*M/mu + 2*(L(theta_1) - L_inf)/(T'*mu*alpha), up to the
    95% confidence half-width.
    """
    constants = quadratic_constants(anchors)
    limit = constants.max_fixed_step
    if not 0.0 < alpha <= limit:
        raise ValueError(
            f"stepsize {alpha} outside the admissible range (0, {limit}] = (0, mu/(L*M_G)]"
        )
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = stream(seed, DIAGNOSTICS, 2)
    if theta_init is None:
        theta_init = _default_theta_init(anchors, rng)
    _quadratic_moments(np.asarray(anchors, dtype=np.float64), np.asarray(theta_init, dtype=np.float64))
    grad_sq = _run_sgd_ensemble(anchors, theta_init, np.full(T, alpha), seeds, rng)
    steps = np.arange(1, T + 1)
    prefix = np.cumsum(grad_sq, axis=1) / steps
    lhs = prefix.mean(axis=0)
    ci = _Z95 * prefix.std(axis=0, ddof=1) / math.sqrt(seeds)
    gap0 = 0.5 * float(np.sum((theta_init - np.asarray(anchors).mean(axis=0)) ** 2))
    rhs = (alpha * constants.L * constants.M / constants.mu
           + 2.0 * gap0 / (steps * constants.mu * alpha))
    violations = int(np.sum(lhs > rhs + ci))
    return BoundCheckReport(steps, lhs, rhs, ci, violations, violations == 0, constants,
                            details={"alpha": alpha, "seeds": seeds, "initial_gap": gap0})


def diminishing_step_check(anchors: np.ndarray, alpha0: float, c: float, T: int, *,
                           exponent: float = 1.0, seeds: int = 64, seed: int = 0,
                           threshold: float = 1e-3,
                           theta_init: np.ndarray | None = None) -> BoundCheckReport:
    """Weighted-average gradient decay under stepsizes alpha0 / (1 + c*t)^exponent.

    Requires exponent in (1/2, 1] so the stepsize sum diverges while the sum
    of squares converges, and every stepsize inside the fixed-step admissible
    range.  Passes when the weighted average (1/A_T) sum alpha_t ||grad_t||^2
    at T is below ``threshold`` (up to CI) and below its value at T/10.
    With c = 0 the sequence is constant and the fixed-step check applies.
    """
    if c < 0:
        raise ValueError(f"c must be >= 0, got {c}")
    if c == 0.0:
        return fixed_step_bound_check(anchors, alpha0, T, seeds=seeds, seed=seed,
                                      theta_init=theta_init)
    if exponent <= 0.5:
        raise RobbinsMonroError(
            f"exponent {exponent} <= 1/2 makes the sum of squared stepsizes diverge"
        )
    if exponent > 1.0:
        raise RobbinsMonroError(f"exponent {exponent} > 1 makes the stepsize sum converge")
    if T < 10:
        raise ValueError(f"T must be >= 10, got {T}")
    constants = quadratic_constants(anchors)
    limit = constants.max_fixed_step
    alphas = alpha0 / (1.0 + c * np.arange(1, T + 1)) ** exponent
    if alphas.max() > limit or alphas.min() <= 0:
        raise ValueError(
            f"stepsizes must lie in (0, {limit}] = (0, mu/(L*M_G)]; got max {alphas.max()}"
        )
    rng = stream(seed, DIAGNOSTICS, 3)
    if theta_init is None:
        theta_init = _default_theta_init(anchors, rng)
    _quadratic_moments(np.asarray(anchors, dtype=np.float64), np.asarray(theta_init, dtype=np.float64))
    grad_sq = _run_sgd_ensemble(anchors, theta_init, alphas, seeds, rng)
    weighted = np.cumsum(alphas * grad_sq, axis=1) / np.cumsum(alphas)
    lhs = weighted.mean(axis=0)
    ci = _Z95 * weighted.std(axis=0, ddof=1) / math.sqrt(seeds)
    steps = np.arange(1, T + 1)
    tenth = max(1, T // 10) - 1
    at_end, at_tenth = float(lhs[-1]), float(lhs[tenth])
    violations = int(at_end > threshold + ci[-1]) + int(not at_end < at_tenth)
    return BoundCheckReport(steps, lhs, np.full(T, threshold), ci, violations,
                            violations == 0, constants,
                            details={"alpha0": alpha0, "c": c, "exponent": exponent,
                                     "weighted_avg_at_T": at_end,
                                     "weighted_avg_at_T_tenth": at_tenth,
                                     "threshold": threshold, "seeds": seeds})
