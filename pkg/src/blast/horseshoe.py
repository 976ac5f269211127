"""Horseshoe shrinkage updates.

Parameterization: local ``eta_j = 1 / lambda_j^2``, global ``xi = 1 / tau^2``,
prior variance multiplier ``nu_j = 1 / (xi * eta_j)``, with
``lambda_j ~ C+(0, 1)`` and ``tau ~ C+(0, psi)``.

Local scales get one slice-sampling step per sweep (Polson, Scott and Windle
2014 two-step slice); the global scale gets a log-scale random-walk
Metropolis-Hastings step, optionally with a truncated-normal proposal that
keeps it above a lower bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.random import Generator
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize_scalar
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import InputError, NumericalError
from .kernels import GaussianSpec, draw_inverse_gamma, fast_gaussian_draw

C_FLOOR = 1e-12
ETA_BOUNDS = (1e-100, 1e100)
XI_BOUNDS = (1e-100, 1e100)
TARGET_ACCEPTANCE = 0.23
STEP_BOUNDS = (1e-3, 10.0)
PSI0_BOUNDS = (-20.0, 20.0)


@dataclass
class HorseshoeBlockState:
    etas: np.ndarray
    xi: float = 1.0
    psi: float = 1.0
    step_size: float = 0.8

    def __post_init__(self):
        self.etas = np.asarray(self.etas, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.etas)) or np.any(self.etas <= 0):
            raise InputError("etas must be positive and finite")
        for name in ("xi", "psi", "step_size"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InputError(f"{name} must be positive and finite, got {v}")

    @classmethod
    def initial(cls, p: int, psi: float = 1.0, step_size: float = 0.8) -> "HorseshoeBlockState":
        return cls(np.ones(p), 1.0, psi, step_size)

    def local_scales(self) -> np.ndarray:
        """nu_j = 1 / (xi * eta_j)."""
        return 1.0 / (self.xi * self.etas)

    @property
    def tau2(self) -> float:
        return 1.0 / self.xi


def draw_eta_local(beta, xi: float, sigma2: float, eta, rng: Generator) -> np.ndarray:
    """One slice-sampling update of eta_j with density prop. to exp(-c eta) / (1 + eta).

    ``c = beta_j^2 xi / (2 sigma2)``, floored at 1e-12 so the density stays
    proper when ``beta_j == 0``.  Vectorized over ``beta`` and ``eta``.
    """
    beta = np.asarray(beta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(eta)) and np.isfinite(xi) and np.isfinite(sigma2)):
        raise InputError("draw_eta_local requires finite inputs")
    if xi <= 0 or sigma2 <= 0:
        raise InputError("xi and sigma2 must be positive")
    c = np.maximum(beta * beta * (xi / (2.0 * sigma2)), C_FLOOR)
    shape = np.broadcast(c, eta).shape
    # u ~ U(0, 1/(1+eta)); the slice {eta: 1/(1+eta) > u} is (0, (1-u)/u)
    v = 1.0 - rng.random(shape)
    upper = (1.0 + eta) / v - 1.0
    w = 1.0 - rng.random(shape)
    new = -np.log1p(w * np.expm1(-c * upper)) / c
    return np.clip(new, *ETA_BOUNDS)


def eta_log_density(eta, c: float):
    """Unnormalized log density of the local-scale full conditional."""
    eta = np.asarray(eta, dtype=float)
    return -c * eta - np.log1p(eta)


def _log_prior_xi(xi: float, psi: float) -> float:
    # 1 / (sqrt(xi / psi) (1 + xi psi^2)), i.e. tau = xi^{-1/2} ~ C+(0, psi)
    return -0.5 * math.log(xi / psi) - math.log1p(xi * psi * psi)


def _collapsed_terms(d: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """log|I + X D X'| and y'(I + X D X')^{-1} y, factorizing the smaller of n x n and p x p."""
    n = y.size
    if n <= X.shape[1]:
        M = (X * d) @ X.T
        M.flat[:: n + 1] += 1.0
        rhs, offset = y, 0.0
    else:
        # same determinant and quadratic form through the p x p identity
        # |I + X D X'| = |I + D^1/2 X'X D^1/2|, y'M^{-1}y = y'y - h'(I + D^1/2 X'X D^1/2)^{-1} h
        s = np.sqrt(d)
        M = s[:, None] * (X.T @ X) * s[None, :]
        M.flat[:: M.shape[0] + 1] += 1.0
        rhs, offset = s * (X.T @ y), float(y @ y)
    try:
        L, lower = cho_factor(M, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError("M_xi factorization failed") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    solved = float(rhs @ cho_solve((L, lower), rhs, check_finite=False))
    quad = solved if n <= X.shape[1] else max(offset - solved, 0.0)
    return logdet, quad


def xi_log_density(
    xi: float,
    etas: np.ndarray,
    psi: float,
    design: np.ndarray,
    response: np.ndarray,
    omega: float = 1.0,
) -> float:
    """Log of p(xi | eta, psi, y) with beta and sigma^2 integrated out (up to a constant).

    ``|M|^{-1/2} (omega/2 + y'M^{-1}y/2)^{-(N+omega)/2}`` times the global
    prior, with ``M = I_N + xi^{-1} X diag(1/eta) X'`` factorized by Cholesky.
    """
    if not (np.isfinite(xi) and xi > 0 and psi > 0 and omega > 0):
        raise InputError("xi, psi and omega must be positive and finite")
    X = np.atleast_2d(np.asarray(design, dtype=float))
    y = np.asarray(response, dtype=float).reshape(-1)
    n = y.size
    lp = _log_prior_xi(xi, psi)
    if n == 0:
        return lp
    logdet, quad = _collapsed_terms(1.0 / (xi * np.asarray(etas, dtype=float)), X, y)
    return -0.5 * logdet - 0.5 * (n + omega) * math.log(0.5 * omega + 0.5 * quad) + lp


def xi_conditional_log_density(xi: float, coef: np.ndarray, etas: np.ndarray, sigma2: float, psi: float) -> float:
    """Log of p(xi | beta, eta, sigma^2) up to a constant, for beta_j ~ N(0, sigma^2 / (xi eta_j))."""
    if not xi > 0:
        return -math.inf
    coef = np.asarray(coef, dtype=float)
    ss = float(np.sum(etas * coef * coef)) / (2.0 * sigma2)
    return 0.5 * coef.size * math.log(xi) - xi * ss + _log_prior_xi(xi, psi)


def _proposal_log_normalizer(x: float, step: float, log_lower: float | None) -> float:
    # log P(N(x, step) >= log_lower)
    if log_lower is None:
        return 0.0
    return float(log_ndtr((x - log_lower) / step))


def xi_proposal_log_density(x_from: float, x_to: float, step: float, log_lower: float | None = None) -> float:
    """Log density of proposing log-xi ``x_to`` from ``x_from`` (normal, optionally truncated)."""
    if log_lower is not None and x_to < log_lower:
        return -math.inf
    z = (x_to - x_from) / step
    return -0.5 * z * z - math.log(step) - 0.5 * math.log(2 * math.pi) - _proposal_log_normalizer(x_from, step, log_lower)


def xi_log_acceptance(
    xi_from: float,
    xi_to: float,
    log_density: Callable[[float], float],
    step: float,
    lower_bound: float | None = None,
) -> float:
    """Log MH ratio for a move of xi on the log scale (includes the xi*/xi Jacobian)."""
    x, y = math.log(xi_from), math.log(xi_to)
    log_lower = None if lower_bound is None else math.log(lower_bound)
    return (
        log_density(xi_to) - log_density(xi_from)
        + (y - x)
        + _proposal_log_normalizer(x, step, log_lower)
        - _proposal_log_normalizer(y, step, log_lower)
    )


def _truncated_normal(mean: float, step: float, lower: float, rng: Generator) -> float:
    a = (lower - mean) / step
    if a > 37.0:
        # far tail: exponential approximation to the truncated normal
        return lower + step * rng.exponential() / a
    u = 1.0 - rng.random()
    return mean - step * float(ndtri(u * ndtr(-a)))


def xi_mh_step(
    state: HorseshoeBlockState,
    log_density: Callable[[float], float],
    rng: Generator,
    lower_bound: float | None = None,
    upper_bound: float | None = None,
) -> tuple[HorseshoeBlockState, bool]:
    """Log-scale random-walk Metropolis-Hastings update of the global scale xi.

    ``log_density`` is the unnormalized log target in xi.  With
    ``lower_bound`` the proposal is the normal truncated to
    ``[log lower_bound, inf)`` and the acceptance ratio includes the ratio of
    truncation normalizers.  ``upper_bound`` restricts the target support
    (proposals above it are rejected).  Returns a new state and the accept flag.
    """
    step = state.step_size
    x = math.log(state.xi)
    if lower_bound is not None:
        y = _truncated_normal(x, step, math.log(lower_bound), rng)
    else:
        y = x + step * rng.standard_normal()
    xi_new = min(max(math.exp(y), XI_BOUNDS[0]), XI_BOUNDS[1])
    if upper_bound is not None and xi_new > upper_bound:
        return state, False
    outside = (lower_bound is not None and state.xi < lower_bound) or (
        upper_bound is not None and state.xi > upper_bound
    )
    if outside:
        # current point has zero target mass; any admissible proposal is accepted
        accept = True
    else:
        log_ratio = xi_log_acceptance(state.xi, xi_new, log_density, step, lower_bound)
        accept = math.log(rng.random()) < log_ratio if not math.isnan(log_ratio) else False
    if not accept:
        return state, False
    return HorseshoeBlockState(state.etas, xi_new, state.psi, state.step_size), True


def step_size_adapt(
    step_size: float,
    accepted_rate: float,
    iteration: int,
    gain: float = 1.0,
    target: float = TARGET_ACCEPTANCE,
    bounds: tuple[float, float] = STEP_BOUNDS,
) -> float:
    """Robbins-Monro multiplicative step-size update toward the target acceptance rate."""
    if iteration < 1:
        raise InputError("iteration must be >= 1")
    new = step_size * math.exp(gain / math.sqrt(iteration) * (accepted_rate - target))
    return min(max(new, bounds[0]), bounds[1])


def horseshoe_sweep(
    state: HorseshoeBlockState,
    coef: np.ndarray,
    sigma2: float,
    rng: Generator,
    *,
    lower_bound: float | None = None,
    upper_bound: float | None = None,
    adapt_iteration: int | None = None,
) -> tuple[HorseshoeBlockState, bool]:
    """Update all local scales, then the global scale given the block coefficients.

    If ``adapt_iteration`` is set, the MH step size is tuned toward 23%
    acceptance (use only during burn-in).
    """
    etas = draw_eta_local(coef, state.xi, sigma2, state.etas, rng)
    state = HorseshoeBlockState(etas, state.xi, state.psi, state.step_size)

    def log_density(xi):
        return xi_conditional_log_density(xi, coef, etas, sigma2, state.psi)

    state, accepted = xi_mh_step(state, log_density, rng, lower_bound, upper_bound)
    if adapt_iteration is not None:
        state.step_size = step_size_adapt(state.step_size, float(accepted), adapt_iteration)
    return state, accepted


@dataclass
class EmpiricalBayesTrace:
    tau_squared_draws: np.ndarray
    sample_size: int

    def __post_init__(self):
        self.tau_squared_draws = np.asarray(self.tau_squared_draws, dtype=float).reshape(-1)
        if self.tau_squared_draws.size < 1:
            raise InputError("empirical Bayes needs at least one tau^2 draw")
        if np.any(~np.isfinite(self.tau_squared_draws)) or np.any(self.tau_squared_draws <= 0):
            raise InputError("tau^2 draws must be positive and finite")
        if int(self.sample_size) < 1:
            raise InputError("sample size must be a positive integer")


def half_cauchy_mean_loglik(psi0, tau: np.ndarray, n: int):
    """Mean log half-Cauchy density of ``tau`` under scale exp(psi0)/sqrt(n).

    Vectorized over ``psi0``.
    """
    psi0 = np.asarray(psi0, dtype=float)
    log_s = psi0 - 0.5 * math.log(n)
    s2 = np.exp(2.0 * log_s)[..., None]
    ll = math.log(2.0 / math.pi) + log_s[..., None] - np.log(s2 + tau * tau)
    return ll.mean(axis=-1)


def empirical_bayes_psi(trace: EmpiricalBayesTrace, xatol: float = 1e-6) -> float:
    """Monte Carlo EM estimate psi_hat = exp(psi0_hat) / sqrt(n).

    ``psi0_hat`` maximizes the average half-Cauchy log density of the sampled
    tau values over ``psi0`` in [-20, 20] (bounded Brent search).
    """
    tau = np.sqrt(trace.tau_squared_draws)
    n = int(trace.sample_size)
    res = minimize_scalar(
        lambda t: -float(half_cauchy_mean_loglik(t, tau, n)),
        bounds=PSI0_BOUNDS,
        method="bounded",
        options={"xatol": xatol},
    )
    return math.exp(res.x) / math.sqrt(n)


def horseshoe_regression(
    design: np.ndarray,
    response: np.ndarray,
    iterations: int,
    rng: Generator,
    *,
    burn_in: int = 0,
    psi: float = 1.0,
    omega: float = 1.0,
    step_size: float = 0.8,
) -> dict[str, np.ndarray]:
    """Single-study horseshoe regression by the exact blocked sampler.

    Each iteration: slice-update the local scales, MH-update xi from its
    density with beta and sigma^2 integrated out, draw sigma^2 | xi, eta
    with beta integrated out, then draw beta with the O(N^2 p) Gaussian kernel.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    hs = HorseshoeBlockState.initial(p, psi=psi, step_size=step_size)
    beta = np.zeros(p)
    sigma2 = 1.0
    out = {
        "beta": np.empty((iterations, p)),
        "sigma2": np.empty(iterations),
        "xi": np.empty(iterations),
    }
    for t in range(iterations):
        etas = draw_eta_local(beta, hs.xi, sigma2, hs.etas, rng)
        hs = HorseshoeBlockState(etas, hs.xi, hs.psi, hs.step_size)
        hs, accepted = xi_mh_step(hs, lambda xi: xi_log_density(xi, etas, psi, X, y, omega), rng)
        if t < burn_in:
            hs.step_size = step_size_adapt(hs.step_size, float(accepted), t + 1)
        d = hs.local_scales()
        _, quad = _collapsed_terms(d, X, y)
        sigma2 = float(draw_inverse_gamma(0.5 * (omega + n), 0.5 * (omega + quad), rng))
        beta = fast_gaussian_draw(GaussianSpec(X, d, y, math.sqrt(sigma2)), rng)
        out["beta"][t] = beta
        out["sigma2"][t] = sigma2
        out["xi"][t] = hs.xi
    return out
