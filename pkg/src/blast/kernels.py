"""Low-level stochastic kernels: structured Gaussian draws and Inverse-Gamma draws.

All kernels take an explicit :class:`numpy.random.Generator`.  Use
:func:`rng_stream` to derive reproducible, independent generators from a
``(seed, stream_id)`` pair.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular

from .errors import InputError, NumericalError

logger = logging.getLogger(__name__)

_JITTER = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by a 64-bit seed and a stream index.

    Distinct ``stream_id`` values give statistically independent streams
    (numpy ``SeedSequence`` spawn keys); identical pairs give identical draws.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InputError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.stream_id) < 0:
            raise InputError(f"stream_id must be non-negative, got {self.stream_id}")

    def generator(self) -> Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return Generator(np.random.PCG64(ss))


def rng_stream(seed: int, stream_id: int = 0) -> Generator:
    """Shorthand for ``RngStream(seed, stream_id).generator()``."""
    return RngStream(seed, stream_id).generator()


@dataclass
class GaussianSpec:
    """Conjugate Gaussian regression system ``y ~ N(X b, s^2 I)``, ``b ~ N(0, s^2 diag(d))``.

    ``prior_scale`` holds the per-coefficient prior variance multipliers ``d``
    (for the horseshoe, ``d_j = 1 / (xi * eta_j)``).
    """

    design: np.ndarray
    prior_scale: np.ndarray
    response: np.ndarray
    noise_scale: float = 1.0

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.prior_scale = np.asarray(self.prior_scale, dtype=float).reshape(-1)
        self.response = np.asarray(self.response, dtype=float).reshape(-1)
        self.noise_scale = float(self.noise_scale)
        n, p = self.design.shape
        if p < 1:
            raise InputError("design must have at least one column")
        if self.prior_scale.shape != (p,):
            raise InputError(f"prior_scale has length {self.prior_scale.size}, expected {p}")
        if self.response.shape != (n,):
            raise InputError(f"response has length {self.response.size}, expected {n} rows")
        if not (np.all(np.isfinite(self.design)) and np.all(np.isfinite(self.response))):
            raise InputError("design and response must be finite")
        if not np.all(np.isfinite(self.prior_scale)) or np.any(self.prior_scale <= 0):
            raise InputError("prior_scale entries must be strictly positive and finite")
        if not np.isfinite(self.noise_scale) or self.noise_scale <= 0:
            raise InputError("noise_scale must be positive and finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.design.shape

    def posterior_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance by dense solve; intended for tests and small p."""
        X, d = self.design, self.prior_scale
        precision = X.T @ X + np.diag(1.0 / d)
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        return cov @ (X.T @ self.response), self.noise_scale**2 * cov


def _condition_report(matrix: np.ndarray) -> str:
    try:
        cond = np.linalg.cond(matrix)
    except np.linalg.LinAlgError:
        cond = float("inf")
    return f"{matrix.shape[0]}x{matrix.shape[1]} system, condition number {cond:.3e}"


def fast_gaussian_draw(
    spec: GaussianSpec,
    rng: Generator | None = None,
    *,
    u: np.ndarray | None = None,
    f: np.ndarray | None = None,
) -> np.ndarray:
    """Draw from N(A^{-1} X'y, s^2 A^{-1}), A = X'X + diag(d)^{-1}, in O(n^2 p).

    Uses the data-augmentation construction of Bhattacharya, Chakraborty and
    Mallick (2016): only the n x n matrix ``M = I + X D X'`` is factorized.

    ``u`` (length p) and ``f`` (length n) optionally inject the standard-normal
    driver vectors; the prior draw is ``sqrt(d) * u``.  With both set to zero
    the result is exactly the posterior mean.
    """
    X, d, y, sigma = spec.design, spec.prior_scale, spec.response, spec.noise_scale
    n, p = X.shape
    if u is None:
        u = rng.standard_normal(p)
    if f is None:
        f = rng.standard_normal(n)
    u = np.sqrt(d) * np.asarray(u, dtype=float)
    if n == 0:
        return sigma * u
    XD = X * d
    M = XD @ X.T
    M.flat[:: M.shape[0] + 1] += 1.0
    v = X @ u + np.asarray(f, dtype=float)
    rhs = y / sigma - v
    try:
        factor = cho_factor(M, lower=True, check_finite=False)
    except LinAlgError:
        logger.warning("M factorization failed; retrying with %.0e diagonal jitter", _JITTER)
        M.flat[:: M.shape[0] + 1] += _JITTER
        try:
            factor = cho_factor(M, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise NumericalError(f"cannot factor M: {_condition_report(M)}") from exc
    v_star = cho_solve(factor, rhs, check_finite=False)
    return sigma * (u + XD.T @ v_star)


def precision_gaussian_draw(
    gram: np.ndarray,
    xty: np.ndarray,
    prior_scale: np.ndarray,
    noise_scale: float,
    rng: Generator | None = None,
    *,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """Dense-factorization draw from sufficient statistics ``X'X`` and ``X'y``.

    Works in the prior-whitened coordinates ``b = sqrt(d) * t`` so that the
    factorized matrix ``I + sqrt(d) X'X sqrt(d)`` stays well conditioned when
    some prior scales are tiny.
    """
    s = np.sqrt(prior_scale)
    A = s[:, None] * gram * s[None, :]
    A.flat[:: A.shape[0] + 1] += 1.0
    try:
        L = cholesky(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError(f"posterior precision is not positive definite: {_condition_report(A)}") from exc
    mean_t = cho_solve((L, True), s * xty, check_finite=False)
    if z is None:
        z = rng.standard_normal(s.size)
    noise = solve_triangular(L, np.asarray(z, dtype=float), lower=True, trans="T", check_finite=False)
    return s * (mean_t + noise_scale * noise)


def direct_gaussian_draw(
    spec: GaussianSpec,
    rng: Generator | None = None,
    *,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """Same target as :func:`fast_gaussian_draw` via a p x p Cholesky factorization.

    ``z`` optionally injects the standard-normal driver vector (length p).
    """
    X = spec.design
    return precision_gaussian_draw(
        X.T @ X, X.T @ spec.response, spec.prior_scale, spec.noise_scale, rng, z=z
    )


def draw_inverse_gamma(shape: float, scale: float, rng: Generator, size=None):
    """Inverse-Gamma draw with density proportional to x^{-(shape+1)} exp(-scale / x)."""
    if not (np.isfinite(shape) and np.isfinite(scale)) or shape <= 0 or scale <= 0:
        raise InputError(f"Inverse-Gamma requires positive finite parameters, got ({shape}, {scale})")
    return scale / rng.standard_gamma(shape, size=size)
