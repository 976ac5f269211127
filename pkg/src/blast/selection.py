"""Source-study selection.

Collapsed marginal likelihoods (coefficients and a shared error variance
integrated out, local scales held fixed), tempered single-site Gibbs updates
of the inclusion vector ``gamma``, Robbins-Monro adaptation of the tempering
parameter, and pseudo-data for empty partitions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from numpy.random import Generator
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.special import gammaln

from .errors import InputError, NumericalError
from .model import BlockShrinkage, Dataset

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TemperingPolicy:
    mode: Literal["fixed", "adaptive"] = "fixed"
    kappa: float = 0.005
    target_rate: float = 0.25
    gain: float = 1.0
    bounds: tuple[float, float] = (1e-6, 10.0)

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise InputError(f"unknown tempering mode {self.mode!r}")
        low, high = self.bounds
        if not 0 < low <= high:
            raise InputError(f"invalid tempering bounds {self.bounds}")
        if not low <= self.kappa <= high:
            raise InputError(f"kappa={self.kappa} outside bounds {self.bounds}")
        if not 0 < self.target_rate < 1 or self.gain <= 0:
            raise InputError("target_rate must lie in (0, 1) and gain must be positive")

    @classmethod
    def for_dimension(cls, p: int, mode: str = "fixed", kappa: float = 0.005, **kw) -> "TemperingPolicy":
        """Policy with the default clamp interval [1/p^2, 10]."""
        low = min(1.0 / p**2, kappa)
        return cls(mode=mode, kappa=kappa, bounds=(low, max(10.0, kappa)), **kw)


PseudoMode = Literal["pseudo_data", "zero_impute", "prior_draw"]


@dataclass(frozen=True)
class PseudoDataPolicy:
    mode: PseudoMode = "pseudo_data"
    fraction: float = 0.05

    def __post_init__(self):
        if self.mode not in ("pseudo_data", "zero_impute", "prior_draw"):
            raise InputError(f"unknown pseudo-data mode {self.mode!r}")
        if not 0 < self.fraction <= 1:
            raise InputError(f"fraction must be in (0, 1], got {self.fraction}")


@dataclass
class MarginalContext:
    """Shared-variance prior and the local-scale snapshot used by both hypotheses."""

    shrinkage: dict[str, np.ndarray]
    shared_variance_prior: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        a, b = self.shared_variance_prior
        if a <= 0 or b <= 0:
            raise InputError("shared variance prior parameters must be positive")
        self.shrinkage = {
            k: (v.local_scales if isinstance(v, BlockShrinkage) else np.asarray(v, dtype=float))
            for k, v in self.shrinkage.items()
        }


def _local_scales(d) -> np.ndarray:
    d = d.local_scales if isinstance(d, BlockShrinkage) else np.asarray(d, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise InputError("local scales must be positive and finite")
    return d


def _collapsed(n: int, logdet: float, quad: float, prior: tuple[float, float]) -> float:
    """log of N(y; 0, s2 (I + Z P Z')) integrated against IG(s2; a, b)."""
    a, b = prior
    a_post = a + 0.5 * n
    return (
        -0.5 * n * LOG_2PI
        - 0.5 * logdet
        + a * math.log(b)
        - gammaln(a)
        + gammaln(a_post)
        - a_post * math.log(b + 0.5 * max(quad, 0.0))
    )


def _chol(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return cholesky(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        cond = np.linalg.cond(A)
        raise NumericalError(f"{what} is not positive definite (condition number {cond:.3e})") from exc


def _log_marginal_single(n, gram, xty, yty, d, prior) -> float:
    if n == 0:
        return 0.0
    s = np.sqrt(d)
    A = s[:, None] * gram * s[None, :]
    A.flat[:: A.shape[0] + 1] += 1.0
    L = _chol(A, "I + D^1/2 X'X D^1/2")
    hs = s * xty
    quad = yty - float(hs @ cho_solve((L, True), hs, check_finite=False))
    return _collapsed(n, 2.0 * float(np.sum(np.log(np.diag(L)))), quad, prior)


def marginal_log_lik_noninformative(
    stacked: Dataset, D, prior: tuple[float, float] = (0.5, 0.5)
) -> float:
    """log p(y_Abar | nu) with w_Abar ~ N(0, s2 D) and s2 ~ IG(a, b) integrated out.

    Equals ``-n/2 log(2 pi) - 1/2 log|D| - 1/2 log|X'X + D^{-1}| + a log b
    - log Gamma(a) + log Gamma(a + n/2) - (a + n/2) log(b + y'(y - yhat)/2)``
    with ``yhat`` the ridge-type fit.  An empty stack contributes 0.
    """
    d = _local_scales(D)
    return _log_marginal_single(stacked.n, stacked.gram, stacked.xty, stacked.yty, d, prior)


def _log_marginal_joint(n0, G0, h0, yy0, nA, GA, hA, yyA, dA, d0, prior) -> float:
    # Parameters theta = (w, delta) with prior s2 * blockdiag(D_A, D_0); designs
    # Z = [[X0, X0], [XA, 0]].  The 2p-dimensional system is reduced with a
    # Schur complement on the delta block (Q_A, M, b), in prior-whitened coordinates.
    sA, s0 = np.sqrt(dA), np.sqrt(d0)
    Q = sA[:, None] * (G0 + GA) * sA[None, :]
    Q.flat[:: Q.shape[0] + 1] += 1.0
    LQ = _chol(Q, "Q_A")
    C = sA[:, None] * G0 * s0[None, :]
    QC = cho_solve((LQ, True), C, check_finite=False)
    M = s0[:, None] * G0 * s0[None, :] - C.T @ QC
    M.flat[:: M.shape[0] + 1] += 1.0
    M = 0.5 * (M + M.T)
    LM = _chol(M, "Schur complement M")
    g1 = sA * (h0 + hA)
    g2 = s0 * h0
    Qg1 = cho_solve((LQ, True), g1, check_finite=False)
    b = g2 - C.T @ Qg1
    quad = yy0 + yyA - float(g1 @ Qg1) - float(b @ cho_solve((LM, True), b, check_finite=False))
    logdet = 2.0 * float(np.sum(np.log(np.diag(LQ))) + np.sum(np.log(np.diag(LM))))
    return _collapsed(n0 + nA, logdet, quad, prior)


def marginal_log_lik_target_informative(
    target: Dataset,
    stacked_inf: Dataset,
    D_A,
    D_0,
    ctx: MarginalContext | None = None,
) -> float:
    """log p(y_0, y_A | nu) with w, delta and the shared variance integrated out.

    y_0 = X_0 (w + delta) + e_0 and y_A = X_A w + e_A share one error
    variance s2 ~ IG(a, b); w ~ N(0, s2 D_A), delta ~ N(0, s2 D_0).  An empty
    informative stack reduces to the target-only marginal.
    """
    if target.n == 0:
        raise InputError("target data must be non-empty")
    prior = ctx.shared_variance_prior if ctx is not None else (0.5, 0.5)
    return _log_marginal_joint(
        target.n, target.gram, target.xty, target.yty,
        stacked_inf.n, stacked_inf.gram, stacked_inf.xty, stacked_inf.yty,
        _local_scales(D_A), _local_scales(D_0), prior,
    )


def inclusion_probability(log_incl: float, log_excl: float, kappa: float) -> float:
    """Tempered two-way softmax exp(k a) / (exp(k a) + exp(k b)).

    Written so that ``f(a, b) + f(b, a) == 1`` holds exactly in floating point.
    """
    x = kappa * (log_incl - log_excl)
    if math.isnan(x):
        return math.nan
    q = 1.0 / (1.0 + math.exp(-abs(x)))
    return q if x >= 0 else 1.0 - q


def adapt_kappa(policy: TemperingPolicy, accepted_rate: float, iteration: int) -> TemperingPolicy:
    """Robbins-Monro step kappa += c / sqrt(i) * (rate - target), clamped to the bounds."""
    if iteration < 1:
        raise InputError("iteration must be >= 1")
    kappa = policy.kappa + policy.gain / math.sqrt(iteration) * (accepted_rate - policy.target_rate)
    low, high = policy.bounds
    return replace(policy, kappa=min(max(kappa, low), high))


class StudyStats:
    """Per-study sufficient statistics, summed over arbitrary subsets."""

    def __init__(self, target: Dataset, sources: Sequence[Dataset]):
        self.target = target
        self.p = target.p
        self.ids = [d.study_id for d in sources]
        self.n = np.array([d.n for d in sources])
        self.gram = np.array([d.gram for d in sources]).reshape(len(sources), self.p, self.p)
        self.xty = np.array([d.xty for d in sources]).reshape(len(sources), self.p)
        self.yty = np.array([d.yty for d in sources])

    def subset(self, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return 0, np.zeros((self.p, self.p)), np.zeros(self.p), 0.0
        return (
            int(self.n[mask].sum()),
            self.gram[mask].sum(axis=0),
            self.xty[mask].sum(axis=0),
            float(self.yty[mask].sum()),
        )

    def log_marginal(self, gamma: np.ndarray, ctx: MarginalContext) -> float:
        """Total log marginal of all studies under the partition given by ``gamma``."""
        gamma = np.asarray(gamma, dtype=bool)
        t = self.target
        nA, GA, hA, yyA = self.subset(gamma)
        joint = _log_marginal_joint(
            t.n, t.gram, t.xty, t.yty, nA, GA, hA, yyA,
            ctx.shrinkage["informative"], ctx.shrinkage["contrast"], ctx.shared_variance_prior,
        )
        nN, GN, hN, yyN = self.subset(~gamma)
        rest = _log_marginal_single(nN, GN, hN, yyN, ctx.shrinkage["noninformative"], ctx.shared_variance_prior)
        return joint + rest


@dataclass
class SweepResult:
    inclusion: np.ndarray
    probabilities: np.ndarray
    flip_rate: float = 0.0
    log_marginals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def update_inclusion_sweep(
    inclusion: np.ndarray,
    stats: StudyStats,
    ctx: MarginalContext,
    policy: TemperingPolicy,
    rng: Generator,
    prior_probs: Sequence[float] | None = None,
) -> SweepResult:
    """Sequential single-site update of gamma_1..gamma_K.

    For each k both partitions (k informative / k noninformative) are scored
    by the total collapsed marginal plus the log prior odds; gamma_k is drawn
    from the tempered probability.  Empty stacks contribute 0 to the marginal.
    """
    gamma = np.array(inclusion, dtype=np.int8, copy=True)
    K = gamma.size
    probs = np.zeros(K)
    logs = np.zeros((K, 2))
    if K == 0:
        return SweepResult(gamma, probs, 0.0, logs)
    prior = np.full(K, 0.5) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    flips = 0
    cache: dict[bytes, float] = {}

    def score(g):
        key = g.tobytes()
        if key not in cache:
            cache[key] = stats.log_marginal(g, ctx)
        return cache[key]

    for k in range(K):
        old = gamma[k]
        gamma[k] = 1
        log_incl = score(gamma) + math.log(prior[k])
        gamma[k] = 0
        log_excl = score(gamma) + math.log1p(-prior[k])
        prob = inclusion_probability(log_incl, log_excl, policy.kappa)
        if not np.isfinite(prob):
            logger.warning("inclusion probability for study %d degenerate; drawing from prior", k + 1)
            prob = prior[k]
        gamma[k] = int(rng.random() < prob)
        flips += int(gamma[k] != old)
        probs[k] = prob
        logs[k] = (log_incl, log_excl)
    return SweepResult(gamma, probs, flips / K, logs)


def pseudo_size(fraction: float, n: int) -> int:
    """ceil(fraction * n), at least 1."""
    return max(1, math.ceil(round(fraction * n, 9)))


def make_pseudo_data(
    role: Literal["informative", "noninformative"],
    target: Dataset,
    all_sources: Dataset,
    policy: PseudoDataPolicy,
    rng: Generator,
) -> Dataset:
    """Synthetic stand-in for an empty partition.

    informative: a random subset of target rows.  noninformative: a random
    subset of source rows with the outcomes permuted.  Under the zero-impute
    policy the same number of all-zero rows is returned.
    """
    if role == "informative":
        base = target
    elif role == "noninformative":
        base = all_sources
    else:
        raise InputError(f"unknown pseudo-data role {role!r}")
    if base.n == 0:
        raise InputError(f"cannot build {role} pseudo-data from empty data")
    m = pseudo_size(policy.fraction, base.n)
    if policy.mode == "zero_impute":
        return Dataset(np.zeros((m, base.p)), np.zeros(m), -1, "source")
    rows = np.sort(rng.choice(base.n, size=m, replace=False))
    y = base.outcome[rows]
    if role == "noninformative":
        y = rng.permutation(y)
    return Dataset(base.design[rows], y, -1, "source")
