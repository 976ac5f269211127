"""Independent reference computations used by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp


def _mc_mean_log(log_terms: list[np.ndarray]) -> float:
    ll = np.concatenate(log_terms)
    return float(logsumexp(ll) - math.log(ll.size))


def mc_log_marginal_noninformative(X, y, d, n_samples, rng, prior=(0.5, 0.5), chunk=1_000_000) -> float:
    """log of E[N(y; Xw, s2 I)] over prior draws s2 ~ IG(a, b), w ~ N(0, s2 diag(d))."""
    a, b = prior
    X, y, d = np.atleast_2d(X), np.asarray(y, float), np.asarray(d, float)
    out = []
    for _ in range(n_samples // chunk):
        s2 = b / rng.standard_gamma(a, chunk)
        w = rng.standard_normal((chunk, d.size)) * np.sqrt(s2[:, None] * d)
        r = y[None, :] - w @ X.T
        out.append(-0.5 * (r * r).sum(axis=1) / s2 - 0.5 * y.size * np.log(2 * np.pi * s2))
    return _mc_mean_log(out)


def mc_log_marginal_joint(X0, y0, XA, yA, dA, d0, n_samples, rng, prior=(0.5, 0.5), chunk=1_000_000) -> float:
    """log of E[N(y0; X0(w+delta), s2) N(yA; XA w, s2)] over prior draws of (w, delta, s2)."""
    a, b = prior
    p = len(dA)
    out = []
    for _ in range(n_samples // chunk):
        s2 = b / rng.standard_gamma(a, chunk)
        w = rng.standard_normal((chunk, p)) * np.sqrt(s2[:, None] * np.asarray(dA))
        delta = rng.standard_normal((chunk, p)) * np.sqrt(s2[:, None] * np.asarray(d0))
        r0 = y0[None, :] - (w + delta) @ X0.T
        ll = -0.5 * (r0 * r0).sum(axis=1) / s2 - 0.5 * y0.size * np.log(2 * np.pi * s2)
        if len(yA):
            rA = yA[None, :] - w @ XA.T
            ll += -0.5 * (rA * rA).sum(axis=1) / s2 - 0.5 * yA.size * np.log(2 * np.pi * s2)
        out.append(ll)
    return _mc_mean_log(out)


def dense_log_marginal(ys, Zs, prior_scales, prior=(0.5, 0.5)) -> float:
    """Exact multivariate-t marginal by dense determinant and solve."""
    a, b = prior
    y = np.concatenate(ys)
    Z = np.vstack(Zs)
    n = y.size
    S = np.eye(n) + Z @ np.diag(prior_scales) @ Z.T
    _, logdet = np.linalg.slogdet(S)
    q = y @ np.linalg.solve(S, y)
    return (
        -0.5 * n * math.log(2 * math.pi) - 0.5 * logdet + a * math.log(b) - math.lgamma(a)
        + math.lgamma(a + n / 2) - (a + n / 2) * math.log(b + q / 2)
    )


def enumerate_tempered(log_score, K: int, kappa: float, prior=0.5) -> dict:
    """Exact tempered law over {0,1}^K: prop. to exp(kappa (log_score(g) + log prior(g)))."""
    configs = list(itertools.product((0, 1), repeat=K))
    logs = []
    for g in configs:
        lp = sum(math.log(prior) if gi else math.log1p(-prior) for gi in g)
        logs.append(kappa * (log_score(np.array(g, dtype=np.int8)) + lp))
    logs = np.array(logs)
    probs = np.exp(logs - logsumexp(logs))
    return dict(zip(configs, probs))
