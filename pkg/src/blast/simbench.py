"""Synthetic multi-source regression scenarios and evaluation metrics.

Target coefficients are ``signal_value`` on the first ``s`` coordinates and
zero elsewhere.  Informative source k uses ``beta - informative_bias`` on a
random ``h``-subset of coordinates; noninformative sources use
``beta - noninformative_bias`` on a random ``2s``-subset.  Covariates are iid
standard normal and the noise is Gaussian with sd ``noise_sd``.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from numpy.random import Generator

from .driver import SamplerConfig, run_oracle, run_selection, summarize
from .errors import InputError
from .model import Dataset

METHODS = ("target-only", "oracle", "naive", "selection")


@dataclass(frozen=True)
class ScenarioSpec:
    p: int = 50
    s: int = 3
    n0: int = 60
    nk: int = 60
    K: int = 4
    num_informative: int = 4
    h: int = 2
    signal_value: float = 0.5
    informative_bias: float = 0.3
    noninformative_bias: float = 1.0
    noise_sd: float = 1.0
    replicates: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.p, self.s, self.n0, self.nk, self.K, self.replicates) < 1:
            raise InputError("p, s, n0, nk, K and replicates must be positive")
        if not 0 <= self.num_informative <= self.K:
            raise InputError(f"num_informative must lie in [0, K], got {self.num_informative}")
        if not 0 <= self.h <= self.p:
            raise InputError(f"h must lie in [0, p], got {self.h}")
        if 2 * self.s > self.p:
            raise InputError("need 2s <= p")
        if self.noise_sd <= 0:
            raise InputError("noise_sd must be positive")

    def true_beta(self) -> np.ndarray:
        beta = np.zeros(self.p)
        beta[: self.s] = self.signal_value
        return beta


@dataclass
class Scenario:
    target: Dataset
    sources: list[Dataset]
    beta: np.ndarray
    informative_ids: tuple[int, ...]
    source_coefs: np.ndarray
    holdout: Dataset


def _study(X: np.ndarray, coef: np.ndarray, noise_sd: float, rng: Generator, sid: int, role: str) -> Dataset:
    y = X @ coef + noise_sd * rng.standard_normal(X.shape[0])
    return Dataset(X, y, sid, role)


def generate_scenario(spec: ScenarioSpec, rng: Generator) -> Scenario:
    """Draw one replicate.

    Each study gets its own child stream, so the target data and a given
    source's covariates do not depend on how many sources are informative.
    """
    streams = rng.spawn(spec.K + 1)
    beta = spec.true_beta()
    r0 = streams[0]
    target = _study(r0.standard_normal((spec.n0, spec.p)), beta, spec.noise_sd, r0, 0, "target")
    holdout = _study(r0.standard_normal((spec.n0, spec.p)), beta, spec.noise_sd, r0, 0, "target")
    sources, coefs = [], []
    for k in range(1, spec.K + 1):
        rk = streams[k]
        X = rk.standard_normal((spec.nk, spec.p))
        w = beta.copy()
        if k <= spec.num_informative:
            w[rk.choice(spec.p, size=spec.h, replace=False)] -= spec.informative_bias
        else:
            w[rk.choice(spec.p, size=2 * spec.s, replace=False)] -= spec.noninformative_bias
        coefs.append(w)
        sources.append(_study(X, w, spec.noise_sd, rk, k, "source"))
    return Scenario(target, sources, beta, tuple(range(1, spec.num_informative + 1)), np.array(coefs), holdout)


def sse(beta_hat, beta_true) -> float:
    beta_hat, beta_true = np.asarray(beta_hat, float), np.asarray(beta_true, float)
    if beta_hat.shape != beta_true.shape:
        raise InputError("sse: length mismatch")
    return float(np.sum((beta_hat - beta_true) ** 2))


def mspe(y_hat, y) -> float:
    """Mean squared prediction error over the holdout rows."""
    y_hat, y = np.asarray(y_hat, float), np.asarray(y, float)
    if y_hat.shape != y.shape:
        raise InputError("mspe: length mismatch")
    if y.size == 0:
        raise InputError("mspe: empty vectors")
    return float(np.mean((y_hat - y) ** 2))


def relative_prediction_error(mspe_method: float, mspe_baseline: float) -> float:
    """Ratio of a method's prediction error to the baseline's."""
    if mspe_baseline <= 0:
        raise InputError("baseline error must be positive")
    return mspe_method / mspe_baseline


def interval_metrics(intervals, beta_true, signal_mask) -> tuple[float, float, float, float]:
    """(avg width signal, avg width noise, coverage signal, coverage noise); closed intervals.

    A stratum with no coordinates reports NaN.
    """
    iv = np.asarray(intervals, float)
    beta_true = np.asarray(beta_true, float)
    mask = np.asarray(signal_mask, bool)
    if iv.shape != (beta_true.size, 2) or mask.shape != beta_true.shape:
        raise InputError("interval_metrics: inconsistent lengths")
    if np.any(iv[:, 0] > iv[:, 1]):
        raise InputError("interval_metrics: lower bound above upper bound")
    width = iv[:, 1] - iv[:, 0]
    covered = (iv[:, 0] <= beta_true) & (beta_true <= iv[:, 1])

    def avg(x, m):
        return float(x[m].mean()) if m.any() else math.nan

    return avg(width, mask), avg(width, ~mask), avg(covered, mask), avg(covered, ~mask)


@dataclass
class MetricsRow:
    method: str
    num_informative: int
    h: int
    sse: float
    mspe: float
    avg_width_signal: float
    avg_width_noise: float
    coverage_signal: float
    coverage_noise: float
    inclusion_probs: list = field(default_factory=list)
    sse_se: float = 0.0
    mspe_se: float = 0.0
    replicates: int = 1


def replicate_seed(seed: int, replicate: int) -> int:
    """Seed of one replicate, derived from the scenario seed."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(replicate),)).generate_state(2, np.uint64)[0])


def _fit(method: str, sc: Scenario, base: SamplerConfig, seed: int):
    cfg = replace(base, seed=seed)
    if method == "target-only":
        return summarize(run_oracle(sc.target, [], replace(cfg, oracle_informative_ids=())))
    if method == "oracle":
        return summarize(run_oracle(sc.target, sc.sources, replace(cfg, oracle_informative_ids=sc.informative_ids)))
    if method == "naive":
        ids = tuple(d.study_id for d in sc.sources)
        return summarize(run_oracle(sc.target, sc.sources, replace(cfg, oracle_informative_ids=ids)))
    if method == "selection":
        return summarize(run_selection(sc.target, sc.sources, cfg))
    raise InputError(f"unknown method {method!r}")


def _metrics(method, spec, sc, summ) -> dict:
    mask = np.zeros(spec.p, bool)
    mask[: spec.s] = True
    ws, wn, cs, cn = interval_metrics(summ.intervals, sc.beta, mask)
    return {
        "sse": sse(summ.beta_mean, sc.beta),
        "mspe": mspe(sc.holdout.design @ summ.beta_mean, sc.holdout.outcome),
        "avg_width_signal": ws,
        "avg_width_noise": wn,
        "coverage_signal": cs,
        "coverage_noise": cn,
        "inclusion_probs": (
            summ.inclusion_probs.tolist() if summ.inclusion_probs is not None else [math.nan] * spec.K
        ),
    }


def _aggregate(method, spec, reps: list[dict]) -> MetricsRow:
    def mean_se(key):
        x = np.array([r[key] for r in reps], float)
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        return float(x.mean()), se

    sse_m, sse_se = mean_se("sse")
    mspe_m, mspe_se = mean_se("mspe")
    return MetricsRow(
        method=method,
        num_informative=spec.num_informative,
        h=spec.h,
        sse=sse_m,
        mspe=mspe_m,
        avg_width_signal=mean_se("avg_width_signal")[0],
        avg_width_noise=mean_se("avg_width_noise")[0],
        coverage_signal=mean_se("coverage_signal")[0],
        coverage_noise=mean_se("coverage_noise")[0],
        inclusion_probs=np.mean([r["inclusion_probs"] for r in reps], axis=0).tolist(),
        sse_se=sse_se,
        mspe_se=mspe_se,
        replicates=len(reps),
    )


def run_benchmark(
    spec: ScenarioSpec,
    methods: Sequence[str],
    sampler: SamplerConfig | None = None,
    cache: dict | None = None,
) -> list[MetricsRow]:
    """Replicate-averaged metrics for each method on one scenario.

    ``cache`` (optional, shared across calls) memoizes target-only fits,
    which do not depend on the source configuration.
    """
    if not methods:
        raise InputError("at least one method is required")
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}")
    sampler = sampler or SamplerConfig(iterations=1500, burn_in=500)
    per_method: dict[str, list] = {m: [] for m in methods}
    for r in range(spec.replicates):
        seed = replicate_seed(spec.seed, r)
        sc = generate_scenario(spec, np.random.default_rng(seed))
        for m in methods:
            key = None
            if m == "target-only" and cache is not None:
                key = (r, spec.seed, spec.p, spec.s, spec.n0, spec.signal_value, spec.noise_sd, repr(sampler))
            if key is not None and key in cache:
                per_method[m].append(cache[key])
                continue
            row = _metrics(m, spec, sc, _fit(m, sc, sampler, seed))
            if key is not None:
                cache[key] = row
            per_method[m].append(row)
    return [_aggregate(m, spec, per_method[m]) for m in methods]


def expand_grid(base: dict) -> list[ScenarioSpec]:
    """Expand list-valued ``h`` / ``num_informative`` entries into one spec per combination."""
    hs = base.get("h", ScenarioSpec.h)
    nis = base.get("num_informative", ScenarioSpec.num_informative)
    hs = hs if isinstance(hs, list) else [hs]
    nis = nis if isinstance(nis, list) else [nis]
    unknown = set(base) - set(ScenarioSpec.__dataclass_fields__)
    if unknown:
        raise InputError(f"unknown scenario keys: {sorted(unknown)}")
    fixed = {k: v for k, v in base.items() if k not in ("h", "num_informative")}
    return [ScenarioSpec(h=h, num_informative=a, **fixed) for h, a in itertools.product(hs, nis)]


def run_grid(
    specs: Iterable[ScenarioSpec], methods: Sequence[str], sampler: SamplerConfig | None = None
) -> list[MetricsRow]:
    cache: dict = {}
    rows = []
    for spec in specs:
        rows.extend(run_benchmark(spec, methods, sampler, cache))
    return rows


TABLE_COLUMNS = (
    "method", "num_informative", "h", "replicates", "sse", "sse_se", "mspe", "mspe_se",
    "avg_width_signal", "avg_width_noise", "coverage_signal", "coverage_noise",
)


def write_table(rows: Sequence[MetricsRow], path, K: int):
    """CSV with one row per method x scenario; inclusion probabilities as incl_1..incl_K."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(TABLE_COLUMNS) + [f"incl_{k}" for k in range(1, K + 1)])
        for row in rows:
            d = asdict(row)
            w.writerow([_fmt(d[c]) for c in TABLE_COLUMNS] + [_fmt(v) for v in row.inclusion_probs])


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def scenario_to_json(spec: ScenarioSpec) -> str:
    return json.dumps(asdict(spec), sort_keys=True)
