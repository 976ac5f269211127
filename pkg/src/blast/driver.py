"""Gibbs samplers for the known-informative-set model and the source-selection model.

Both samplers share one per-iteration engine (:class:`GibbsSampler`).  The
update order is: coefficient blocks, error variances, horseshoe sweeps, the
composed target coefficient, then (selection mode) the inclusion sweep and
optional tempering adaptation.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.random import Generator

from .errors import InputError
from .horseshoe import (
    EmpiricalBayesTrace,
    HorseshoeBlockState,
    empirical_bayes_psi,
    horseshoe_sweep,
)
from .kernels import draw_inverse_gamma, rng_stream
from .model import (
    BlockShrinkage,
    Dataset,
    ModelState,
    compose_beta,
    draw_contrast,
    draw_variance,
    draw_w_informative,
    draw_w_noninformative,
    stack_studies,
)
from .selection import (
    MarginalContext,
    PseudoDataPolicy,
    StudyStats,
    TemperingPolicy,
    adapt_kappa,
    make_pseudo_data,
    update_inclusion_sweep,
)

logger = logging.getLogger(__name__)

DEFAULT_PRIORS = {"target": (0.5, 0.5), "informative": (0.5, 0.5), "noninformative": (0.5, 0.5)}
VARIANCE_COLUMNS = ("target", "informative", "noninformative")


@dataclass
class SamplerConfig:
    """Run settings.  ``tempering=None`` means fixed kappa with the default clamp [1/p^2, 10]."""

    iterations: int = 3000
    burn_in: int = 1000
    mode: str = "oracle"
    oracle_informative_ids: tuple[int, ...] = ()
    tempering: TemperingPolicy | None = None
    pseudo_data: PseudoDataPolicy = field(default_factory=PseudoDataPolicy)
    enforce_contrast_sparsity: bool = False
    empirical_bayes: bool = False
    eb_warmup: int = 1000
    priors: dict = field(default_factory=lambda: dict(DEFAULT_PRIORS))
    shared_variance_prior: tuple[float, float] = (0.5, 0.5)
    psi: float = 1.0
    step_size: float = 0.8
    seed: int = 0
    chains: int = 1
    thin: int = 1
    gaussian_method: str = "auto"

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise InputError(f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in}")
        if self.mode not in ("oracle", "selection"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.chains < 1 or self.thin < 1 or self.eb_warmup < 2:
            raise InputError("chains and thin must be >= 1, eb_warmup >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if self.psi <= 0 or self.step_size <= 0:
            raise InputError("psi and step_size must be positive")
        self.oracle_informative_ids = tuple(sorted(int(k) for k in self.oracle_informative_ids))
        priors = dict(DEFAULT_PRIORS)
        priors.update({k: tuple(v) for k, v in self.priors.items()})
        for name, (a, b) in priors.items():
            if name not in DEFAULT_PRIORS:
                raise InputError(f"unknown variance prior block {name!r}")
            if a <= 0 or b <= 0:
                raise InputError(f"{name} variance prior must be positive")
        self.priors = priors
        self.shared_variance_prior = tuple(self.shared_variance_prior)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["oracle_informative_ids"] = list(self.oracle_informative_ids)
        d["priors"] = {k: list(v) for k, v in self.priors.items()}
        d["shared_variance_prior"] = list(self.shared_variance_prior)
        if self.tempering is not None:
            d["tempering"]["bounds"] = list(self.tempering.bounds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        try:
            if isinstance(data.get("tempering"), dict):
                t = dict(data["tempering"])
                if "bounds" in t:
                    t["bounds"] = tuple(t["bounds"])
                data["tempering"] = TemperingPolicy(**t)
            if isinstance(data.get("pseudo_data"), dict):
                data["pseudo_data"] = PseudoDataPolicy(**data["pseudo_data"])
            return cls(**data)
        except TypeError as exc:
            raise InputError(f"invalid sampler config: {exc}") from exc


@dataclass
class PosteriorDraws:
    """Stored sample paths of one chain.

    ``global_shrink`` holds the global precision xi = 1/tau^2 per block
    (columns named by ``block_labels``).  The first ``burn_in`` rows are
    burn-in; the rest are retained.
    """

    beta: np.ndarray
    variances: np.ndarray
    burn_in: int = 0
    gamma: np.ndarray | None = None
    global_shrink: np.ndarray | None = None
    kappa: np.ndarray | None = None
    block_labels: tuple[str, ...] = ()
    chain: int = 0
    psi: dict = field(default_factory=dict)

    def __post_init__(self):
        T = self.beta.shape[0]
        for name in ("variances", "gamma", "global_shrink", "kappa"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != T:
                raise InputError(f"{name} has {arr.shape[0]} rows, beta has {T}")
        if not 0 <= self.burn_in <= T:
            raise InputError("burn_in outside stored range")

    @property
    def n_rows(self) -> int:
        return self.beta.shape[0]

    def retained(self, name: str) -> np.ndarray | None:
        arr = getattr(self, name)
        return None if arr is None else arr[self.burn_in:]


@dataclass
class PosteriorSummary:
    beta_mean: np.ndarray
    intervals: np.ndarray
    level: float
    n_draws: int
    inclusion_probs: np.ndarray | None = None
    variance_mean: np.ndarray | None = None
    ess: dict = field(default_factory=dict)
    rhat: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "level": self.level,
            "n_draws": self.n_draws,
            "beta_mean": self.beta_mean.tolist(),
            "intervals": self.intervals.tolist(),
        }
        if self.inclusion_probs is not None:
            out["inclusion_probs"] = self.inclusion_probs.tolist()
        if self.variance_mean is not None:
            out["variance_mean"] = self.variance_mean.tolist()
        out["diagnostics"] = {
            "ess": {k: np.asarray(v).tolist() for k, v in self.ess.items()},
            "rhat": None if self.rhat is None else {k: np.asarray(v).tolist() for k, v in self.rhat.items()},
        }
        return out


class GibbsSampler:
    """One chain of the oracle or selection sampler, advanced by :meth:`step`.

    ``target`` may be replaced between steps (used by successive-conditional
    calibration tests).  ``psi`` maps block label to the global scale.
    """

    def __init__(
        self,
        target: Dataset,
        sources: Sequence[Dataset],
        config: SamplerConfig,
        rng: Generator,
        psi: dict | None = None,
    ):
        _validate_problem(target, sources)
        self.target = target
        self.sources = list(sources)
        self.config = config
        self.rng = rng
        self.p = target.p
        self.K = len(self.sources)
        self.selection = config.mode == "selection"
        if self.selection and self.K < 1:
            raise InputError("selection mode needs at least one source study")
        ids = {d.study_id for d in self.sources}
        if not self.selection:
            missing = set(config.oracle_informative_ids) - ids
            if missing:
                raise InputError(f"oracle informative ids {sorted(missing)} not among source ids")
        self.blocks = ("informative", "contrast", "noninformative") if self.selection else ("informative", "contrast")
        psi = psi or {}
        self.hs = {
            b: HorseshoeBlockState.initial(self.p, psi.get(b, config.psi), config.step_size) for b in self.blocks
        }
        self.state = ModelState.initial(self.p, self.K if self.selection else 0)
        self.tempering = config.tempering or TemperingPolicy.for_dimension(self.p)
        self.iteration = 0
        self.last_probs = np.zeros(self.K)
        if self.selection:
            self.stats = StudyStats(target, self.sources)
            self.all_sources = stack_studies(self.sources, ids, self.p)
            self.total_rows = target.n + self.all_sources.n
        else:
            self.stack_inf = stack_studies(self.sources, config.oracle_informative_ids, self.p)

    def _sync(self):
        for b in self.blocks:
            self.state.shrinkage[b] = BlockShrinkage(self.hs[b].local_scales(), b)

    def _prior_draw_block(self) -> tuple[np.ndarray, float]:
        # empty block: nu fixed at 1/p^2 and an inflated variance prior IG(sqrt N, sqrt N + 1)
        root = math.sqrt(self.total_rows)
        var = float(draw_inverse_gamma(root, root + 1.0, self.rng))
        return math.sqrt(var) / self.p * self.rng.standard_normal(self.p), var

    def _stacks(self):
        gamma = self.state.inclusion.astype(bool)
        ids = np.array([d.study_id for d in self.sources])
        pol = self.config.pseudo_data
        stacks = {}
        for role, chosen in (("informative", ids[gamma]), ("noninformative", ids[~gamma])):
            if chosen.size:
                stacks[role] = stack_studies(self.sources, chosen, self.p)
            elif pol.mode == "prior_draw":
                stacks[role] = None
            else:
                stacks[role] = make_pseudo_data(role, self.target, self.all_sources, pol, self.rng)
        return stacks

    def step(self):
        """One full Gibbs iteration."""
        self.iteration += 1
        it = self.iteration
        cfg, st, rng, method = self.config, self.state, self.rng, self.config.gaussian_method
        adapt = it if it <= cfg.burn_in else None
        if self.selection:
            stacks = self._stacks()
            stack_inf, stack_non = stacks["informative"], stacks["noninformative"]
        else:
            stack_inf, stack_non = self.stack_inf, None

        skip = set()
        if stack_inf is None:
            st.w_informative, st.var_informative = self._prior_draw_block()
            skip.add("informative")
        else:
            st.w_informative = draw_w_informative(st, self.target, stack_inf, rng, method)
        st.contrast = draw_contrast(st, self.target, rng, method)
        if self.selection:
            if stack_non is None:
                st.w_noninformative, st.var_noninformative = self._prior_draw_block()
                skip.add("noninformative")
            else:
                st.w_noninformative = draw_w_noninformative(st, stack_non, rng, method)

        st.var_target = draw_variance("target", st, self.target, rng, cfg.priors["target"])
        if "informative" not in skip:
            st.var_informative = draw_variance("informative", st, stack_inf, rng, cfg.priors["informative"])
        if self.selection and "noninformative" not in skip:
            st.var_noninformative = draw_variance("noninformative", st, stack_non, rng, cfg.priors["noninformative"])

        enforce = cfg.enforce_contrast_sparsity
        coefs = {
            "informative": (st.w_informative, st.var_informative),
            "contrast": (st.contrast, st.var_target),
            "noninformative": (st.w_noninformative, st.var_noninformative),
        }
        for b in self.blocks:
            if b in skip:
                continue
            lower = upper = None
            if enforce and b == "informative":
                upper = self.hs["contrast"].xi
            if enforce and b == "contrast":
                lower = self.hs["informative"].xi
            coef, var = coefs[b]
            self.hs[b], _ = horseshoe_sweep(
                self.hs[b], coef, var, rng, lower_bound=lower, upper_bound=upper, adapt_iteration=adapt
            )
        self._sync()
        self.beta = compose_beta(st)

        if self.selection:
            ctx = MarginalContext({b: st.shrinkage[b] for b in self.blocks}, cfg.shared_variance_prior)
            res = update_inclusion_sweep(st.inclusion, self.stats, ctx, self.tempering, rng)
            st.inclusion = res.inclusion
            self.last_probs = res.probabilities
            if self.tempering.mode == "adaptive":
                self.tempering = adapt_kappa(self.tempering, res.flip_rate, it)
        return self

    def global_precisions(self) -> np.ndarray:
        return np.array([self.hs[b].xi for b in self.blocks])


def _validate_problem(target: Dataset, sources: Sequence[Dataset]):
    if target.n == 0:
        raise InputError("target study has no rows")
    seen = set()
    for d in sources:
        if d.p != target.p:
            raise InputError(f"study {d.study_id} has p={d.p}, target has p={target.p}")
        if d.study_id < 1 or d.study_id in seen:
            raise InputError(f"source study ids must be distinct positive integers, got {d.study_id}")
        seen.add(d.study_id)


def _psi_sample_sizes(target: Dataset, sources: Sequence[Dataset], config: SamplerConfig) -> dict:
    n0 = target.n
    if config.mode == "selection":
        return {"informative": n0, "contrast": n0, "noninformative": n0}
    n_inf = sum(d.n for d in sources if d.study_id in config.oracle_informative_ids)
    return {"informative": n_inf or n0, "contrast": n0}


def estimate_psi(target: Dataset, sources: Sequence[Dataset], config: SamplerConfig, rng: Generator) -> dict:
    """Empirical-Bayes pre-phase: warm-up run, then psi_hat per block from the tau^2 trace.

    The first half of the warm-up is discarded; the second half supplies the trace.
    """
    warm_cfg = replace(config, iterations=config.eb_warmup, burn_in=config.eb_warmup // 2)
    sampler = GibbsSampler(target, sources, warm_cfg, rng)
    keep = config.eb_warmup - config.eb_warmup // 2
    traces = {b: np.empty(keep) for b in sampler.blocks}
    for t in range(config.eb_warmup):
        sampler.step()
        if t >= config.eb_warmup // 2:
            for b in sampler.blocks:
                traces[b][t - config.eb_warmup // 2] = sampler.hs[b].tau2
    sizes = _psi_sample_sizes(target, sources, config)
    return {b: empirical_bayes_psi(EmpiricalBayesTrace(traces[b], sizes[b])) for b in sampler.blocks}


def _run(target, sources, config: SamplerConfig, chain: int) -> PosteriorDraws:
    rng = rng_stream(config.seed, chain)
    psi = estimate_psi(target, sources, config, rng) if config.empirical_bayes else None
    sampler = GibbsSampler(target, sources, config, rng, psi)
    T, thin = config.iterations, config.thin
    rows = T // thin
    p, K = sampler.p, sampler.K
    beta = np.empty((rows, p))
    variances = np.full((rows, 3), np.nan)
    shrink = np.empty((rows, len(sampler.blocks)))
    gamma = np.empty((rows, K), dtype=np.int8) if sampler.selection else None
    kappa = np.empty(rows) if sampler.selection else None
    r = 0
    for t in range(1, T + 1):
        sampler.step()
        if t % thin:
            continue
        st = sampler.state
        beta[r] = sampler.beta
        variances[r, 0] = st.var_target
        variances[r, 1] = st.var_informative
        if sampler.selection:
            variances[r, 2] = st.var_noninformative
            gamma[r] = st.inclusion
            kappa[r] = sampler.tempering.kappa
        shrink[r] = sampler.global_precisions()
        r += 1
    return PosteriorDraws(
        beta=beta,
        variances=variances,
        burn_in=config.burn_in // thin,
        gamma=gamma,
        global_shrink=shrink,
        kappa=kappa,
        block_labels=sampler.blocks,
        chain=chain,
        psi={b: sampler.hs[b].psi for b in sampler.blocks},
    )


def run_oracle(target: Dataset, sources: Sequence[Dataset], config: SamplerConfig, chain: int = 0) -> PosteriorDraws:
    """Known-informative-set sampler; ``config.oracle_informative_ids`` may be empty (target only)."""
    if config.mode != "oracle":
        config = replace(config, mode="oracle")
    return _run(target, sources, config, chain)


def run_selection(target: Dataset, sources: Sequence[Dataset], config: SamplerConfig, chain: int = 0) -> PosteriorDraws:
    """Sampler with the informative set selected by the tempered inclusion sweep."""
    if config.mode != "selection":
        config = replace(config, mode="selection")
    return _run(target, sources, config, chain)


def _run_chain(args):
    target, sources, config, chain = args
    return _run(target, sources, config, chain)


def run_chains(
    target: Dataset, sources: Sequence[Dataset], config: SamplerConfig, threads: int = 1
) -> list[PosteriorDraws]:
    """Run ``config.chains`` independent chains (stream ids 0..chains-1)."""
    jobs = [(target, list(sources), config, c) for c in range(config.chains)]
    if threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, config.chains)) as pool:
            return list(pool.map(_run_chain, jobs))
    return [_run_chain(j) for j in jobs]


def effective_sample_size(chains: np.ndarray) -> float:
    """ESS by Geyer's initial positive sequence on the chain-averaged autocorrelation.

    ``chains`` is (n,) or (m, n).  Constant input returns m * n.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        return float(m * n)
    xc = x - x.mean(axis=1, keepdims=True)
    var = (xc * xc).mean(axis=1)
    if np.all(var == 0):
        return float(m * n)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n
    rho = acov.mean(axis=0) / var.mean()
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(m * n / max(tau, 1e-12))


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor for an (m, n) array, m >= 2."""
    x = np.asarray(chains, dtype=float)
    half = x.shape[1] // 2
    if half < 2:
        return math.nan
    parts = np.vstack([x[:, :half], x[:, x.shape[1] - half:]])
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = half * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    return float(math.sqrt(((half - 1) / half * W + B / half) / W))


def _column_means(x: np.ndarray) -> np.ndarray:
    """Column means; columns that are entirely NaN (blocks absent in oracle mode) stay NaN."""
    present = np.isfinite(x).any(axis=0)
    out = np.full(x.shape[1], np.nan)
    out[present] = x[:, present].mean(axis=0)
    return out


def summarize(draws, level: float = 0.95) -> PosteriorSummary:
    """Pool retained draws of one or more chains.

    Intervals are equal-tailed with numpy's default linear quantile rule
    (Hyndman-Fan type 7): for draws 1..100 at level 0.95 the interval is
    (3.475, 97.525).
    """
    if not 0 < level < 1:
        raise InputError(f"level must be in (0, 1), got {level}")
    chains = [draws] if isinstance(draws, PosteriorDraws) else list(draws)
    if not chains:
        raise InputError("no draws to summarize")
    beta = [c.retained("beta") for c in chains]
    pooled = np.vstack(beta)
    if pooled.shape[0] < 2:
        raise InputError("need >= 2 retained draws")
    alpha = 0.5 * (1.0 - level)
    intervals = np.quantile(pooled, [alpha, 1.0 - alpha], axis=0).T
    mean = pooled.mean(axis=0)
    outside = (mean < intervals[:, 0]) | (mean > intervals[:, 1])
    if outside.any():
        logger.warning("posterior mean outside the credible interval for coordinates %s", np.flatnonzero(outside) + 1)
    incl = None
    if chains[0].gamma is not None:
        incl = np.vstack([c.retained("gamma") for c in chains]).mean(axis=0)
    var = np.vstack([c.retained("variances") for c in chains])
    n_min = min(b.shape[0] for b in beta)
    stack = np.stack([b[:n_min] for b in beta])  # (m, n, p)
    var_t = np.stack([c.retained("variances")[:n_min, 0] for c in chains])
    ess = {
        "beta": np.array([effective_sample_size(stack[:, :, j]) for j in range(stack.shape[2])]),
        "sigma2_target": effective_sample_size(var_t),
    }
    rhat = None
    if len(chains) >= 2:
        rhat = {
            "beta": np.array([split_rhat(stack[:, :, j]) for j in range(stack.shape[2])]),
            "sigma2_target": split_rhat(var_t),
        }
    return PosteriorSummary(
        beta_mean=mean,
        intervals=intervals,
        level=level,
        n_draws=pooled.shape[0],
        inclusion_probs=incl,
        variance_mean=_column_means(var),
        ess=ess,
        rhat=rhat,
    )
