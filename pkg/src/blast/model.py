"""Domain types and closed-form full conditionals of the transfer regression model.

Model (informative set ``A`` either known or selected by ``gamma``)::

    y_A    ~ N(X_A w,           s2_A I),   w     ~ N(0, s2_A diag(nu_w))
    y_0    ~ N(X_0 (w + delta), s2_0 I),   delta ~ N(0, s2_0 diag(nu_delta))
    y_Abar ~ N(X_Abar w_bar,    s2_Abar I), w_bar ~ N(0, s2_Abar diag(nu_bar))

The target coefficient is ``beta = w + delta``.  Each conditional below is
shared between the known-set and selected-set samplers: callers pass the
appropriate stacked datasets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from numpy.random import Generator

from .errors import InputError
from .kernels import (
    GaussianSpec,
    draw_inverse_gamma,
    fast_gaussian_draw,
    precision_gaussian_draw,
)

Role = Literal["target", "source"]
BlockLabel = Literal["informative", "contrast", "noninformative"]
BLOCKS: tuple[BlockLabel, ...] = ("informative", "contrast", "noninformative")
VARIANCE_BLOCKS = ("target", "informative", "noninformative")


@dataclass(eq=False)
class Dataset:
    """One study: design matrix (n x p), outcome (n,), study id (0 = target) and role."""

    design: np.ndarray
    outcome: np.ndarray
    study_id: int = 0
    role: Role = "target"
    _stats: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        if self.design.ndim != 2:
            raise InputError(f"design must be 2-D, got shape {self.design.shape}")
        self.outcome = np.asarray(self.outcome, dtype=float).reshape(-1)
        if self.design.shape[0] != self.outcome.size:
            raise InputError(
                f"study {self.study_id}: design has {self.design.shape[0]} rows "
                f"but outcome has {self.outcome.size} entries"
            )
        if self.design.shape[1] < 1:
            raise InputError("p = 0 designs are not supported")
        if self.role not in ("target", "source"):
            raise InputError(f"unknown role {self.role!r}")
        if not (np.all(np.isfinite(self.design)) and np.all(np.isfinite(self.outcome))):
            raise InputError(f"study {self.study_id}: non-finite values in data")

    @classmethod
    def empty(cls, p: int, study_id: int = -1, role: Role = "source") -> "Dataset":
        return cls(np.zeros((0, p)), np.zeros(0), study_id, role)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def _sufficient(self):
        if self._stats is None:
            X, y = self.design, self.outcome
            self._stats = (X.T @ X, X.T @ y, float(y @ y))
        return self._stats

    @property
    def gram(self) -> np.ndarray:
        """X'X."""
        return self._sufficient()[0]

    @property
    def xty(self) -> np.ndarray:
        """X'y."""
        return self._sufficient()[1]

    @property
    def yty(self) -> float:
        return self._sufficient()[2]

    def rss(self, coef: np.ndarray) -> float:
        """||y - X coef||^2."""
        if self.n == 0:
            return 0.0
        r = self.outcome - self.design @ coef
        return float(r @ r)


@dataclass
class BlockShrinkage:
    """Local prior variance multipliers (the diagonal of D) for one coefficient block."""

    local_scales: np.ndarray
    label: BlockLabel

    def __post_init__(self):
        self.local_scales = np.asarray(self.local_scales, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.local_scales)) or np.any(self.local_scales <= 0):
            raise InputError(f"{self.label}: local scales must be positive and finite")


@dataclass
class ModelState:
    w_informative: np.ndarray
    contrast: np.ndarray
    w_noninformative: np.ndarray
    var_target: float
    var_informative: float
    var_noninformative: float
    inclusion: np.ndarray
    shrinkage: dict[str, BlockShrinkage]

    @classmethod
    def initial(cls, p: int, K: int, inclusion: Iterable[int] | None = None) -> "ModelState":
        """Zero coefficients, unit variances, unit local scales, all sources included."""
        gamma = np.ones(K, dtype=np.int8) if inclusion is None else np.asarray(list(inclusion), dtype=np.int8)
        return cls(
            w_informative=np.zeros(p),
            contrast=np.zeros(p),
            w_noninformative=np.zeros(p),
            var_target=1.0,
            var_informative=1.0,
            var_noninformative=1.0,
            inclusion=gamma,
            shrinkage={b: BlockShrinkage(np.ones(p), b) for b in BLOCKS},
        )

    @property
    def p(self) -> int:
        return self.w_informative.size

    def validate(self):
        for name in ("var_target", "var_informative", "var_noninformative"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InputError(f"{name} must be positive and finite, got {v}")
        for vec in (self.w_informative, self.contrast, self.w_noninformative):
            if not np.all(np.isfinite(vec)):
                raise InputError("non-finite coefficients in model state")
        if not np.all(np.isin(self.inclusion, (0, 1))):
            raise InputError("inclusion entries must be 0 or 1")


@dataclass(frozen=True)
class Partition:
    """Split of source ids 1..K into informative and noninformative sets."""

    informative_ids: frozenset
    noninformative_ids: frozenset

    def __post_init__(self):
        if self.informative_ids & self.noninformative_ids:
            raise InputError("informative and noninformative sets overlap")

    @classmethod
    def from_inclusion(cls, gamma: Sequence[int]) -> "Partition":
        ids = range(1, len(gamma) + 1)
        return cls(
            frozenset(k for k, g in zip(ids, gamma) if g),
            frozenset(k for k, g in zip(ids, gamma) if not g),
        )


def stack_studies(datasets: Sequence[Dataset], ids: Iterable[int], p: int | None = None) -> Dataset:
    """Row-concatenate the studies whose ids are in ``ids``, in ascending id order.

    Sufficient statistics of the stack are summed from the members, so
    repeated stacking of the same studies is cheap.
    """
    ids = sorted(set(ids))
    by_id = {d.study_id: d for d in datasets}
    if p is None:
        if not datasets:
            raise InputError("cannot infer p from an empty dataset list")
        p = datasets[0].p
    for d in datasets:
        if d.p != p:
            raise InputError(f"study {d.study_id} has p={d.p}, expected {p}")
    missing = [k for k in ids if k not in by_id]
    if missing:
        raise InputError(f"unknown study ids {missing}")
    if not ids:
        return Dataset.empty(p)
    if len(ids) == 1:
        return by_id[ids[0]]
    members = [by_id[k] for k in ids]
    out = Dataset(
        np.vstack([m.design for m in members]),
        np.concatenate([m.outcome for m in members]),
        study_id=-1,
        role="source",
    )
    out._stats = (
        sum(m.gram for m in members),
        sum(m.xty for m in members),
        float(sum(m.yty for m in members)),
    )
    return out


def _use_fast(n_rows: int, p: int, method: str) -> bool:
    if method == "fast":
        return True
    if method == "direct":
        return False
    if method != "auto":
        raise InputError(f"unknown Gaussian kernel {method!r}")
    return 0 < n_rows < p


def draw_w_informative(
    state: ModelState,
    target: Dataset,
    stacked_inf: Dataset,
    rng: Generator,
    method: str = "auto",
) -> np.ndarray:
    """Draw w | rest ~ N(mu_w, Lambda_w^{-1}).

    ``Lambda_w = (X_A'X_A + D_A^{-1}) / s2_A + X_0'X_0 / s2_0``.  The two
    data blocks are whitened by their own noise scales so a single unit-noise
    Gaussian system with prior covariance ``s2_A D_A`` represents both.
    """
    state.validate()
    s2a, s20 = state.var_informative, state.var_target
    prior = s2a * state.shrinkage["informative"].local_scales
    n_rows = stacked_inf.n + target.n
    if _use_fast(n_rows, state.p, method):
        sa, s0 = np.sqrt(s2a), np.sqrt(s20)
        X = np.vstack([stacked_inf.design / sa, target.design / s0])
        y = np.concatenate([
            stacked_inf.outcome / sa,
            (target.outcome - target.design @ state.contrast) / s0,
        ])
        return fast_gaussian_draw(GaussianSpec(X, prior, y, 1.0), rng)
    gram = stacked_inf.gram / s2a + target.gram / s20
    rhs = stacked_inf.xty / s2a + (target.xty - target.gram @ state.contrast) / s20
    return precision_gaussian_draw(gram, rhs, prior, 1.0, rng)


def draw_contrast(state: ModelState, target: Dataset, rng: Generator, method: str = "auto") -> np.ndarray:
    """Draw delta | rest with the target residual y_0 - X_0 w as working response."""
    state.validate()
    d = state.shrinkage["contrast"].local_scales
    sigma = np.sqrt(state.var_target)
    if _use_fast(target.n, state.p, method):
        y = target.outcome - target.design @ state.w_informative
        return fast_gaussian_draw(GaussianSpec(target.design, d, y, sigma), rng)
    rhs = target.xty - target.gram @ state.w_informative
    return precision_gaussian_draw(target.gram, rhs, d, sigma, rng)


def draw_w_noninformative(
    state: ModelState, stacked_noninf: Dataset, rng: Generator, method: str = "auto"
) -> np.ndarray:
    """Draw the noninformative-source coefficients; only the noninformative stack contributes."""
    state.validate()
    d = state.shrinkage["noninformative"].local_scales
    sigma = np.sqrt(state.var_noninformative)
    if _use_fast(stacked_noninf.n, state.p, method):
        return fast_gaussian_draw(
            GaussianSpec(stacked_noninf.design, d, stacked_noninf.outcome, sigma), rng
        )
    return precision_gaussian_draw(stacked_noninf.gram, stacked_noninf.xty, d, sigma, rng)


def variance_posterior(
    block: str, state: ModelState, data: Dataset, prior: tuple[float, float] = (0.5, 0.5)
) -> tuple[float, float]:
    """Inverse-Gamma (shape, scale) of the named variance's full conditional.

    ``block`` is one of ``"target"`` (data = target study), ``"informative"``
    or ``"noninformative"`` (data = the corresponding stack).
    """
    a, b = prior
    if a <= 0 or b <= 0:
        raise InputError(f"variance prior must be positive, got {prior}")
    if block == "target":
        coef, d = state.contrast, state.shrinkage["contrast"].local_scales
        rss = data.rss(state.w_informative + state.contrast)
    elif block == "informative":
        coef, d = state.w_informative, state.shrinkage["informative"].local_scales
        rss = data.rss(coef)
    elif block == "noninformative":
        coef, d = state.w_noninformative, state.shrinkage["noninformative"].local_scales
        rss = data.rss(coef)
    else:
        raise InputError(f"unknown variance block {block!r}")
    penalty = float(np.sum(coef * coef / d))
    scale = b + 0.5 * (rss + penalty)
    if not scale > 0:
        raise ArithmeticError(f"non-positive Inverse-Gamma scale {scale} for block {block}")
    return a + 0.5 * (data.n + coef.size), scale


def draw_variance(
    block: str,
    state: ModelState,
    data: Dataset,
    rng: Generator,
    prior: tuple[float, float] = (0.5, 0.5),
) -> float:
    shape, scale = variance_posterior(block, state, data, prior)
    return float(draw_inverse_gamma(shape, scale, rng))


def compose_beta(state: ModelState) -> np.ndarray:
    """Target coefficients beta = w + delta."""
    return state.w_informative + state.contrast
