"""Bayesian multi-source transfer learning for sparse linear regression with horseshoe shrinkage."""
from __future__ import annotations

__version__ = "0.1.0"

from .driver import (
    GibbsSampler,
    PosteriorDraws,
    PosteriorSummary,
    SamplerConfig,
    run_chains,
    run_oracle,
    run_selection,
    summarize,
)
from .errors import BlastError, InputError, NumericalError
from .model import Dataset, ModelState
from .selection import PseudoDataPolicy, TemperingPolicy

__all__ = [
    "BlastError",
    "Dataset",
    "GibbsSampler",
    "InputError",
    "ModelState",
    "NumericalError",
    "PosteriorDraws",
    "PosteriorSummary",
    "PseudoDataPolicy",
    "SamplerConfig",
    "TemperingPolicy",
    "run_chains",
    "run_oracle",
    "run_selection",
    "summarize",
]
