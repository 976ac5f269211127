"""CSV ingestion, draw storage and run manifests."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .driver import PosteriorDraws
from .errors import InputError
from .model import Dataset

logger = logging.getLogger(__name__)


@dataclass
class Standardization:
    """Predictor scaling shared by all studies, plus per-study centering.

    Predictors of study k are mapped to ``(x - column_means[k]) / column_sds``
    (the sds come from the target study); outcomes are centered by
    ``outcome_means[k]``.  Coefficients map back by ``beta / column_sds``.
    """

    column_sds: np.ndarray
    column_means: list[np.ndarray] = field(default_factory=list)
    outcome_means: list[float] = field(default_factory=list)

    def to_original_scale(self, coef: np.ndarray) -> np.ndarray:
        return np.asarray(coef, dtype=float) / self.column_sds

    def to_dict(self) -> dict:
        return {
            "column_sds": self.column_sds.tolist(),
            "column_means": [m.tolist() for m in self.column_means],
            "outcome_means": list(self.outcome_means),
        }


@dataclass
class ProblemBundle:
    target: Dataset
    sources: list[Dataset]
    column_names: list[str]
    standardization: Standardization | None
    digests: dict[str, str]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_numeric_csv(path, outcome: str | None = "y") -> tuple[list[str], np.ndarray, np.ndarray | None]:
    """Parse a headed all-numeric CSV; returns (predictor names, predictors, outcome)."""
    path = str(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if outcome is not None and outcome not in header:
            raise InputError(f"{path}: line 1: missing outcome column {outcome!r}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                bad = next(i for i, v in enumerate(row) if not _is_float(v))
                raise InputError(
                    f"{path}: line {line}: non-numeric value {row[bad]!r} in column {header[bad]!r}"
                ) from None
            if not all(math.isfinite(v) for v in rows[-1]):
                raise InputError(f"{path}: line {line}: non-finite value")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if outcome is None:
        return header, data, None
    j = header.index(outcome)
    names = header[:j] + header[j + 1:]
    return names, np.delete(data, j, axis=1), data[:, j]


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def load_problem(
    target_path,
    source_paths: Sequence = (),
    outcome: str = "y",
    standardize: bool = True,
) -> ProblemBundle:
    """Read target and source CSVs (outcome column ``outcome``, all others predictors).

    Sources receive study ids 1..K in the given order.
    """
    names, X0, y0 = read_numeric_csv(target_path, outcome)
    if X0.shape[1] == 0:
        raise InputError(f"{target_path}: no predictor columns")
    if X0.shape[0] == 0:
        raise InputError(f"{target_path}: no data rows")
    parsed = [(X0, y0)]
    for path in source_paths:
        n_k, Xk, yk = read_numeric_csv(path, outcome)
        if n_k != names:
            raise InputError(f"{path}: line 1: predictor columns differ from {target_path}")
        parsed.append((Xk, yk))
    digests = {str(p): file_digest(p) for p in [target_path, *source_paths]}
    std = None
    if standardize:
        sds = X0.std(axis=0)
        if np.any(sds == 0):
            logger.warning("constant target columns %s left unscaled", [names[j] for j in np.flatnonzero(sds == 0)])
            sds = np.where(sds == 0, 1.0, sds)
        std = Standardization(sds)
        scaled = []
        for X, y in parsed:
            mx = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
            my = float(y.mean()) if y.size else 0.0
            std.column_means.append(mx)
            std.outcome_means.append(my)
            scaled.append(((X - mx) / sds, y - my))
        parsed = scaled
    target = Dataset(parsed[0][0], parsed[0][1], 0, "target")
    sources = [Dataset(X, y, k, "source") for k, (X, y) in enumerate(parsed[1:], start=1)]
    return ProblemBundle(target, sources, names, std, digests)


def _fmt(v: float) -> str:
    return repr(float(v))


def draws_columns(p: int, K: int, selection: bool) -> list[str]:
    cols = [f"beta_{j}" for j in range(1, p + 1)]
    if selection:
        cols += [f"gamma_{k}" for k in range(1, K + 1)]
    cols += ["sigma2_target", "sigma2_informative"]
    if selection:
        cols.append("sigma2_noninformative")
    return cols


def write_draws_csv(path, chains: Sequence[PosteriorDraws]):
    """Retained rows of every chain; a leading ``chain`` column appears when there are several."""
    chains = list(chains)
    first = chains[0]
    selection = first.gamma is not None
    p, K = first.beta.shape[1], 0 if first.gamma is None else first.gamma.shape[1]
    multi = len(chains) > 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["chain"] if multi else []) + draws_columns(p, K, selection))
        for c in chains:
            beta, var = c.retained("beta"), c.retained("variances")
            gamma = c.retained("gamma")
            for i in range(beta.shape[0]):
                row = [str(c.chain)] if multi else []
                row += [_fmt(v) for v in beta[i]]
                if selection:
                    row += [str(int(g)) for g in gamma[i]]
                row += [_fmt(v) for v in var[i, : 3 if selection else 2]]
                w.writerow(row)


def read_draws_csv(path) -> list[PosteriorDraws]:
    """Inverse of :func:`write_draws_csv` (all rows treated as retained)."""
    header, data, _ = read_numeric_csv(path, outcome=None)
    idx = {h: i for i, h in enumerate(header)}
    beta_cols = [h for h in header if h.startswith("beta_")]
    gamma_cols = [h for h in header if h.startswith("gamma_")]
    if not beta_cols or "sigma2_target" not in idx:
        raise InputError(f"{path}: line 1: not a draws file (need beta_* and sigma2_target columns)")
    chain_ids = data[:, idx["chain"]].astype(int) if "chain" in idx else np.zeros(data.shape[0], int)
    out = []
    for c in np.unique(chain_ids) if data.shape[0] else [0]:
        rows = data[chain_ids == c]
        var = np.full((rows.shape[0], 3), np.nan)
        for j, name in enumerate(("sigma2_target", "sigma2_informative", "sigma2_noninformative")):
            if name in idx:
                var[:, j] = rows[:, idx[name]]
        gamma = rows[:, [idx[g] for g in gamma_cols]].astype(np.int8) if gamma_cols else None
        out.append(PosteriorDraws(rows[:, [idx[b] for b in beta_cols]], var, 0, gamma, chain=int(c)))
    return out


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps_json(obj) -> str:
    """Deterministic UTF-8 JSON; floats keep full round-trip precision, NaN becomes null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj), encoding="utf-8", newline="\n")


def run_timestamp() -> str:
    """UTC ISO timestamp; honors SOURCE_DATE_EPOCH for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        try:
            t = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        except ValueError as exc:
            raise InputError(f"invalid SOURCE_DATE_EPOCH {epoch!r}") from exc
    else:
        t = _dt.datetime.now(_dt.timezone.utc)
    return t.replace(microsecond=0).isoformat()


def build_manifest(command: str, config: dict, seeds: dict, digests: dict, extra: dict | None = None) -> dict:
    from . import __version__

    out = {
        "command": command,
        "software_version": __version__,
        "config": config,
        "seeds": seeds,
        "input_digests": {k: {"sha256": v} for k, v in digests.items()},
        "timestamps": {"created": run_timestamp()},
    }
    if extra:
        out.update(extra)
    return out
