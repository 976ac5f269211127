"""Command-line entry point: ``blast fit | simulate | summarize``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .driver import SamplerConfig, run_chains, summarize
from .errors import InputError, NumericalError
from .io import (
    build_manifest,
    dumps_json,
    file_digest,
    load_problem,
    read_draws_csv,
    write_draws_csv,
    write_json,
)
from .simbench import METHODS, expand_grid, replicate_seed, run_grid, write_table

logger = logging.getLogger("blast")


def _parse_ids(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.replace(" ", "").split(","))
    except ValueError:
        raise InputError(f"--informative expects comma-separated integers, got {text!r}") from None


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return data


def _threads(args) -> int:
    value = args.threads if args.threads is not None else os.environ.get("BLAST_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise InputError(f"invalid thread count {value!r}") from None
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


def cmd_fit(args) -> int:
    bundle = load_problem(args.target, args.source or [], args.outcome, not args.no_standardize)
    settings = {
        "iterations": args.iters,
        "burn_in": args.burnin,
        "seed": args.seed,
        "mode": "selection" if args.mode == "select" else "oracle",
        "oracle_informative_ids": list(_parse_ids(args.informative)),
    }
    digests = dict(bundle.digests)
    if args.config:
        settings.update(_read_json(args.config))
        digests[str(args.config)] = file_digest(args.config)
    config = SamplerConfig.from_dict(settings)
    chains = run_chains(bundle.target, bundle.sources, config, _threads(args))
    summary = summarize(chains)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_draws_csv(out / "draws.csv", chains)
    body = summary.to_dict()
    body["columns"] = bundle.column_names
    if bundle.standardization is not None:
        std = bundle.standardization
        body["standardization"] = std.to_dict()
        body["beta_mean_original_scale"] = std.to_original_scale(summary.beta_mean).tolist()
        body["intervals_original_scale"] = (summary.intervals / std.column_sds[:, None]).tolist()
    write_json(out / "summary.json", body)
    seeds = {"seed": config.seed, "chain_streams": list(range(config.chains))}
    write_json(out / "manifest.json", build_manifest("fit", config.to_dict(), seeds, digests))
    return 0


def cmd_simulate(args) -> int:
    scenario = _read_json(args.scenario)
    sampler_overrides = scenario.pop("sampler", {})
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r} (choose from {', '.join(METHODS)})")
    if not methods:
        raise InputError("--methods is empty")
    specs = expand_grid(scenario)
    sampler = SamplerConfig.from_dict({"iterations": 1500, "burn_in": 500, **sampler_overrides})
    rows = run_grid(specs, methods, sampler)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, out / "table.csv", specs[0].K)
    seeds = {
        "scenario_seed": specs[0].seed,
        "replicate_seeds": [replicate_seed(specs[0].seed, r) for r in range(specs[0].replicates)],
    }
    extra = {"scenarios": [asdict(s) for s in specs], "methods": methods}
    manifest = build_manifest("simulate", sampler.to_dict(), seeds, {str(args.scenario): file_digest(args.scenario)}, extra)
    write_json(out / "manifest.json", manifest)
    return 0


def cmd_summarize(args) -> int:
    chains = read_draws_csv(args.draws)
    text = dumps_json(summarize(chains, args.level).to_dict())
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blast", description="Bayesian multi-source transfer regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to CSV studies")
    fit.add_argument("--target", required=True)
    fit.add_argument("--source", action="append", help="source study CSV (repeatable; ids 1..K in order)")
    fit.add_argument("--mode", choices=("oracle", "select"), default="select")
    fit.add_argument("--informative", default="", help="comma-separated source ids (oracle mode)")
    fit.add_argument("--iters", type=int, default=3000)
    fit.add_argument("--burnin", type=int, default=1000)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--config", help="JSON file whose keys override the flags")
    fit.add_argument("--outcome", default="y")
    fit.add_argument("--no-standardize", action="store_true")
    fit.add_argument("--threads", type=int)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run the synthetic benchmark")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--methods", default=",".join(METHODS))
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    summ = sub.add_parser("summarize", help="summarize a draws CSV")
    summ.add_argument("--draws", required=True)
    summ.add_argument("--level", type=float, default=0.95)
    summ.add_argument("--out")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except NumericalError as exc:
        print(f"blast: numerical error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"blast: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
