"""Command-line entry point.

Subcommands: run, sweep, bounds, validate, report. Exit codes: 0 success,
1 config/usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import quadratic_bound_rows
from .config import ConfigError, DFedReweightingSpec, load_config, parse_attack_spec, parse_config
from .reweight import TempSoftmax
from .sim import SimulationError, run_experiment


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the CLI contract wants 1.
    def error(self, message):
        raise UsageError(f"{self.format_usage()}\n{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="dflsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--outdir", help="output directory (overrides config and DFLSIM_OUTDIR)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--parallel", type=int, default=1, metavar="N",
                       help="worker threads for per-client work")
        p.add_argument("--rounds", type=int, help="override the configured round count")
        p.add_argument("--seed-override", help="comma-separated seed list replacing the config's")

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="grid over temperature/attack values")
    p_sweep.add_argument("config")
    add_common(p_sweep)

    p_bounds = sub.add_parser("bounds", help="quadratic-testbed trajectory vs theorem bound")
    p_bounds.add_argument("config")
    p_bounds.add_argument("--outdir", help="output directory for bounds.csv")

    p_validate = sub.add_parser("validate", help="schema-check a config file")
    p_validate.add_argument("config")

    p_report = sub.add_parser("report", help="re-derive summary tables from a run directory")
    p_report.add_argument("rundir")
    return parser


def _apply_overrides(config, args):
    if getattr(args, "rounds", None) is not None:
        config = replace(config, rounds=args.rounds)
    if getattr(args, "seed_override", None):
        try:
            seeds = tuple(int(s) for s in args.seed_override.split(","))
        except ValueError:
            raise ConfigError(f"--seed-override expects integers, got {args.seed_override!r}")
        config = replace(config, seeds=seeds)
    return config


def _cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    summary = run_experiment(
        config, parallel=args.parallel, outdir=args.outdir, quiet=args.quiet
    )
    if not args.quiet:
        print(
            f"run '{config.name}': mean_acc={summary.mean_acc:.4f} "
            f"var={summary.var_points:.3f} ({summary.wall_clock_sec:.1f}s)"
        )
    return 0


def _cmd_sweep(args) -> int:
    with open(args.config) as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or set(doc) != {"base", "grid"}:
        raise ConfigError("sweep config must have exactly the keys 'base' and 'grid'")
    grid = doc["grid"]
    allowed = {"temperature", "attack"}
    unknown = set(grid) - allowed
    if unknown:
        raise ConfigError(f"grid: unknown key(s) {sorted(unknown)}")
    base = parse_config(doc["base"])
    temperatures = grid.get("temperature", [None])
    attacks = grid.get("attack", ["__keep__"])

    for temp in temperatures:
        for attack in attacks:
            config = base
            suffix = []
            if temp is not None:
                agg = config.aggregator
                if not (isinstance(agg, DFedReweightingSpec) and isinstance(agg.crs, TempSoftmax)):
                    raise ConfigError(
                        "temperature sweep requires a dfed_reweighting/temp_softmax aggregator"
                    )
                config = replace(
                    config, aggregator=replace(agg, crs=TempSoftmax(float(temp)))
                )
                suffix.append(f"T{temp}")
            if attack != "__keep__":
                config = replace(config, attack=parse_attack_spec(attack, "grid.attack"))
                suffix.append("noattack" if attack is None else f"attack-{attack['kind']}")
            config = replace(config, name="-".join([config.name] + suffix))
            config = _apply_overrides(config, args)
            summary = run_experiment(
                config, parallel=args.parallel, outdir=args.outdir, quiet=args.quiet
            )
            if not args.quiet:
                print(
                    f"sweep '{config.name}': mean_acc={summary.mean_acc:.4f} "
                    f"var={summary.var_points:.3f}"
                )
    return 0


_BOUNDS_KEYS = {"smoothness", "dim", "eta", "rounds", "num_clients", "noise_scale", "seed", "outdir"}


def _cmd_bounds(args) -> int:
    with open(args.config) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ConfigError("bounds config must be an object")
    unknown = set(doc) - _BOUNDS_KEYS
    if unknown:
        raise ConfigError(f"bounds config: unknown key(s) {sorted(unknown)}")
    rows = quadratic_bound_rows(
        L=float(doc.get("smoothness", 1.0)),
        dim=int(doc.get("dim", 16)),
        eta=float(doc.get("eta", 0.1)),
        rounds=int(doc.get("rounds", 100)),
        num_clients=int(doc.get("num_clients", 4)),
        noise_scale=float(doc.get("noise_scale", 0.1)),
        seed=int(doc.get("seed", 43)),
    )
    outdir = Path(args.outdir or doc.get("outdir") or "runs")
    outdir.mkdir(parents=True, exist_ok=True)
    out_path = outdir / "bounds.csv"
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "empirical_sq_dist", "theorem_bound", "slack"])
        for t, emp, bound, slack in rows:
            writer.writerow([t, repr(emp), repr(bound), repr(slack)])
    print(f"wrote {out_path}")
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"ok: '{config.name}' is a valid run config")
    return 0


def _cmd_report(args) -> int:
    rundir = Path(args.rundir)
    metrics_path = rundir / "metrics.csv"
    if not metrics_path.exists():
        raise ConfigError(f"no metrics.csv under {rundir}")
    by_seed = {}
    with open(metrics_path, newline="") as f:
        for row in csv.DictReader(f):
            seed, t = int(row["seed"]), int(row["round"])
            by_seed.setdefault(seed, {}).setdefault(t, {})[int(row["client"])] = float(row["acc"])
    per_seed = {}
    for seed, rounds in sorted(by_seed.items()):
        final_round = max(rounds)
        accs = [acc for _, acc in sorted(rounds[final_round].items())]
        per_seed[str(seed)] = {
            "final_round": final_round,
            "mean_acc": float(np.mean(accs)),
            "var_points": float(np.var([a * 100.0 for a in accs])),
        }
    derived = {
        "per_seed": per_seed,
        "cross_seed": {
            "mean_acc": float(np.mean([s["mean_acc"] for s in per_seed.values()])),
            "var_points": float(np.mean([s["var_points"] for s in per_seed.values()])),
        },
    }
    print(json.dumps(derived, indent=2, sort_keys=True))
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "bounds": _cmd_bounds,
        "validate": _cmd_validate,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SimulationError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
