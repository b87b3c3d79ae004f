"""Command-line entry point: ``python3 -m wolf <command> --config PATH [options]``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from wolf.config import ConfigError, ExperimentConfig, load_config
from wolf.core_math import GaussianBelief, RngStream
from wolf.experiment import _fmt, _weight_spec, run_experiment, run_sweep, tracking_config
from wolf.robustness import GridSpec, make_update, pif_grid
from wolf.scenarios import tracking2d_generate

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
COMMANDS = {"track2d": "track2d", "lorenz96": "lorenz96", "regress1d": "regress1d", "pif": "track2d",
            "sweep": None}
PIF_KINDS = ("kf", "wolf-imq", "wolf-md", "wolf-tmd", "wolf-perdim", "wolf-const")


def pif_command(cfg: ExperimentConfig, out) -> dict[str, float]:
    """Write one ``pif_<label>.csv`` grid per filter; returns each grid's maximum."""
    if cfg.scenario != "track2d":
        raise ConfigError("PIF grids are defined for the track2d scenario")
    spec = cfg.pif
    tcfg = tracking_config(cfg)
    tcfg = type(tcfg)(**{**tcfg.__dict__, "steps": spec.steps, "variant": spec.variant})
    data = tracking2d_generate(tcfg, RngStream(cfg.seed, 0).split(0))
    dyn, obs = tcfg.model()
    prior = GaussianBelief(np.zeros(4), float(cfg.scenario_params["prior_scale"]) * np.eye(4))
    grid = GridSpec(spec.low, spec.high, spec.n)
    labels = spec.filters or tuple(f.label for f in cfg.filters)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    maxima = {}
    for label in labels:
        f = cfg.filter(label)
        if f.kind not in PIF_KINDS or f.tunable:
            raise ConfigError(f"PIF needs a KF or WoLF filter with fixed parameters, got {label}")
        g = pif_grid(make_update(obs, _weight_spec(f)), dyn, prior, data.measurements, grid,
                     label=label, reverse=spec.reverse)
        g.to_csv(out / f"pif_{label}.csv")
        maxima[label] = g.max()
    with open(out / "pif_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filter", "max_pif", "low", "high", "n", "steps"])
        for label, m in maxima.items():
            w.writerow([label, _fmt(m), _fmt(spec.low), _fmt(spec.high), spec.n, spec.steps])
    return maxima


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wolf", description="Robust filtering experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value experiment file")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--trials", type=int, help="override experiment.trials")
        p.add_argument("--jobs", type=int, help="worker processes across trials")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {k: getattr(args, k) for k in ("seed", "trials", "jobs") if getattr(args, k) is not None}
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config, COMMANDS[args.command]), args)
        if args.command == "sweep":
            if cfg.sweep is None:
                raise ConfigError("the sweep command needs sweep.param and sweep.values")
            run_sweep(cfg, args.out)
        elif args.command == "pif":
            for label, m in pif_command(cfg, args.out).items():
                print(f"{label}: max PIF {m:.6g}")
        else:
            for row in run_experiment(cfg, args.out):
                print(f"{row.label:>12} {row.metric:>8} median={row.median:.4g}"
                      + ("" if row.slowdown is None else f" slowdown={row.slowdown:.2f}"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
