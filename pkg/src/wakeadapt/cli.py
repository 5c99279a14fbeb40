"""Command-line entry point: ``wakeadapt {init,run,compare,slice,oracle}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .campaign import (CHECKPOINT, CampaignState, compare_schemes, export_row_slice, plant_optimum,
                       run_campaign)
from .config import CampaignConfig, ConfigError
from .farm import DomainError
from .gp import GpFitError, GpNumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(args, required=True) -> CampaignConfig | None:
    if args.config is None:
        if required:
            raise ConfigError("--config is required")
        return None
    config = CampaignConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    return config


def cmd_init(args) -> int:
    config = CampaignConfig() if args.seed is None else CampaignConfig(seed=args.seed)
    target = Path(args.config or "campaign.toml")
    target.parent.mkdir(parents=True, exist_ok=True)
    config.save(target)
    print(target)
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args, required=args.resume is None)
    resume = args.resume
    if resume is not None and Path(resume).is_dir():
        resume = Path(resume) / CHECKPOINT
    if args.out:
        out = Path(args.out)
    elif resume is not None:
        out = Path(resume).parent
    else:
        out = Path(config.output_dir)
    result = run_campaign(config, out, resume=resume, stop_after=args.stop_after)
    if result.summary:
        s = result.summary
        print(f"final gain {s['final_gain']:.4%}  yaw {np.round(s['final_yaw_deg'], 1).tolist()}")
    else:
        print(f"stopped after iteration {result.state.iteration}; checkpoint in {out / CHECKPOINT}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.config:
        raise ConfigError("--config is required")
    configs = []
    for path in args.config:
        c = CampaignConfig.load(path)
        if args.seed is not None:
            c = c.replace(seed=args.seed)
        configs.append(c)
    if len(configs) == 1 and args.grid:
        base = configs[0]
        configs = [base.replace(scheme=s, kernel=k) for s in ("magp", "bo") for k in ("se", "matern52")]
    out = Path(args.out or "comparison")
    rows = compare_schemes(configs, out)
    for r in rows:
        print(f"{r['scheme']:5s} {r['kernel']:9s} init {_pct(r['initialization_gain'])}"
              f"  final {_pct(r['final_gain'])}")
    return EXIT_OK


def _pct(v):
    return "   n/a" if v is None else f"{v:7.3%}"


def cmd_slice(args) -> int:
    if args.resume is None:
        raise ConfigError("--resume (a checkpoint or campaign directory) is required")
    path = Path(args.resume)
    if path.is_dir():
        path = path / CHECKPOINT
    state = CampaignState.load(path)
    lo, hi = args.range_deg
    grid = np.linspace(lo, hi, args.points)
    out = Path(args.out or f"slice_row{args.row}.csv")
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"slice_row{args.row}.csv"
    try:
        export_row_slice(state, args.row, grid, out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = _load_config(args, required=False) or CampaignConfig()
    result = plant_optimum(config, args.resolution)
    payload = {"yaw_deg": result.yaw.tolist(), "gain": result.gain,
               "resolution_deg": result.resolution}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wakeadapt",
                                     description="Closed-loop wind-farm yaw optimisation campaigns.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a default configuration")
    p.add_argument("--config", help="path of the TOML file to write (default campaign.toml)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run", help="run or resume a campaign")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default from the config)")
    p.add_argument("--resume", help="checkpoint file or campaign directory")
    p.add_argument("--stop-after", type=int, help="halt after this many iterations")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several configs and tabulate gains")
    p.add_argument("--config", action="append", help="repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--grid", action="store_true",
                   help="with one config, run the scheme x kernel grid")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("slice", help="export a row slice of a trained model")
    p.add_argument("--resume", help="checkpoint file or campaign directory")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--range-deg", type=float, nargs=2, default=(-30.0, 30.0))
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--out")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("oracle", help="brute-force optimum of the noiseless plant")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GpNumericalError, GpFitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
