"""``samlab`` command line.

Exit codes: 0 success, 1 invalid input (config, arguments, missing input
files), 2 failure while running (I/O, non-finite values, corrupt checkpoints).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import rng
from ..errors import CheckpointError, ConfigError, SamlabError
from ..models import loss_graph
from ..sharpness import loss_surface_slice, sharpness_probe, slice_coords
from ..tensor import Objective
from .config import load_config, save_config
from .io import load_checkpoint, write_csv
from .runner import AXES, AXIS_ALIASES, DEFAULT_SEEDS, build_data, measure_overhead, run_experiment, sweep, version_string

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _write_manifest(out: Path, verb: str, config, args: argparse.Namespace, result: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "spec_version": 1,
        "command": verb,
        "version": version_string(),
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "config": config.to_dict(),
        "result": result,
    }
    path = out / f"{verb}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _objective(config):
    train, _ = build_data(config)
    return Objective(loss_graph(config.model_spec()), train.as_batch())


def cmd_train(args) -> dict:
    config = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["run_seed"] = args.seed
    if args.no_sam:
        over["sam.enabled"] = False
    if args.rho is not None:
        over["sam.rho"] = args.rho
    if args.output_dir:
        over["output_dir"] = args.output_dir
    if over:
        config = config.with_overrides(**over)
    res = run_experiment(config)
    save_config(config, Path(config.output_dir) / "config.json")
    return {"output_dir": config.output_dir, "final": res.final, "best": res.best,
            "mean_step_wall_ms": res.mean_step_wall_ms}


def cmd_sweep(args) -> dict:
    config = load_config(args.config)
    if args.output_dir:
        config = config.with_overrides(output_dir=args.output_dir)
    res = sweep(config, args.axis, args.values, args.seeds, include_baseline=args.baseline)
    _write_manifest(Path(config.output_dir), "sweep", config, args, {"csv": str(res.path)})
    failed = sum(r["status"] != "ok" for r in res.rows)
    return {"csv": str(res.path), "cells": len(res.rows), "failed": failed}


def cmd_sharpness(args) -> dict:
    config = load_config(args.config)
    params = load_checkpoint(args.checkpoint)
    report = sharpness_probe(_objective(config), params, args.rho, args.steps, args.restarts,
                             seed=args.seed, hessian_iters=args.hessian_iters)
    out = Path(args.output_dir or config.output_dir)
    result = report.to_dict()
    _write_manifest(out, "sharpness", config, args, result)
    return result


def cmd_slice(args) -> dict:
    config = load_config(args.config)
    params = load_checkpoint(args.checkpoint)
    u = rng.stream(args.seed, 0, "slice/u").standard_normal(params.total_len)
    v = rng.stream(args.seed, 0, "slice/v").standard_normal(params.total_len)
    grid = loss_surface_slice(_objective(config), params, u, v, args.half_width, args.grid)
    coords = slice_coords(args.half_width, args.grid)
    out = Path(args.output_dir or config.output_dir)
    rows = [[coords[i], coords[j], grid[i, j]] for i in range(args.grid) for j in range(args.grid)]
    csv_path = write_csv(out / "slice.csv", ("alpha", "beta", "loss"), rows)
    result = {"csv": str(csv_path), "center_loss": float(grid[args.grid // 2, args.grid // 2]),
              "min_loss": float(grid.min()), "max_loss": float(grid.max())}
    _write_manifest(out, "slice", config, args, result)
    return result


def cmd_overhead(args) -> dict:
    config = load_config(args.config)
    res = measure_overhead(config, steps=args.steps, warmup=args.warmup)
    out = Path(args.output_dir or config.output_dir)
    result = res.to_dict()
    _write_manifest(out, "overhead", config, args, result)
    return result


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="samlab", description="SAM training experiments on synthetic tasks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-sam", action="store_true")
    t.add_argument("--rho", type=float)
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="grid over one SAM or data axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=sorted(set(AXES) | set(AXIS_ALIASES)))
    s.add_argument("--values", type=float, nargs="+")
    s.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    s.add_argument("--baseline", action="store_true", help="also run a SAM-disabled twin per cell")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep)

    h = sub.add_parser("sharpness", help="worst-case loss increase in a rho-ball")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--config", required=True)
    h.add_argument("--rho", type=float, default=0.15)
    h.add_argument("--steps", type=int, default=20)
    h.add_argument("--restarts", type=int, default=3)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--hessian-iters", type=int, default=0)
    h.add_argument("--output-dir")
    h.set_defaults(func=cmd_sharpness)

    sl = sub.add_parser("slice", help="2-D loss surface along random directions")
    sl.add_argument("--checkpoint", required=True)
    sl.add_argument("--config", required=True)
    sl.add_argument("--half-width", type=float, required=True)
    sl.add_argument("--grid", type=int, required=True)
    sl.add_argument("--seed", type=int, default=0)
    sl.add_argument("--output-dir")
    sl.set_defaults(func=cmd_slice)

    o = sub.add_parser("overhead", help="per-step wall time of SAM over plain training")
    o.add_argument("--config", required=True)
    o.add_argument("--steps", type=int, default=200)
    o.add_argument("--warmup", type=int, default=20)
    o.add_argument("--output-dir")
    o.set_defaults(func=cmd_overhead)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except FileNotFoundError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SamlabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=2, sort_keys=True, default=_jsonable))
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


if __name__ == "__main__":
    sys.exit(main())
