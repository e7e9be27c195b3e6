"""Training runs, sweeps and overhead timing."""

from __future__ import annotations

import json
import logging
import math
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, kernels, rng
from ..errors import ConfigError, NonFiniteError, SamlabError
from ..models import MlpSpec, init_params, loss_graph, predict
from ..optim import state_init
from ..sam import METRICS_FIELDS, MetricsRecord, SamConfig, ascent_stream, sam_train_step
from ..tasks import Batch, Dataset, SubsampleSpec, make_splits, subsample
from ..tensor import ParamVector, forward
from .config import ExperimentConfig
from .io import SWEEP_FIELDS, MetricsWriter, read_csv, save_checkpoint, write_csv

log = logging.getLogger(__name__)

TIMING_COLUMNS = ("step_wall_ms",)

AXES = {
    "rho": "sam.rho",
    "ascent_size": "sam.ascent_size",
    "m": "sam.m",
    "subsample_rate": "task.subsample_rate",
}
AXIS_ALIASES = {"ascent": "ascent_size", "subsample": "subsample_rate"}

RHO_GRID = (0.02, 0.05, 0.1, 0.15, 0.2, 0.3)
SUBSAMPLE_RATES = (0.02, 0.05, 0.1, 0.2, 0.4, 0.8)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=5,
        )
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"samlab {__version__}" + (f" ({desc})" if desc else "")


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def build_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    t = dict(config.task)
    kind = t.pop("kind")
    seed = int(t.pop("gen_seed"))
    rate = float(t.pop("subsample_rate"))
    t.pop("subsample_seed")
    train, test = make_splits(kind, seed, **t)
    if rate < 1.0:
        train = subsample(train, SubsampleSpec(rate, config.subsample_seed))
    return train, test


def draw_batch(train: Dataset, b: int, run_seed: int, step: int) -> Batch:
    """Uniform with-replacement draw of ``b`` training rows for ``step``."""
    idx = rng.stream(run_seed, step, "batch").integers(0, len(train), size=b)
    return Batch(train.features[idx], train.labels[idx])


def evaluate(spec, fn, params: ParamVector, data: Dataset) -> tuple[float, float]:
    batch = data.as_batch()
    loss = forward(fn, batch, params)
    logits = predict(spec, params, batch.x)
    acc = float(np.mean(np.argmax(logits, axis=1) == batch.y))
    return loss, acc


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    params: ParamVector
    metrics_path: Path
    manifest_path: Path
    final: dict
    best: dict
    mean_step_wall_ms: float = float("nan")


def best_from_metrics(path) -> dict:
    """Best eval value per metric from a metrics CSV (ties go to the earliest step)."""
    _, rows = read_csv(path)
    best = {"eval_accuracy": None, "eval_loss": None}
    for r in rows:
        if r["eval_accuracy"] == "":
            continue
        step = int(r["step"])
        acc, loss = float(r["eval_accuracy"]), float(r["eval_loss"])
        if best["eval_accuracy"] is None or acc > best["eval_accuracy"]["value"]:
            best["eval_accuracy"] = {"value": acc, "step": step}
        if best["eval_loss"] is None or loss < best["eval_loss"]["value"]:
            best["eval_loss"] = {"value": loss, "step": step}
    return best


def run_experiment(config: ExperimentConfig, out_dir=None, data=None) -> RunResult:
    """Train per ``config`` and persist metrics, checkpoints and a manifest.

    Evaluation happens every ``eval_every`` steps and after the last step.
    Checkpoints: ``ckpt_init.bin``, ``ckpt_final.bin``, the best checkpoint
    for each eval metric, and ``ckpt_step{N}.bin`` every ``checkpoint_every``.
    """
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.model_spec()
    fn = loss_graph(spec)
    train, test = data if data is not None else build_data(config)
    params = init_params(spec)
    opt_state = state_init(config.optimizer, params)
    save_checkpoint(params, out / "ckpt_init.bin")

    best = {"eval_accuracy": None, "eval_loss": None}
    final = {"step": 0, "eval_loss": None, "eval_accuracy": None}
    walls = []
    metrics_path = out / "metrics.csv"
    with MetricsWriter(metrics_path, METRICS_FIELDS) as mw:
        for step in range(1, config.total_steps + 1):
            batch = draw_batch(train, config.batch_size, config.run_seed, step)
            gen = ascent_stream(config.run_seed, step)
            try:
                params, opt_state, trace, rec = sam_train_step(
                    fn, params, batch, config.sam, config.optimizer, opt_state, gen, step=step
                )
            except NonFiniteError as exc:
                exc.context.setdefault("step", step)
                raise
            walls.append(rec.step_wall_ms)
            if step % config.eval_every == 0 or step == config.total_steps:
                rec.eval_loss, rec.eval_accuracy = evaluate(spec, fn, params, test)
                final = {"step": step, "eval_loss": rec.eval_loss, "eval_accuracy": rec.eval_accuracy}
                if best["eval_accuracy"] is None or rec.eval_accuracy > best["eval_accuracy"]["value"]:
                    best["eval_accuracy"] = {"value": rec.eval_accuracy, "step": step}
                    save_checkpoint(params, out / "ckpt_best_eval_accuracy.bin")
                if best["eval_loss"] is None or rec.eval_loss < best["eval_loss"]["value"]:
                    best["eval_loss"] = {"value": rec.eval_loss, "step": step}
                    save_checkpoint(params, out / "ckpt_best_eval_loss.bin")
            if config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(params, out / f"ckpt_step{step:07d}.bin")
            mw.write(rec)
    save_checkpoint(params, out / "ckpt_final.bin")

    mean_wall = float(np.mean(walls)) if walls else float("nan")
    manifest = {
        "spec_version": 1,
        "version": version_string(),
        "kernel_backend": kernels.backend,
        "seed": config.run_seed,
        "config": config.to_dict(),
        "train_size": len(train),
        "test_size": len(test),
        "final": final,
        "best": best,
        "mean_step_wall_ms": mean_wall,
    }
    manifest_path = out / "run.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(params, metrics_path, manifest_path, final, best, mean_wall)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def canonical_axis(axis: str) -> str:
    axis = AXIS_ALIASES.get(axis, axis)
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")
    return axis


def _axis_value(axis: str, v):
    if axis in ("ascent_size", "m"):
        return int(v)
    return float(v)


@dataclass
class SweepResult:
    axis: str
    values: list
    rows: list[dict] = field(default_factory=list)
    path: Path | None = None

    def column(self, name: str, sam_enabled: bool = True) -> dict:
        """``{value: [per-seed entries]}`` for one column, SAM or baseline rows."""
        out: dict = {}
        for r in self.rows:
            if bool(r["sam_enabled"]) == sam_enabled:
                out.setdefault(r["value"], []).append(r[name])
        return out


def sweep(base: ExperimentConfig, axis: str, values=None, seeds=DEFAULT_SEEDS, out_dir=None,
          include_baseline: bool = False) -> SweepResult:
    """Run one cell per (value, seed) and write ``sweep_<axis>.csv``.

    With ``include_baseline`` every cell also gets a SAM-disabled twin (same
    seed and axis value), flagged by ``sam_enabled = 0``. A failing cell is
    recorded with ``status = error`` and the sweep continues.
    """
    axis = canonical_axis(axis)
    if values is None:
        values = {"rho": RHO_GRID, "subsample_rate": SUBSAMPLE_RATES}.get(axis)
        if values is None:
            raise ConfigError(f"axis {axis} has no default grid; pass values")
    values = [_axis_value(axis, v) for v in values]
    out = Path(out_dir or base.output_dir)
    arms = [True, False] if include_baseline else [True]
    rows = []
    data_cache: dict = {}
    for value in sorted(values):
        for seed in sorted(seeds):
            for enabled in arms:
                cell = out / f"{axis}={value}" / f"seed={seed}" / ("sam" if enabled else "base")
                row = {"axis": axis, "value": value, "seed": seed, "sam_enabled": enabled,
                       "status": "ok", "error": ""}
                try:
                    cfg = base.with_overrides(**{AXES[axis]: value, "run_seed": seed,
                                                 "sam.enabled": bool(enabled and base.sam.enabled),
                                                 "output_dir": str(cell)})
                    key = (json.dumps(cfg.task, sort_keys=True), cfg.subsample_seed)
                    if key not in data_cache:
                        data_cache[key] = build_data(cfg)
                    res = run_experiment(cfg, cell, data=data_cache[key])
                    row.update(
                        best_eval_accuracy=res.best["eval_accuracy"]["value"] if res.best["eval_accuracy"] else None,
                        best_eval_accuracy_step=res.best["eval_accuracy"]["step"] if res.best["eval_accuracy"] else None,
                        best_eval_loss=res.best["eval_loss"]["value"] if res.best["eval_loss"] else None,
                        best_eval_loss_step=res.best["eval_loss"]["step"] if res.best["eval_loss"] else None,
                        final_eval_accuracy=res.final["eval_accuracy"],
                        final_eval_loss=res.final["eval_loss"],
                        mean_step_wall_ms=res.mean_step_wall_ms,
                    )
                except (SamlabError, OSError, ValueError) as exc:
                    log.warning("sweep cell %s=%s seed=%s failed: %s", axis, value, seed, exc)
                    row.update(status="error", error=f"{type(exc).__name__}: {exc}")
                rows.append(row)
    path = out / f"sweep_{axis}.csv"
    write_csv(path, SWEEP_FIELDS, [[r.get(f) for f in SWEEP_FIELDS] for r in rows])
    return SweepResult(axis, values, rows, path)


# ---------------------------------------------------------------------------
# overhead
# ---------------------------------------------------------------------------


@dataclass
class OverheadResult:
    ratio: float
    median_base_ms: float
    median_sam_ms: float
    steps: int
    timer_resolution_warning: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def measure_overhead(config: ExperimentConfig, steps: int = 200, warmup: int = 20,
                     base_sam: SamConfig | None = None) -> OverheadResult:
    """Median per-step wall time of SAM training over plain training.

    Both arms train from the same init on the same batch stream; their steps
    are interleaved so background load hits both equally. ``base_sam``
    overrides the control arm's SAM config (default: SAM disabled).
    """
    if steps < 1:
        raise ConfigError("measure_overhead needs steps >= 1")
    spec = config.model_spec()
    fn = loss_graph(spec)
    train, _ = build_data(config)
    control = base_sam if base_sam is not None else SamConfig(enabled=False)
    arms = []
    for sam_cfg in (control, config.sam):
        p = init_params(spec)
        arms.append([sam_cfg, p, state_init(config.optimizer, p), []])
    for step in range(1, warmup + steps + 1):
        batch = draw_batch(train, config.batch_size, config.run_seed, step)
        order = arms if step % 2 else arms[::-1]
        for arm in order:
            sam_cfg, p, st, times = arm
            gen = ascent_stream(config.run_seed, step)
            t0 = time.perf_counter()
            p, st, _, _ = sam_train_step(fn, p, batch, sam_cfg, config.optimizer, st, gen)
            dt = time.perf_counter() - t0
            arm[1], arm[2] = p, st
            if step > warmup:
                times.append(dt)
    base_med = float(np.median(arms[0][3]))
    sam_med = float(np.median(arms[1][3]))
    resolution = time.get_clock_info("perf_counter").resolution
    return OverheadResult(
        ratio=sam_med / base_med,
        median_base_ms=base_med * 1e3,
        median_sam_ms=sam_med * 1e3,
        steps=steps,
        timer_resolution_warning=resolution > 0.01 * base_med,
    )
