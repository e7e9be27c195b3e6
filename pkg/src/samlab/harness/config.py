"""Experiment configuration: JSON schema (``"spec_version": 1``) and validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigError
from ..models import MlpSpec, TransformerSpec
from ..optim import OptimizerConfig
from ..sam import SamConfig

SPEC_VERSION = 1

TASK_DEFAULTS = {
    "spirals": {"n_per_class": 200, "noise_sigma": 0.05, "n_test_per_class": 200, "gen_seed": 3},
    "seq_lookup": {"n": 2000, "vocab": 16, "seq_len": 7, "n_test": 1000, "gen_seed": 1},
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one training run.

    ``checkpoint_every`` must be 0 (final/best checkpoints only) or a
    multiple of ``eval_every`` so periodic checkpoints always coincide with
    an evaluation row. ``model.init_seed`` and ``task.subsample_seed`` fall
    back to ``run_seed`` when unset.
    """

    task: dict
    model: dict
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sam: SamConfig = field(default_factory=SamConfig)
    batch_size: int = 128
    total_steps: int = 1000
    eval_every: int = 50
    checkpoint_every: int = 0
    run_seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.task = dict(self.task)
        self.model = dict(self.model)
        kind = self.task.get("kind")
        if kind not in TASK_DEFAULTS:
            raise ConfigError(f"unknown task kind {kind!r}")
        merged = dict(TASK_DEFAULTS[kind])
        merged.update(self.task)
        merged.setdefault("subsample_rate", 1.0)
        merged.setdefault("subsample_seed", None)
        self.task = merged
        if not 0.0 < float(merged["subsample_rate"]) <= 1.0:
            raise ConfigError("task.subsample_rate must lie in (0, 1]")
        if self.model.get("kind") not in ("mlp", "transformer"):
            raise ConfigError(f"unknown model kind {self.model.get('kind')!r}")
        self.model_spec()  # validates
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.checkpoint_every < 0 or (self.checkpoint_every and self.checkpoint_every % self.eval_every):
            raise ConfigError("checkpoint_every must be 0 or a multiple of eval_every")
        if self.run_seed < 0:
            raise ConfigError("run_seed must be >= 0")
        if self.sam.active:
            self.sam.resolve_ascent_size(self.batch_size)

    def model_spec(self):
        m = {k: v for k, v in self.model.items() if k != "kind"}
        if m.get("init_seed") is None:
            m["init_seed"] = self.run_seed
        try:
            if self.model["kind"] == "mlp":
                return MlpSpec(tuple(m.pop("layer_sizes")), **m)
            return TransformerSpec(**m)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad model section: {exc}") from None

    @property
    def subsample_seed(self) -> int:
        s = self.task.get("subsample_seed")
        return self.run_seed if s is None else int(s)

    def to_dict(self) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "task": copy.deepcopy(self.task),
            "model": copy.deepcopy(self.model),
            "optimizer": self.optimizer.to_dict(),
            "sam": self.sam.to_dict(),
            "batch_size": self.batch_size,
            "total_steps": self.total_steps,
            "eval_every": self.eval_every,
            "checkpoint_every": self.checkpoint_every,
            "run_seed": self.run_seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("spec_version", None)
        if version != SPEC_VERSION:
            raise ConfigError(f"config spec_version must be {SPEC_VERSION}, got {version!r}")
        known = {"task", "model", "optimizer", "sam", "batch_size", "total_steps", "eval_every",
                 "checkpoint_every", "run_seed", "output_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "task" not in d or "model" not in d:
            raise ConfigError("config needs 'task' and 'model' sections")
        try:
            d["optimizer"] = OptimizerConfig(**d.get("optimizer", {}))
            d["sam"] = SamConfig(**d.get("sam", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**d)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with top-level fields, ``sam.*``, ``optimizer.*`` or ``task.*`` replaced."""
        d = self.to_dict()
        for key, value in kw.items():
            section, _, sub = key.partition(".")
            if sub:
                d[section][sub] = value
            else:
                d[key] = value
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
