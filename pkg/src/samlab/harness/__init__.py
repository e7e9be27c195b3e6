from .config import ExperimentConfig, load_config, save_config
from .io import load_checkpoint, save_checkpoint
from .runner import (
    RunResult,
    SweepResult,
    best_from_metrics,
    measure_overhead,
    run_experiment,
    sweep,
)

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "SweepResult",
    "best_from_metrics",
    "load_checkpoint",
    "load_config",
    "measure_overhead",
    "run_experiment",
    "save_checkpoint",
    "save_config",
    "sweep",
]
