"""Experiment orchestration and the command-line interface."""

from .config import ExperimentConfig, SearchSpace, load_config
from .experiments import (
    cycle_reservoir_da,
    ensure_l96_dataset,
    ensure_qg_dataset,
    run_heatmap,
    run_qg,
    run_scaling,
    run_surrogate,
    tune_lr,
    write_report,
)

__all__ = [
    "ExperimentConfig", "SearchSpace", "load_config", "cycle_reservoir_da",
    "ensure_l96_dataset", "ensure_qg_dataset", "run_heatmap", "run_qg",
    "run_scaling", "run_surrogate", "tune_lr", "write_report",
]
