"""Experiment configuration: one flat record, JSON-loadable, flag-overridable."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ContractError

__all__ = ["ExperimentConfig", "SearchSpace", "load_config"]


@dataclass
class ExperimentConfig:
    """Knobs shared by the experiment drivers; each driver reads the fields it
    needs.  Defaults reproduce the full-size runs; ``quick`` shrinks trial
    counts and segment lengths for smoke testing."""

    # data / identity
    system: str = "lorenz96"
    dim: int = 36
    seed: int = 1
    data_root: str = "data"
    out_dir: str = "results"
    quick: bool = False
    workers: int = 1

    # assimilation window and schedule
    window_steps: int = 10
    every_k: int = 5
    include_t0: bool = False
    n_windows: int = 60
    trials: int = 30

    # error statistics
    noise_sd: float = 0.5
    obs_sd_factor: float = 1.25    # sigma_obs = factor * noise_sd
    bg_sd_divisor: float = 1.5     # sigma_bg  = noise_sd / divisor
    ic_perturb_sd: float = 1.0

    # methods
    methods: tuple = ("incremental", "backprop-approx")
    outer_loops: int = 3
    lr_alpha: float = 0.5
    lr_decay: float = 0.5
    inner_tol: float = 1e-8
    inner_max_iter: object = None
    exact_hessian_max_dim: int = 1024

    # heatmap grid
    obs_counts: tuple = (6, 12, 18, 24, 30, 36)
    noise_levels: tuple = (0.1, 0.5, 1.0, 1.5, 2.0)
    t_test_alpha: float = 0.01

    # dimension scaling
    dims: tuple = (6, 20, 36, 72, 144, 256)

    # QG experiment
    qg_profile: str = "two-layer-default"
    qg_window_steps: int = 6
    qg_every_k: int = 3
    qg_noise_factor: float = 0.10   # obs noise = factor * spin-up clim SD
    qg_obs_sd_factor: float = 0.125
    qg_bg_sd_factor: float = 0.05
    qg_ic_perturb_factor: float = 1.0
    qg_inner_max_iter: int = 150
    qg_snapshot_times: tuple = (180, 360, 540)

    # reservoir surrogate experiment
    sur_dim: int = 20
    sur_n_obs: int = 10
    sur_window_steps: int = 9
    sur_every_k: int = 3
    sur_train_steps: int = 40000
    sur_n_reservoir: object = None  # default 50x input dim, capped at 4000
    sur_spectral_radius: float = 0.6
    sur_leak: float = 1.0
    sur_bias: float = 1.0
    sur_input_sd: float = 0.03
    sur_sparsity: float = 0.99
    sur_sigma_u: float = 0.9877
    sur_ridge_lambda: float = 1e-6
    sur_sync_noise_sd: float = 0.001
    sur_bg_sd_factor: float = 0.1

    def merged(self, **overrides):
        clean = {k: v for k, v in overrides.items() if v is not None}
        bad = set(clean) - {f.name for f in dataclasses.fields(self)}
        if bad:
            raise ContractError(f"unknown config keys: {sorted(bad)}")
        return dataclasses.replace(self, **clean)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class SearchSpace:
    """Random-search box for the learning-rate pair (log-uniform alpha,
    uniform decay)."""

    lr_min: float = float(2.718281828459045**-5)
    lr_max: float = 1.0
    decay_min: float = 0.1
    decay_max: float = 0.99
    samples: int = 20

    def __post_init__(self):
        for v in (self.lr_min, self.lr_max, self.decay_min, self.decay_max):
            if not 0.0 < v <= 1.0:
                raise ContractError("bounds must lie in (0, 1]")
        if self.lr_min > self.lr_max or self.decay_min > self.decay_max:
            raise ContractError("min bound exceeds max bound")
        if self.samples < 1:
            raise ContractError("samples must be >= 1")


def load_config(path=None, **overrides):
    """Config from an optional JSON file plus keyword/flag overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ContractError("config file must hold a JSON object")
        cfg = cfg.merged(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in raw.items()})
    return cfg.merged(**overrides)
