"""Experiment drivers: dataset management, trial fan-out, result emission.

Output layout under ``<out_dir>/<experiment>/``:

* ``<method>/trial_<i>.json``  per-trial metrics (includes the cell/config),
* ``summary.csv``              aggregated rows,
* ``fields/<t>`` (+.bin/.json) gridded snapshots for the QG runs.

Within a trial every method receives bitwise-identical inputs: networks,
noise, and the initial perturbation derive from the trial seed only.  Reruns
from the same config and seed reproduce every metric file except the
wall-time fields.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import data as data_mod
from ..assim import CycleConfig, LrSchedule, cycle_da
from ..errors import ContractError, DatasetError
from ..metrics import normal_ci_halfwidth, paired_t_test
from ..models import profiles
from ..obsgen import draw_network, perturb_ic, sample_obs
from ..surrogate import (
    ReservoirSpec,
    build_reservoir,
    forecast,
    synchronize,
    train_readout,
)
from .config import ExperimentConfig, SearchSpace

__all__ = ["ensure_l96_dataset", "ensure_qg_dataset", "run_heatmap",
           "run_scaling", "run_qg", "run_surrogate", "tune_lr",
           "cycle_reservoir_da", "write_report"]


def _mix(*parts):
    h = 17
    for p in parts:
        h = (h * 1000003 + int(p)) % (2**31 - 1)
    return h


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def _write_csv(path, rows, fieldnames):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _trial_payload(experiment, method, trial, seed, result, extra):
    payload = {
        "experiment": experiment,
        "method": method,
        "trial": int(trial),
        "seed": int(seed),
        "aggregate_rmse": float(result.aggregate_rmse),
        "rmse_series": [round(float(v), 12) for v in result.rmse_series],
        "diverged_windows": int(result.diverged_windows),
        "wall_time_s": float(result.wall_time_s),
    }
    payload.update(extra)
    return payload


# --- datasets -----------------------------------------------------------------

def ensure_l96_dataset(dim, seed, root="data", split=None, spinup=14400,
                       linearization="dense"):
    """Load the Lorenz-96 dataset for (dim, seed), generating it if missing."""
    split = split or data_mod.DatasetSplit.from_dict(data_mod.L96_DEFAULT_SPLIT)
    path = data_mod.dataset_dir(root, "lorenz96", dim, seed)
    try:
        ds = data_mod.load_dataset(path)
    except DatasetError:
        model = profiles.lorenz96_model(dim, linearization=linearization)
        ds = data_mod.generate_nature_run(model, spinup, split, seed)
        data_mod.save_dataset(ds, path)
    return ds


def ensure_qg_dataset(dim, seed, root="data", profile="two-layer-default",
                      spinup=21900):
    """QG dataset for a gridded dimension in {512, 1152, 2048, 8192}."""
    base = dict(data_mod.QG_DEFAULT_SPLIT)
    if dim >= 8192:
        base["test"] = 1095  # shorter test period at the largest size
    split = data_mod.DatasetSplit.from_dict(base)
    path = data_mod.dataset_dir(root, "qg", dim, seed)
    try:
        ds = data_mod.load_dataset(path)
    except DatasetError:
        model = profiles.qg_model_for_dim(dim, profile=profile)
        ds = data_mod.generate_nature_run(model, spinup, split, seed)
        data_mod.save_dataset(ds, path)
    return ds


# --- Lorenz-96 trial unit (picklable for the worker pool) -----------------------

def _l96_trial(args):
    """One paired trial: every requested method on identical inputs."""
    cfg = ExperimentConfig(**args["cfg"])
    nature = args["nature"]
    dim = args["dim"]
    n_obs = args["n_obs"]
    noise = args["noise"]
    trial_seed = args["trial_seed"]
    model = profiles.lorenz96_model(dim)
    net = draw_network(dim, n_obs, seed=trial_seed, every_k=cfg.every_k,
                       noise_sd=noise)
    cycle = CycleConfig(
        model=model, network=net, window_steps=cfg.window_steps,
        n_windows=args["n_windows"], sigma_obs=cfg.obs_sd_factor * noise,
        sigma_bg=noise / cfg.bg_sd_divisor, seed=trial_seed,
        start=args.get("start", 0), ic_perturb_sd=cfg.ic_perturb_sd,
        include_t0=cfg.include_t0, outer_loops=cfg.outer_loops,
        lr=LrSchedule(cfg.lr_alpha, cfg.lr_decay), inner_tol=cfg.inner_tol,
        inner_max_iter=cfg.inner_max_iter,
    )
    out = {}
    for method in args["methods"]:
        res = cycle_da(nature, method, cycle)
        out[method] = {
            "aggregate_rmse": float(res.aggregate_rmse),
            "rmse_series": res.rmse_series,
            "wall_time_s": float(res.wall_time_s),
            "diverged_windows": int(res.diverged_windows),
        }
    return out


def _run_trials(trial_args, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_l96_trial, trial_args))
    return [_l96_trial(a) for a in trial_args]


# --- heatmap: observation coverage x observation noise --------------------------

def run_heatmap(cfg: ExperimentConfig, obs_counts=None, noise_levels=None):
    """Grid over obs count x noise SD on the 36D system; paired trials per
    cell with mean RMSEs, normalized differences, and paired t-tests."""
    obs_counts = list(obs_counts or cfg.obs_counts)
    noise_levels = list(noise_levels or cfg.noise_levels)
    trials = 3 if cfg.quick else cfg.trials
    n_windows = 20 if cfg.quick else cfg.n_windows
    ds = ensure_l96_dataset(cfg.dim, cfg.seed, cfg.data_root)
    test = ds.segment("test")
    if n_windows * cfg.window_steps + 1 > len(test):
        raise ContractError("test split too short for the requested windows")
    methods = list(cfg.methods)
    out_root = Path(cfg.out_dir) / "heatmap"
    rows = []
    trial_index = 0
    for oi, n_obs in enumerate(obs_counts):
        for ni, noise in enumerate(noise_levels):
            args = [
                {
                    "cfg": cfg.to_dict(), "nature": test, "dim": cfg.dim,
                    "n_obs": n_obs, "noise": noise, "methods": methods,
                    "n_windows": n_windows,
                    "trial_seed": _mix(cfg.seed, oi, ni, t),
                }
                for t in range(trials)
            ]
            results = _run_trials(args, cfg.workers)
            cell = {"n_obs": n_obs, "noise_sd": noise}
            per_method = {m: np.array([r[m]["aggregate_rmse"] for r in results])
                          for m in methods}
            for t, r in enumerate(results):
                for m in methods:
                    payload = {
                        "experiment": "heatmap", "method": m,
                        "trial": t, "seed": args[t]["trial_seed"],
                        "cell": cell,
                        "aggregate_rmse": r[m]["aggregate_rmse"],
                        "diverged_windows": r[m]["diverged_windows"],
                        "wall_time_s": r[m]["wall_time_s"],
                    }
                    _write_json(out_root / m / f"trial_{trial_index + t}.json",
                                payload)
            trial_index += trials
            row = dict(cell)
            for m in methods:
                row[f"rmse_{m}"] = float(per_method[m].mean())
                row[f"rmse_sd_{m}"] = float(per_method[m].std(ddof=1)) if trials > 1 else 0.0
            if "incremental" in per_method and "backprop-approx" in per_method:
                inc = per_method["incremental"]
                bp = per_method["backprop-approx"]
                row["mean_norm_diff"] = float(np.mean((inc - bp) / inc))
                tt = paired_t_test(bp, inc, alpha=cfg.t_test_alpha)
                row["t_stat"] = tt.t
                row["p_value"] = tt.p
                row["significant"] = tt.significant
            rows.append(row)
    fieldnames = list(rows[0].keys())
    _write_csv(out_root / "summary.csv", rows, fieldnames)
    _write_json(out_root / "config.json", cfg.to_dict())
    return rows


# --- runtime/accuracy scaling with system dimension -----------------------------

def run_scaling(cfg: ExperimentConfig, dims=None):
    """Mean wall time and RMSE per method while the state dimension grows;
    observations at half the grid points every 5th step, noise 0.5."""
    dims = list(dims or cfg.dims)
    trials = 3 if cfg.quick else cfg.trials
    n_windows = 10 if cfg.quick else min(cfg.n_windows, 40)
    methods = list(cfg.methods)
    out_root = Path(cfg.out_dir) / "scaling"
    rows = []
    times = {m: [] for m in methods}
    trial_index = 0
    for di, dim in enumerate(dims):
        ds = ensure_l96_dataset(dim, cfg.seed, cfg.data_root)
        test = ds.segment("test")
        args = [
            {
                "cfg": cfg.to_dict(), "nature": test, "dim": dim,
                "n_obs": max(1, dim // 2), "noise": cfg.noise_sd,
                "methods": methods, "n_windows": n_windows,
                "trial_seed": _mix(cfg.seed, 101 + di, t),
            }
            for t in range(trials)
        ]
        results = _run_trials(args, cfg.workers)
        for t, r in enumerate(results):
            for m in methods:
                payload = {
                    "experiment": "scaling", "method": m, "trial": t,
                    "seed": args[t]["trial_seed"], "dim": dim,
                    "aggregate_rmse": r[m]["aggregate_rmse"],
                    "diverged_windows": r[m]["diverged_windows"],
                    "wall_time_s": r[m]["wall_time_s"],
                }
                _write_json(out_root / m / f"trial_{trial_index + t}.json",
                            payload)
        trial_index += trials
        row = {"dim": dim}
        for m in methods:
            rmses = np.array([r[m]["aggregate_rmse"] for r in results])
            walls = np.array([r[m]["wall_time_s"] for r in results])
            times[m].append(walls.mean())
            row[f"rmse_{m}"] = float(rmses.mean())
            row[f"rmse_ci95_{m}"] = normal_ci_halfwidth(rmses)
            row[f"time_{m}"] = float(walls.mean())
            row[f"time_ci95_{m}"] = normal_ci_halfwidth(walls)
        rows.append(row)
    slopes = {}
    if len(dims) >= 2:
        logd = np.log(np.asarray(dims, dtype=float))
        for m in methods:
            slopes[m] = float(np.polyfit(logd, np.log(times[m]), 1)[0])
    _write_csv(out_root / "summary.csv", rows, list(rows[0].keys()))
    _write_json(out_root / "slopes.json",
                {"slopes": slopes, "dims": dims, "trials": trials})
    _write_json(out_root / "config.json", cfg.to_dict())
    return rows, slopes


# --- QG assimilation -------------------------------------------------------------

def run_qg(cfg: ExperimentConfig, dim=None, methods=None, n_windows=None,
           store_fields=True):
    """Cycled DA on the two-layer QG system at one gridded dimension."""
    dim = dim or (512 if cfg.system != "qg" else cfg.dim)
    explicit = methods is not None
    if methods is None:
        methods = ["none", "incremental", "backprop-approx", "backprop-exact"]
    methods = list(methods)
    if "backprop-exact" in methods and dim > cfg.exact_hessian_max_dim:
        if explicit:
            raise ContractError(
                f"backprop-exact requested at dim {dim} but the dense-Hessian "
                f"cap is {cfg.exact_hessian_max_dim}; the full Hessian would "
                f"be {dim}x{dim}. Raise exact_hessian_max_dim to override."
            )
        methods.remove("backprop-exact")

    ds = ensure_qg_dataset(dim, cfg.seed, cfg.data_root, profile=cfg.qg_profile)
    test = ds.segment("test")
    clim = ds.spinup_clim_sd
    w = cfg.qg_window_steps
    max_windows = (len(test) - 1) // w
    if n_windows is None:
        n_windows = min(166, max_windows)
    if cfg.quick:
        n_windows = min(10, max_windows)
    n_windows = min(n_windows, max_windows)

    model = profiles.qg_model_for_dim(dim, profile=cfg.qg_profile)
    net = draw_network(dim, dim // 2, seed=_mix(cfg.seed, 7001),
                       every_k=cfg.qg_every_k,
                       noise_sd=cfg.qg_noise_factor * clim)
    out_root = Path(cfg.out_dir) / f"qg{dim}"
    rows = []
    snapshot_steps = [t for t in cfg.qg_snapshot_times if t <= n_windows * w]
    exact_windows = min(n_windows, 20)

    for method in methods:
        nw = exact_windows if method == "backprop-exact" else n_windows
        cycle = CycleConfig(
            model=model, network=net, window_steps=w, n_windows=nw,
            sigma_obs=cfg.qg_obs_sd_factor * clim,
            sigma_bg=cfg.qg_bg_sd_factor * clim,
            seed=_mix(cfg.seed, 7001), ic_perturb_sd=cfg.qg_ic_perturb_factor * clim,
            include_t0=cfg.include_t0, outer_loops=cfg.outer_loops,
            lr=LrSchedule(cfg.lr_alpha, cfg.lr_decay),
            inner_tol=cfg.inner_tol, inner_max_iter=cfg.qg_inner_max_iter,
            hessian_max_dim=max(cfg.exact_hessian_max_dim, dim),
            store_estimates=store_fields,
        )
        res = cycle_da(test, method, cycle)
        payload = _trial_payload(f"qg{dim}", method, 0, cycle.seed, res,
                                 {"dim": dim, "n_windows": nw})
        _write_json(out_root / method / "trial_0.json", payload)
        if store_fields and res.estimates is not None:
            for t in snapshot_steps:
                if t < len(res.estimates):
                    data_mod.save_array(
                        res.estimates[t].reshape(model.field_shape),
                        out_root / "fields" / f"{method}_{t}",
                        metadata={"method": method, "step": int(t)},
                    )
        if method == "none" and store_fields:
            for t in snapshot_steps:
                data_mod.save_array(
                    test[t].reshape(model.field_shape),
                    out_root / "fields" / f"nature_{t}",
                    metadata={"method": "nature", "step": int(t)},
                )
        rows.append({
            "dim": dim, "method": method, "n_windows": nw,
            "aggregate_rmse": float(res.aggregate_rmse),
            "rmse_over_clim": float(res.aggregate_rmse / clim.mean()),
            "wall_time_s": float(res.wall_time_s),
            "diverged_windows": int(res.diverged_windows),
        })
    _write_csv(out_root / "summary.csv", rows, list(rows[0].keys()))
    _write_json(out_root / "config.json", cfg.to_dict())
    return rows


# --- reservoir-space assimilation -------------------------------------------------

def cycle_reservoir_da(model, nature_segment, net, window_steps, n_windows,
                       r0, lr, iterations=3, include_t0=False,
                       bg_sd_factor=0.1, obs_sd=None):
    """Cycled assimilation with the reservoir as forecast model.

    The control state is the reservoir vector; observations (physical space)
    are standardized inside the window problem.  Returns the physical-space
    reconstruction, its RMSE series, and per-window divergence count.
    """
    from ..assim.methods import backprop_4dvar
    from ..assim.problem import GaussianDiagSpec
    from ..errors import DivergenceError
    from ..metrics import rmse as rmse_fn
    from ..surrogate import ReservoirForecastModel, reservoir_window_problem

    steps_total = n_windows * window_steps
    truth = np.asarray(nature_segment[: steps_total + 1])
    handle = ReservoirForecastModel(model)
    recon = np.empty((steps_total + 1, model.input_dim))
    r_bg = np.asarray(r0, dtype=np.float64)
    diverged = 0
    import time as _time
    wall = 0.0
    for wi in range(n_windows):
        start = wi * window_steps
        batch = sample_obs(nature_segment, net, (start, window_steps),
                           include_t0=include_t0)
        if obs_sd is not None:
            sd = np.asarray(obs_sd, dtype=np.float64)
            sd_obs = sd[net.indices] if sd.ndim else np.full(net.indices.size, sd)
            batch = batch.with_noise(GaussianDiagSpec.from_sd(sd_obs))
        prob = reservoir_window_problem(model, r_bg, batch,
                                        window_steps=window_steps,
                                        background_sd_factor=bg_sd_factor)
        t0 = _time.perf_counter()
        try:
            res = backprop_4dvar(prob, iterations=iterations, lr=lr,
                                 hessian_mode="approximate", record_cost=False)
            analysis = res.analysis
        except DivergenceError:
            diverged += 1
            analysis = r_bg
        wall += _time.perf_counter() - t0
        traj = handle.rollout(analysis, window_steps)
        for j in range(window_steps + 1):
            recon[start + j] = model.readout_physical(traj[j])
        r_bg = traj[-1]
    series, aggregate = rmse_fn(recon, truth)
    return {
        "reconstruction": recon, "truth": truth, "rmse_series": series,
        "aggregate_rmse": aggregate, "diverged_windows": diverged,
        "wall_time_s": wall,
    }


def run_surrogate(cfg: ExperimentConfig):
    """Train the reservoir surrogate on Lorenz-96 data, then compare a free
    closed-loop run against reservoir-space assimilation on the test split."""
    dim = cfg.sur_dim
    split = data_mod.DatasetSplit(
        train=cfg.sur_train_steps if not cfg.quick else 20000,
        validation=2000, transient=1000, test=5000,
    )
    path = data_mod.dataset_dir(cfg.data_root, "lorenz96-sur", dim, cfg.seed)
    try:
        ds = data_mod.load_dataset(path)
    except DatasetError:
        model_l96 = profiles.lorenz96_model(dim)
        ds = data_mod.generate_nature_run(model_l96, 14400, split, cfg.seed)
        data_mod.save_dataset(ds, path)

    train = ds.segment("train")
    clim_sd = train.std(axis=0)
    n_r = cfg.sur_n_reservoir or min(50 * dim, 4000)
    spec = ReservoirSpec(
        n_reservoir=int(n_r), sparsity=cfg.sur_sparsity,
        spectral_radius=cfg.sur_spectral_radius, sigma_u=cfg.sur_sigma_u,
        leak=cfg.sur_leak, bias=cfg.sur_bias, input_sd=cfg.sur_input_sd,
        ridge_lambda=cfg.sur_ridge_lambda, seed=_mix(cfg.seed, 4242),
    )
    model = build_reservoir(spec, dim)
    _, train_report = train_readout(model, train[:-1], train[1:])

    # synchronize on the transient split with perturbed inputs
    transient = ds.segment("transient")
    rng = np.random.default_rng([cfg.seed, 515])
    sync_in = transient + cfg.sur_sync_noise_sd * rng.standard_normal(
        transient.shape
    )
    r0 = synchronize(model, sync_in)

    test = ds.segment("test")
    w = cfg.sur_window_steps
    n_windows = (len(test) - 1) // w
    if cfg.quick:
        n_windows = min(30, n_windows)
    steps_total = n_windows * w

    free = forecast(model, r0, steps_total)
    from ..metrics import rmse as rmse_fn
    free_series, free_aggregate = rmse_fn(free, test[: steps_total + 1])

    net = draw_network(dim, cfg.sur_n_obs, seed=_mix(cfg.seed, 616),
                       every_k=cfg.sur_every_k,
                       noise_sd=0.10 * clim_sd)
    da = cycle_reservoir_da(
        model, test, net, window_steps=w, n_windows=n_windows, r0=r0,
        lr=LrSchedule(cfg.lr_alpha, cfg.lr_decay), iterations=cfg.outer_loops,
        include_t0=cfg.include_t0, bg_sd_factor=cfg.sur_bg_sd_factor,
        obs_sd=0.125 * clim_sd,
    )

    observed = np.zeros(dim, dtype=bool)
    observed[net.indices] = True
    truth = test[: steps_total + 1]

    def _sub_rmse(recon, mask):
        return float(np.sqrt(np.mean((recon[:, mask] - truth[:, mask]) ** 2)))

    out_root = Path(cfg.out_dir) / "surrogate"
    summary = {
        "dim": dim, "n_reservoir": int(n_r), "n_windows": n_windows,
        "train_rmse_normalized": train_report["train_rmse_normalized"],
        "free_rmse": float(free_aggregate),
        "da_rmse": float(da["aggregate_rmse"]),
        "free_rmse_observed": _sub_rmse(free, observed),
        "da_rmse_observed": _sub_rmse(da["reconstruction"], observed),
        "free_rmse_unobserved": _sub_rmse(free, ~observed),
        "da_rmse_unobserved": _sub_rmse(da["reconstruction"], ~observed),
        "clim_sd_mean": float(clim_sd.mean()),
        "diverged_windows": int(da["diverged_windows"]),
        "wall_time_s": float(da["wall_time_s"]),
        "observed_indices": [int(i) for i in net.indices],
    }
    _write_json(out_root / "summary.json", summary)
    data_mod.save_array(da["reconstruction"], out_root / "fields" / "da_recon")
    data_mod.save_array(free, out_root / "fields" / "free_run")
    data_mod.save_array(truth, out_root / "fields" / "truth")
    _write_json(out_root / "config.json", cfg.to_dict())
    return summary


# --- learning-rate search ----------------------------------------------------------

def tune_lr(space: SearchSpace, cfg: ExperimentConfig, trials_per_sample=3,
            n_windows=30):
    """Random search (log-uniform alpha, uniform decay) minimizing mean
    validation RMSE of the approximate-Hessian method; the chosen pair is then
    frozen for the test period."""
    ds = ensure_l96_dataset(cfg.dim, cfg.seed, cfg.data_root)
    val = ds.segment("validation")
    n_windows = min(n_windows, (len(val) - 1) // cfg.window_steps)
    model = profiles.lorenz96_model(cfg.dim)
    rng = np.random.default_rng([cfg.seed, 321])
    trace = []
    best = None
    for s in range(space.samples):
        alpha = float(np.exp(rng.uniform(np.log(space.lr_min),
                                         np.log(space.lr_max))))
        decay = float(rng.uniform(space.decay_min, space.decay_max))
        rmses = []
        diverged = 0
        for t in range(trials_per_sample):
            seed = _mix(cfg.seed, 900 + s, t)
            net = draw_network(cfg.dim, max(1, cfg.dim // 2), seed=seed,
                               every_k=cfg.every_k, noise_sd=cfg.noise_sd)
            cycle = CycleConfig(
                model=model, network=net, window_steps=cfg.window_steps,
                n_windows=n_windows, sigma_obs=cfg.obs_sd_factor * cfg.noise_sd,
                sigma_bg=cfg.noise_sd / cfg.bg_sd_divisor, seed=seed,
                ic_perturb_sd=cfg.ic_perturb_sd, include_t0=cfg.include_t0,
                outer_loops=cfg.outer_loops, lr=LrSchedule(alpha, decay),
            )
            try:
                res = cycle_da(val, "backprop-approx", cycle)
                rmses.append(res.aggregate_rmse)
                diverged += res.diverged_windows
            except Exception:
                diverged += n_windows
        mean_rmse = float(np.mean(rmses)) if rmses else math.inf
        trace.append({"sample": s, "alpha": alpha, "decay": decay,
                      "mean_rmse": mean_rmse, "diverged": diverged})
        if best is None or mean_rmse < best["mean_rmse"]:
            best = trace[-1]
    if not math.isfinite(best["mean_rmse"]):
        raise ContractError(
            "every learning-rate sample diverged; narrow the search space"
        )
    out_root = Path(cfg.out_dir) / "tune"
    _write_csv(out_root / "trace.csv", trace, list(trace[0].keys()))
    _write_json(out_root / "best.json", best)
    return best["alpha"], best["decay"], trace


# --- consolidated reporting ---------------------------------------------------------

def write_report(results_root, out_path=None):
    """Walk a results tree and emit one consolidated CSV of trial metrics."""
    results_root = Path(results_root)
    rows = []
    for trial_file in sorted(results_root.glob("**/trial_*.json")):
        payload = json.loads(trial_file.read_text())
        rows.append({
            "experiment": payload.get("experiment", trial_file.parent.parent.name),
            "method": payload.get("method", trial_file.parent.name),
            "trial": payload.get("trial", 0),
            "dim": payload.get("dim", payload.get("cell", {}).get("n_obs", "")),
            "aggregate_rmse": payload.get("aggregate_rmse", ""),
            "wall_time_s": payload.get("wall_time_s", ""),
            "diverged_windows": payload.get("diverged_windows", ""),
            "path": str(trial_file.relative_to(results_root)),
        })
    out_path = Path(out_path or (results_root / "report.csv"))
    if rows:
        _write_csv(out_path, rows, list(rows[0].keys()))
    return rows
