"""Nature-run generation, train/validation/transient/test splits, persistence.

File format: a little-endian float64 flat binary (`nature.bin`) plus a JSON
header sidecar (`nature.json`) carrying a magic string, format version, array
shape, model metadata, the seed, split boundaries, and per-component
climatological SDs (computed over the spin-up segment before it is discarded,
and over the retained segment).  The format is bit-exact and language-neutral.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, HeaderError, ShapeError, VersionError
from .models.lorenz96 import L96Model
from .models.qg import QGModel

__all__ = ["DatasetSplit", "Dataset", "generate_nature_run", "save_dataset",
           "load_dataset", "save_array", "load_array", "dataset_dir",
           "L96_DEFAULT_SPLIT", "QG_DEFAULT_SPLIT"]

MAGIC = "VARDA-DATASET"
VERSION = 1

SPLIT_NAMES = ("train", "validation", "transient", "test")

#: Lorenz-96: 14,400 spin-up steps, then 11,000 retained as
#: validation/transient/test = 5,000/1,000/5,000 (no train split needed
#: unless a surrogate is trained on the same system).
L96_DEFAULT_SPLIT = {"train": 0, "validation": 5000, "transient": 1000,
                     "test": 5000}

#: Two-layer QG: 21,900 spin-up steps, then 9,855 retained as
#: validation/transient/test = 1,095/4,380/4,380.
QG_DEFAULT_SPLIT = {"train": 0, "validation": 1095, "transient": 4380,
                    "test": 4380}


@dataclass(frozen=True)
class DatasetSplit:
    """Contiguous, ordered step counts for train/validation/transient/test."""

    train: int
    validation: int
    transient: int
    test: int

    def __post_init__(self):
        for name in SPLIT_NAMES:
            if getattr(self, name) < 0:
                raise ContractError(f"{name} length must be >= 0")
        if self.test == 0 or self.validation == 0:
            raise ContractError("validation and test splits must be non-empty")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(d[k]) for k in SPLIT_NAMES})

    @property
    def total(self):
        return self.train + self.validation + self.transient + self.test

    def ranges(self):
        out = {}
        lo = 0
        for name in SPLIT_NAMES:
            n = getattr(self, name)
            out[name] = (lo, lo + n)
            lo += n
        return out


class Dataset:
    """A nature run with labelled split access.

    Experiments address segments by split name only; raw indexing stays
    internal, which keeps tuning off the test data by construction.
    """

    def __init__(self, values, header):
        self.values = np.ascontiguousarray(values, dtype="<f8")
        self.header = header
        self.split = DatasetSplit.from_dict(header["split"])
        if self.values.shape[0] != self.split.total:
            raise ShapeError(
                f"{self.values.shape[0]} rows but split totals {self.split.total}"
            )

    @property
    def dim(self):
        return self.values.shape[1]

    def segment(self, name):
        """The (length, dim) block for one split label."""
        if name not in SPLIT_NAMES:
            raise ContractError(f"unknown split {name!r}; use one of {SPLIT_NAMES}")
        lo, hi = self.split.ranges()[name]
        return self.values[lo:hi]

    def segment_with_context(self, name, before=0):
        """Split block plus up to ``before`` steps of leading context (e.g.
        transient steps used to synchronize a surrogate before the test)."""
        lo, hi = self.split.ranges()[name]
        lo2 = max(0, lo - before)
        return self.values[lo2:hi], lo - lo2

    @property
    def clim_sd(self):
        return np.asarray(self.header["clim_sd"], dtype=np.float64)

    @property
    def spinup_clim_sd(self):
        return np.asarray(self.header["spinup_clim_sd"], dtype=np.float64)


def _model_metadata(model):
    if isinstance(model, L96Model):
        return {
            "system": "lorenz96",
            "dim": model.dim,
            "dt": model.dt,
            "scheme": model.scheme,
            "forcing": model.params.forcing,
        }
    if isinstance(model, QGModel):
        p = model.params
        return {
            "system": "qg",
            "dim": model.dim,
            "dt": model.dt,
            "scheme": model.scheme,
            "nx": p.nx, "ny": p.ny, "L": p.L, "beta": p.beta, "rek": p.rek,
            "delta": p.delta, "U1": p.U1, "U2": p.U2, "kd2": p.kd2,
        }
    return {"system": type(model).__name__, "dim": model.dim}


def generate_nature_run(model, spinup_steps, split: DatasetSplit, seed,
                        initial_state=None, chunk=5000):
    """Integrate, discard the spin-up, and label the retained steps.

    The spin-up starts from Gaussian noise (SD 1.0) for Lorenz-96 or
    band-limited low-amplitude noise for QG unless ``initial_state`` is given.
    Climatological SDs are recorded over both the spin-up and the retained
    segment before the spin-up is dropped.
    """
    if split.transient == 0:
        import warnings
        warnings.warn("transient split is empty: validation and test are "
                      "adjacent segments", stacklevel=2)
    rng = np.random.default_rng([seed, 1203])
    if initial_state is not None:
        x = np.asarray(initial_state, dtype=np.float64)
    elif isinstance(model, QGModel):
        x = model.random_grid_state(seed=seed)
    else:
        x = rng.normal(0.0, 1.0, model.dim)

    total = spinup_steps + split.total

    spin_sq = np.zeros(model.dim)
    spin_mean = np.zeros(model.dim)
    spin_n = 0
    retained = np.empty((split.total, model.dim))
    written = 0
    step = 0
    while step < total:
        n = min(chunk, total - step)
        traj = model.rollout(x, n)
        x = traj[-1]
        block = np.asarray(traj[:-1])  # states at t = step .. step+n-1
        n_spin = min(n, max(0, spinup_steps - step))
        if n_spin > 0:
            part = block[:n_spin]
            spin_mean += part.sum(axis=0)
            spin_sq += (part**2).sum(axis=0)
            spin_n += n_spin
        if n_spin < n:
            k0 = step + n_spin - spinup_steps
            part = block[n_spin:]
            retained[k0:k0 + part.shape[0]] = part
            written = k0 + part.shape[0]
        step += n
    if written < split.total:
        raise ContractError("generated run shorter than the requested split")

    if spin_n > 1:
        mu = spin_mean / spin_n
        spin_sd = np.sqrt(np.maximum(spin_sq / spin_n - mu**2, 0.0))
    else:
        spin_sd = np.zeros(model.dim)

    header = {
        "magic": MAGIC,
        "version": VERSION,
        "shape": list(retained.shape),
        "dtype": "<f8",
        "seed": int(seed),
        "spinup_steps": int(spinup_steps),
        "split": {k: getattr(split, k) for k in SPLIT_NAMES},
        "clim_sd": retained.std(axis=0).tolist(),
        "spinup_clim_sd": spin_sd.tolist(),
        "model": _model_metadata(model),
    }
    return Dataset(retained, header)


def dataset_dir(root, system, dim, seed):
    return Path(root) / str(system) / str(dim) / str(seed)


def save_dataset(dataset: Dataset, path):
    """Write `nature.bin` + `nature.json` under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(dataset.values, dtype="<f8")
    (path / "nature.bin").write_bytes(arr.tobytes())
    header = dict(dataset.header)
    header["shape"] = list(arr.shape)
    (path / "nature.json").write_text(
        json.dumps(header, indent=1, sort_keys=True)
    )
    return path


def save_array(arr, path, metadata=None):
    """Write one array in the dataset format: `<path>.bin` + `<path>.json`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    Path(str(path) + ".bin").write_bytes(arr.tobytes())
    header = {"magic": MAGIC, "version": VERSION, "shape": list(arr.shape),
              "dtype": "<f8"}
    header.update(metadata or {})
    Path(str(path) + ".json").write_text(json.dumps(header, sort_keys=True))


def load_array(path):
    """Read back an array written by :func:`save_array`."""
    path = Path(path)
    header_file = Path(str(path) + ".json")
    if not header_file.exists():
        raise HeaderError(f"missing header sidecar {header_file}")
    try:
        header = json.loads(header_file.read_text())
    except json.JSONDecodeError as err:
        raise HeaderError(f"unparseable header {header_file}: {err}") from err
    if header.get("magic") != MAGIC:
        raise HeaderError(f"bad magic string in {header_file}")
    if header.get("version") != VERSION:
        raise VersionError(
            f"array version {header.get('version')} != supported {VERSION}"
        )
    shape = tuple(header["shape"])
    raw = Path(str(path) + ".bin").read_bytes()
    if len(raw) != int(np.prod(shape)) * 8:
        raise ShapeError(f"{path}.bin size does not match header shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy(), header


def load_dataset(path):
    """Read a dataset directory; validates magic, version, and payload size."""
    path = Path(path)
    header_file = path / "nature.json"
    bin_file = path / "nature.bin"
    if not header_file.exists():
        raise HeaderError(f"missing header sidecar {header_file}")
    try:
        header = json.loads(header_file.read_text())
    except json.JSONDecodeError as err:
        raise HeaderError(f"unparseable header {header_file}: {err}") from err
    if header.get("magic") != MAGIC:
        raise HeaderError(f"bad magic string in {header_file}")
    if header.get("version") != VERSION:
        raise VersionError(
            f"dataset version {header.get('version')} != supported {VERSION}"
        )
    shape = tuple(header["shape"])
    raw = bin_file.read_bytes() if bin_file.exists() else b""
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise ShapeError(
            f"{bin_file} holds {len(raw)} bytes, header declares {expected}"
        )
    values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return Dataset(values, header)
