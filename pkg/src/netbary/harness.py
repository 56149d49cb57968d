"""Experiment harness: datasets, metrics, orchestration, persistence.

A run is described by a flat config (file of ``key = value`` lines or a
dict), builds its dataset and network schedule, derives solver parameters
from the schedule's spectral bounds, runs the solver, and persists three
artifacts into the output directory:

* ``metrics.csv`` with header ``iteration,objective_gap,consensus,wall_time``
* ``manifest.json`` holding the full config, derived parameters, spectral
  bounds, package version, and a git description of the build
* ``histograms.npy`` with the final per-node barycenter estimates

Runs are deterministic given the config: by default the wall_time column is
written as 0.0 so replaying a manifest reproduces the CSV byte for byte;
set ``measure_walltime = true`` to record solver seconds instead (at the
cost of replayability of that column).
"""

from __future__ import annotations

import csv
import io
import json
import struct
import subprocess
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import adom, entot, netgraph

__all__ = [
    "DELTA_DEFAULT",
    "GaussianSpec",
    "ExperimentConfig",
    "MetricsRow",
    "ExperimentResult",
    "IdxFormatError",
    "gaussian_grid",
    "gen_truncated_gaussian",
    "analytic_barycenter",
    "draw_gaussian_specs",
    "load_mnist",
    "consensus_metric",
    "load_config",
    "run_experiment",
]

DELTA_DEFAULT = 1e-6

CSV_COLUMNS = ["iteration", "objective_gap", "consensus", "wall_time"]

# Default draw ranges for the synthetic Gaussian dataset, on the unit grid.
# These are this harness's own defaults; wider bells keep the entropic blur
# small relative to the bell width at the default gamma.
MEAN_RANGE_DEFAULT = (0.35, 0.65)
STD_RANGE_DEFAULT = (0.15, 0.25)


class IdxFormatError(ValueError):
    """An IDX file violates the format contract."""


@dataclass(frozen=True)
class GaussianSpec:
    """A truncated Gaussian on a fixed support grid."""

    mean: float
    std: float
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.shape[0] < 2:
            raise ValueError(f"grid must be 1-d with >= 2 points, got {grid.shape}")
        if not np.isfinite(grid).all():
            raise ValueError("grid has non-finite entries")
        if self.std <= 0:
            raise ValueError(f"std must be positive, got {self.std}")
        object.__setattr__(self, "grid", grid)


def gaussian_grid(d: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Uniform support grid of d points on [lo, hi]."""
    if d < 2:
        raise ValueError(f"need d >= 2 grid points, got {d}")
    if not hi > lo:
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    return np.linspace(lo, hi, d)


def gen_truncated_gaussian(spec: GaussianSpec, delta: float = DELTA_DEFAULT) -> np.ndarray:
    """Gaussian density sampled on the grid, normalized, then floored."""
    density = np.exp(-((spec.grid - spec.mean) ** 2) / (2.0 * spec.std**2))
    total = density.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("degenerate density: grid too far from the mean")
    return entot.floor_histogram(density / total, delta)


def analytic_barycenter(specs, delta: float = DELTA_DEFAULT) -> np.ndarray:
    """Reference barycenter of Gaussians: average mean, average std.

    All specs must share the same grid; for non-truncated Gaussians the
    squared-Euclidean barycenter is exactly the Gaussian with the averaged
    parameters, and on a grid wide enough for truncation to be negligible
    this discretization inherits that.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one spec")
    grid = specs[0].grid
    for sp in specs[1:]:
        if sp.grid.shape != grid.shape or not np.array_equal(sp.grid, grid):
            raise ValueError("specs must share one support grid")
    mean = sum(sp.mean for sp in specs) / len(specs)
    std = sum(sp.std for sp in specs) / len(specs)
    return gen_truncated_gaussian(GaussianSpec(mean=mean, std=std, grid=grid), delta)


def draw_gaussian_specs(
    m: int,
    grid: np.ndarray,
    seed: int,
    mean_range: tuple[float, float] = MEAN_RANGE_DEFAULT,
    std_range: tuple[float, float] = STD_RANGE_DEFAULT,
) -> list[GaussianSpec]:
    """Seeded uniform draws of means and stds (dataset stream 1; the
    network schedule draws from stream 0 of the same root seed)."""
    rng = np.random.default_rng([seed, 1])
    means = rng.uniform(mean_range[0], mean_range[1], size=m)
    stds = rng.uniform(std_range[0], std_range[1], size=m)
    return [GaussianSpec(mean=float(mu), std=float(s), grid=grid) for mu, s in zip(means, stds)]


def _read_exact(handle, count: int, path: str, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise IdxFormatError(
            f"{path}: truncated while reading {what}: needed {count} bytes, got {len(data)}"
        )
    return data


def _read_idx_images(path: str | Path) -> np.ndarray:
    path = str(path)
    with open(path, "rb") as handle:
        magic = struct.unpack(">I", _read_exact(handle, 4, path, "magic"))[0]
        if magic != 0x00000803:
            raise IdxFormatError(
                f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x00000803"
            )
        count, rows, cols = struct.unpack(">III", _read_exact(handle, 12, path, "header"))
        body = _read_exact(handle, count * rows * cols, path, f"{count} images")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path: str | Path) -> np.ndarray:
    path = str(path)
    with open(path, "rb") as handle:
        magic = struct.unpack(">I", _read_exact(handle, 4, path, "magic"))[0]
        if magic != 0x00000801:
            raise IdxFormatError(
                f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x00000801"
            )
        count = struct.unpack(">I", _read_exact(handle, 4, path, "header"))[0]
        body = _read_exact(handle, count, path, f"{count} labels")
    return np.frombuffer(body, dtype=np.uint8)


def load_mnist(
    images_path: str | Path,
    labels_path: str | Path,
    digit: int,
    count: int,
    delta: float = DELTA_DEFAULT,
) -> tuple[np.ndarray, np.ndarray]:
    """First ``count`` images of ``digit`` as floored histograms, plus the
    normalized squared-Euclidean cost over the pixel grid.

    The files use the IDX encoding: big-endian, magic 0x00000803 for image
    tensors and 0x00000801 for label vectors.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} "
            f"holds {labels.shape[0]} labels"
        )
    picked = images[labels == digit]
    if picked.shape[0] < count:
        raise ValueError(
            f"requested {count} images of digit {digit}, found only {picked.shape[0]}"
        )
    picked = picked[:count].astype(float)
    flat = picked.reshape(count, -1)
    sums = flat.sum(axis=1)
    if (sums <= 0).any():
        # An all-zero image carries no mass; flooring alone defines it.
        flat = np.where(sums[:, None] > 0, flat, 1.0)
        sums = flat.sum(axis=1)
    hists = np.stack(
        [entot.floor_histogram(row / total, delta) for row, total in zip(flat, sums)]
    )
    rows, cols = images.shape[1], images.shape[2]
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    points = np.stack([ii.ravel(), jj.ravel()], axis=1).astype(float)
    return hists, entot.cost_matrix(points, normalize=True)


def consensus_metric(stack: np.ndarray) -> float:
    """Mean over node pairs of squared distances between rows of an (m, d)
    stack; zero iff all rows agree."""
    stack = np.asarray(stack, dtype=float)
    if stack.ndim != 2 or stack.shape[0] < 2:
        raise ValueError(f"need an (m >= 2, d) stack, got shape {stack.shape}")
    return adom.mean_pairwise_sq_dist(stack)


# --------------------------------------------------------------------------
# Configuration


_CONFIG_DEFAULTS = {
    "dataset": "gaussians",
    "m": 10,
    "d": 100,
    "family": "cycle",
    "p": 0.9,
    "epoch_len": None,
    "seed": 0,
    "gamma": 0.01,
    "r": 0.001,
    "n_iters": 1000,
    "record_every": 100,
    "delta": DELTA_DEFAULT,
    "mean_low": MEAN_RANGE_DEFAULT[0],
    "mean_high": MEAN_RANGE_DEFAULT[1],
    "std_low": STD_RANGE_DEFAULT[0],
    "std_high": STD_RANGE_DEFAULT[1],
    "mnist_images": None,
    "mnist_labels": None,
    "digit": 4,
    "measure_walltime": False,
    "out": None,
}

_INT_KEYS = {"m", "d", "seed", "n_iters", "record_every", "digit"}
_FLOAT_KEYS = {"p", "gamma", "r", "delta", "mean_low", "mean_high", "std_low", "std_high"}
_BOOL_KEYS = {"measure_walltime"}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "gaussians"
    m: int = 10
    d: int = 100
    family: str = "cycle"
    p: float = 0.9
    epoch_len: int | None = None
    seed: int = 0
    gamma: float = 0.01
    r: float = 0.001
    n_iters: int = 1000
    record_every: int = 100
    delta: float = DELTA_DEFAULT
    mean_low: float = MEAN_RANGE_DEFAULT[0]
    mean_high: float = MEAN_RANGE_DEFAULT[1]
    std_low: float = STD_RANGE_DEFAULT[0]
    std_high: float = STD_RANGE_DEFAULT[1]
    mnist_images: str | None = None
    mnist_labels: str | None = None
    digit: int = 4
    measure_walltime: bool = False
    out: str | None = None

    def __post_init__(self):
        if self.dataset not in ("gaussians", "mnist"):
            raise ValueError(f"dataset must be 'gaussians' or 'mnist', got {self.dataset!r}")
        if self.dataset == "mnist" and (self.mnist_images is None or self.mnist_labels is None):
            raise ValueError("mnist dataset needs mnist_images and mnist_labels paths")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        merged = dict(_CONFIG_DEFAULTS)
        for key, value in raw.items():
            if key not in merged:
                raise ValueError(f"unknown config key {key!r}")
            if value is not None:
                merged[key] = value
        return cls(**{k: _coerce(k, v) for k, v in merged.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(key: str, value):
    if value is None:
        return None
    if key == "epoch_len":
        if isinstance(value, str):
            if value.lower() in ("static", "none", "inf"):
                return None
            value = int(value)
        return int(value)
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        if isinstance(value, str):
            lowered = value.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(f"cannot parse boolean {key}={value!r}")
        return bool(value)
    return value


def load_config(path: str | Path) -> dict:
    """Parse a flat ``key = value`` config file; '#' starts a comment."""
    raw: dict = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


# --------------------------------------------------------------------------
# Running experiments


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    objective_gap: float
    consensus: float
    wall_time: float


@dataclass(frozen=True)
class ExperimentResult:
    rows: list[MetricsRow]
    histograms: np.ndarray
    manifest: dict
    out_dir: Path | None
    diverged: bool = False


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    if out.returncode != 0:
        return "unknown"
    return out.stdout.strip() or "unknown"


def _build_dataset(cfg: ExperimentConfig):
    """Returns (marginals, cost, reference) where reference is the analytic
    barycenter for Gaussian runs and None otherwise."""
    if cfg.dataset == "gaussians":
        grid = gaussian_grid(cfg.d)
        specs = draw_gaussian_specs(
            cfg.m, grid, cfg.seed,
            mean_range=(cfg.mean_low, cfg.mean_high),
            std_range=(cfg.std_low, cfg.std_high),
        )
        marginals = np.stack([gen_truncated_gaussian(sp, cfg.delta) for sp in specs])
        cost = entot.cost_matrix(grid, normalize=True)
        reference = analytic_barycenter(specs, cfg.delta)
        return marginals, cost, reference
    for path in (cfg.mnist_images, cfg.mnist_labels):
        if not Path(path).exists():
            raise FileNotFoundError(f"mnist file not found: {path}")
    marginals, cost = load_mnist(
        cfg.mnist_images, cfg.mnist_labels, cfg.digit, cfg.m, cfg.delta
    )
    return marginals, cost, None


def _objective(marginals: np.ndarray, cost: np.ndarray, estimates: np.ndarray) -> float:
    """Sum over nodes of the unregularized transport cost to each node's
    own estimate."""
    return sum(
        entot.exact_ot(marginals[i], estimates[i], cost)
        for i in range(marginals.shape[0])
    )


def _rows_from_records(records, marginals, cost, reference, measure_walltime):
    m = marginals.shape[0]
    base = None
    if reference is not None:
        base = sum(entot.exact_ot(marginals[i], reference, cost) for i in range(m))
    rows = []
    for rec in records:
        value = _objective(marginals, cost, rec.recovered) / m
        gap = value if base is None else value - base / m
        rows.append(
            MetricsRow(
                iteration=rec.iteration,
                objective_gap=gap,
                consensus=rec.consensus,
                wall_time=rec.wall_time if measure_walltime else 0.0,
            )
        )
    return rows


def _write_csv(rows, path: Path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(
            [row.iteration, repr(row.objective_gap), repr(row.consensus), repr(row.wall_time)]
        )
    path.write_text(buffer.getvalue())


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one configured experiment end to end.

    Derives step parameters from the schedule's spectral bounds over the
    run's horizon, solves, computes metrics at the recorded iterations
    (transport LPs run only there), and persists CSV, manifest, and final
    histograms under ``cfg.out`` when it is set. On solver divergence the
    partial CSV is still written before the error propagates.
    """
    marginals, cost, reference = _build_dataset(cfg)
    schedule = netgraph.NetworkSchedule(
        family=cfg.family, m=cfg.m, epoch_len=cfg.epoch_len, seed=cfg.seed,
        p=cfg.p if cfg.family in ("erdos_renyi", "mst_of_er") else None,
    )
    bounds = netgraph.spectral_bounds(schedule, cfg.n_iters)
    params = adom.derive_params(cfg.r, cfg.gamma, bounds)
    oracle = entot.wb_dual_oracle(marginals, cost, cfg.gamma)

    manifest = {
        "config": cfg.to_dict(),
        "derived": {
            "alpha": params.alpha,
            "eta": params.eta,
            "theta": params.theta,
            "sigma": params.sigma,
            "tau": params.tau,
            "lambda_min_plus": bounds.lambda_min_plus,
            "lambda_max": bounds.lambda_max,
        },
        "objective_mode": "gap" if reference is not None else "value",
        "csv_columns": CSV_COLUMNS,
        "version": __version__,
        "git": git_describe(),
    }

    out_dir = None
    if cfg.out is not None:
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )

    try:
        traj = adom.run(schedule, oracle, params, cfg.n_iters, cfg.record_every)
    except adom.NumericalDivergenceError as err:
        rows = _rows_from_records(
            err.records, marginals, cost, reference, cfg.measure_walltime
        )
        if out_dir is not None:
            _write_csv(rows, out_dir / "metrics.csv")
        raise

    rows = _rows_from_records(
        traj.records, marginals, cost, reference, cfg.measure_walltime
    )
    final = entot.recover_barycenter(oracle, traj.state.z_g)
    if out_dir is not None:
        _write_csv(rows, out_dir / "metrics.csv")
        np.save(out_dir / "histograms.npy", final)
    return ExperimentResult(
        rows=rows, histograms=final, manifest=manifest, out_dir=out_dir
    )
