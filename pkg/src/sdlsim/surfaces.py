"""Objective surfaces: Ackley, Levy and a GP surrogate of coating experiments.

Every surface is maximized. Ackley and Levy are negated so their global
maximum is exactly 0; the surrogate returns the frozen posterior mean of a
GP fitted to experiment data.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import optimize

from . import gp

log = logging.getLogger(__name__)

ACKLEY_A = 20.0
ACKLEY_B = 0.2
ACKLEY_C = 2.0 * math.pi
ACKLEY_BOUNDS = (-32.768, 32.768)
LEVY_BOUNDS = (-10.0, 10.0)
BENCHMARK_NOISE_STD = 0.5
SDL_NOISE_STD = 2e5
SDL_N_ROWS = 177

SDL_VARIABLES = (
    "dmso_content",
    "precursor_concentration",
    "spray_flow_rate",
    "air_flow_rate",
    "num_passes",
    "spray_height",
    "hotplate_temperature",
)
SDL_BOUNDS = (
    (0.0, 0.3),
    (10.0, 20.0),
    (2.0, 8.0),
    (65.0, 100.0),
    (1.0, 10.0),
    (10.0, 25.0),
    (220.0, 300.0),
)

GLOBAL_MAX_STARTS = 512
GLOBAL_MAX_REFINE = 16


class DomainError(ValueError):
    """Non-finite input to a test function."""


class BoundsError(ValueError):
    """Input outside the surface's box."""


class DatasetError(ValueError):
    """Experiment data could not be ingested."""


class SurfaceKind(str, Enum):
    ACKLEY = "ackley"
    LEVY = "levy"
    SURROGATE = "surrogate"


def _as_finite_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise DomainError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite input {arr!r}")
    return arr


def ackley_raw(x, a: float = ACKLEY_A, b: float = ACKLEY_B, c: float = ACKLEY_C) -> float:
    """Ackley function (minimization form, minimum 0 at the origin)."""
    x = _as_finite_vector(x)
    d = x.size
    # grouped as a*(1 - exp(.)) + (e - exp(.)) so the origin gives exactly 0
    radial = a * (1.0 - np.exp(-b * np.sqrt(np.sum(x * x) / d)))
    cosine = np.exp(1.0) - np.exp(np.sum(np.cos(c * x)) / d)
    return float(radial + cosine)


def levy_raw(x) -> float:
    """Levy function (minimization form, minimum 0 at the all-ones vector).

    For d = 1 the middle sum is empty and only the two end terms remain.
    """
    x = _as_finite_vector(x)
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[0]) ** 2
    wi = w[:-1]
    middle = np.sum((wi - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * wi + 1.0) ** 2))
    wd = w[-1]
    tail = (wd - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * wd) ** 2)
    return float(head + middle + tail)


@dataclass(frozen=True)
class ExperimentDataset:
    x: np.ndarray
    y: np.ndarray
    bounds: tuple
    columns: tuple = ()
    rejected: tuple = ()  # (line number, reason) pairs dropped at ingestion

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if len(x) != len(y):
            raise DatasetError(f"{len(x)} inputs but {len(y)} targets")
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (x.shape[1], 2):
            raise DatasetError(f"bounds shape {b.shape} does not match dim {x.shape[1]}")
        outside = np.any((x < b[:, 0]) | (x > b[:, 1]), axis=1)
        if outside.any():
            raise DatasetError(f"rows {np.flatnonzero(outside).tolist()} lie outside bounds")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class ProblemSurface:
    kind: SurfaceKind
    dim: int
    bounds: tuple
    noise_std: float
    global_max: float
    name: str = ""
    model: gp.GpModel | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if len(self.bounds) != self.dim:
            raise ValueError(f"{len(self.bounds)} bounds for dim {self.dim}")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"invalid bound ({lo}, {hi})")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.kind is SurfaceKind.SURROGATE and self.model is None:
            raise ValueError("surrogate surface needs a fitted model")
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)

    @property
    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)

    def check_bounds(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise BoundsError(f"expected shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError(f"non-finite input {x!r}")
        b = self.bounds_array
        slack = 1e-9 * (b[:, 1] - b[:, 0])
        if np.any(x < b[:, 0] - slack) or np.any(x > b[:, 1] + slack):
            raise BoundsError(f"{x!r} outside bounds {self.bounds}")
        return np.clip(x, b[:, 0], b[:, 1])

    def objective(self, x) -> float:
        return objective(self, x)

    def evaluate_noisy(self, x, rng: np.random.Generator) -> float:
        return evaluate_noisy(self, x, rng)


def objective(surface: ProblemSurface, x) -> float:
    """Noise-free value to maximize."""
    x = surface.check_bounds(x)
    if surface.kind is SurfaceKind.ACKLEY:
        return -ackley_raw(x)
    if surface.kind is SurfaceKind.LEVY:
        return -levy_raw(x)
    mean, _ = gp.posterior(surface.model, gp.normalize(x, surface.bounds))
    return mean


def evaluate_noisy(surface: ProblemSurface, x, rng: np.random.Generator) -> float:
    """Objective plus one Gaussian noise draw from ``rng``.

    Always consumes exactly one normal variate, even when noise_std is 0,
    so the stream position does not depend on the noise level.
    """
    value = objective(surface, x)
    return value + surface.noise_std * rng.standard_normal()


def ackley(dim: int, noise_std: float = BENCHMARK_NOISE_STD) -> ProblemSurface:
    return ProblemSurface(SurfaceKind.ACKLEY, dim, (ACKLEY_BOUNDS,) * dim, noise_std, 0.0)


def levy(dim: int, noise_std: float = BENCHMARK_NOISE_STD) -> ProblemSurface:
    return ProblemSurface(SurfaceKind.LEVY, dim, (LEVY_BOUNDS,) * dim, noise_std, 0.0)


def _standin_response(u: np.ndarray) -> np.ndarray:
    # smooth unimodal-plus-ripple response on the unit cube, conductivity-like scale
    centre = np.array([0.35, 0.6, 0.4, 0.7, 0.55, 0.3, 0.65])
    width = np.array([3.0, 2.0, 4.0, 1.5, 2.5, 3.0, 2.0])
    bump = np.exp(-np.sum(width * (u - centre) ** 2, axis=-1))
    ripple = np.cos(2.5 * u[..., 0] + 1.5 * u[..., 6]) * np.sin(2.0 * u[..., 2] + 1.0)
    return 1.0e6 + 4.0e6 * bump + 6.0e5 * ripple


def synthetic_sdl_standin(seed: int = 0, n_rows: int = SDL_N_ROWS,
                          noise_std: float = SDL_NOISE_STD) -> ExperimentDataset:
    """Deterministic 7-D stand-in for the unpublished coating dataset."""
    rng = np.random.default_rng(seed)
    u = rng.random((n_rows, len(SDL_BOUNDS)))
    x = gp.unnormalize(u, SDL_BOUNDS)
    x = np.clip(x, np.asarray(SDL_BOUNDS)[:, 0], np.asarray(SDL_BOUNDS)[:, 1])
    y = _standin_response(u) + noise_std * rng.standard_normal(n_rows)
    return ExperimentDataset(x, y, SDL_BOUNDS, SDL_VARIABLES)


def load_dataset(path, bounds=SDL_BOUNDS) -> ExperimentDataset:
    """Read ``path``: a header row, d input columns, then one target column.

    Rows that fail to parse, are non-finite or lie outside ``bounds`` are
    dropped and reported (logged and kept in ``dataset.rejected``).
    """
    path = Path(path)
    bounds = tuple(tuple(float(v) for v in b) for b in bounds)
    d = len(bounds)
    b = np.asarray(bounds)
    xs, ys, rejected = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(header) != d + 1:
            raise DatasetError(
                f"{path}:1: header has {len(header)} columns, expected {d} inputs + 1 target"
            )
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                rejected.append((line, f"expected {d + 1} fields, got {len(row)}"))
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                rejected.append((line, str(exc)))
                continue
            if not all(math.isfinite(v) for v in vals):
                rejected.append((line, "non-finite value"))
                continue
            xv = np.array(vals[:d])
            if np.any(xv < b[:, 0]) or np.any(xv > b[:, 1]):
                rejected.append((line, "input outside bounds"))
                continue
            xs.append(xv)
            ys.append(vals[d])
    for line, reason in rejected:
        log.warning("%s:%d rejected: %s", path, line, reason)
    if not xs:
        raise DatasetError(f"{path}: no valid rows ({len(rejected)} rejected)")
    return ExperimentDataset(np.array(xs), np.array(ys), bounds, tuple(header[:d]),
                             tuple(rejected))


def write_dataset(dataset: ExperimentDataset, path) -> None:
    columns = list(dataset.columns) or [f"x{i}" for i in range(dataset.dim)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns + ["y"])
        for xv, yv in zip(dataset.x, dataset.y):
            w.writerow([repr(float(v)) for v in xv] + [repr(float(yv))])


def maximize_posterior_mean(model: gp.GpModel, seed: int = 0,
                            n_starts: int = GLOBAL_MAX_STARTS,
                            n_refine: int = GLOBAL_MAX_REFINE) -> tuple[np.ndarray, float]:
    """Multi-start maximization of the posterior mean over the unit cube.

    All ``n_starts`` random points are scored; the best ``n_refine`` are
    polished with bounded Nelder-Mead.
    """
    rng = np.random.default_rng(seed)
    starts = rng.random((n_starts, model.dim))
    values, _ = gp.posterior(model, starts)
    order = np.argsort(-values, kind="stable")[:n_refine]
    best_u, best_val = starts[order[0]], float(values[order[0]])

    def neg_mean(u):
        return -gp.posterior(model, np.clip(u, 0.0, 1.0))[0]

    for i in order:
        res = optimize.minimize(neg_mean, starts[i], method="Nelder-Mead",
                                bounds=[(0.0, 1.0)] * model.dim,
                                options={"xatol": 1e-6, "fatol": 1e-9 * max(1.0, abs(best_val)),
                                         "maxiter": 400 * model.dim})
        if -res.fun > best_val:
            best_u, best_val = np.clip(res.x, 0.0, 1.0), float(-res.fun)
    return best_u, best_val


def fit_surrogate_surface(data: ExperimentDataset, noise_variance: float,
                          noise_std: float = SDL_NOISE_STD, seed: int = 0,
                          name: str = "sdl") -> ProblemSurface:
    """Fit a GP to ``data`` with fixed noise and freeze its mean as an objective."""
    if len(data) < 1:
        raise DatasetError("cannot fit a surrogate to an empty dataset")
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")
    u = gp.normalize(data.x, data.bounds)
    model = gp.fit(u, data.y, gp.NoiseMode.fixed_value(noise_variance), seed=seed)
    _, gmax = maximize_posterior_mean(model, seed=seed)
    return ProblemSurface(SurfaceKind.SURROGATE, data.dim, tuple(map(tuple, data.bounds)),
                          noise_std, gmax, name=name, model=model)
