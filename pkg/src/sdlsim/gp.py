"""Gaussian-process regression with an ARD Matern-5/2 kernel.

Inputs are expected on the unit cube (see :func:`normalize`); targets are
standardized internally and every public prediction is returned in the
original objective units. Hyperparameters live in standardized units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

log = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)

LENGTHSCALE_BOUNDS = (1e-3, 1e3)
VARIANCE_BOUNDS = (1e-6, 1e6)
N_STARTS = 8

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class GPFitError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized even with jitter."""


@dataclass(frozen=True)
class Hyperparams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def to_dict(self) -> dict:
        return {
            "lengthscales": [float(v) for v in self.lengthscales],
            "signal_variance": float(self.signal_variance),
            "noise_variance": float(self.noise_variance),
        }


@dataclass(frozen=True)
class NoiseMode:
    """Either a fixed noise variance (objective units) or a learned one."""

    fixed: float | None = None

    @classmethod
    def learned(cls) -> "NoiseMode":
        return cls(None)

    @classmethod
    def fixed_value(cls, value: float) -> "NoiseMode":
        if not value >= 0:
            raise ValueError(f"fixed noise variance must be >= 0, got {value}")
        return cls(float(value))

    @property
    def is_learned(self) -> bool:
        return self.fixed is None


def normalize(x, bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    return (np.asarray(x, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])


def unnormalize(u, bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    return b[:, 0] + np.asarray(u, dtype=float) * (b[:, 1] - b[:, 0])


def matern52(x1, x2, lengthscales, signal_variance) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``x1`` and ``x2``."""
    a = np.atleast_2d(x1) / lengthscales
    b = np.atleast_2d(x2) / lengthscales
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    r = np.sqrt(np.maximum(sq, 0.0))
    return signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def _matern52_with_grads(x, lengthscales, signal_variance):
    # K and dK/dlog(lengthscale_i) for every i; the signal derivative is K itself
    diff = (x[:, None, :] - x[None, :, :]) / lengthscales
    d2 = diff * diff
    r = np.sqrt(d2.sum(-1))
    e = np.exp(-SQRT5 * r)
    k = signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * e
    common = signal_variance * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
    dls = common[:, :, None] * d2
    return k, dls


def robust_cholesky(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a``, escalating diagonal jitter on failure.

    Returns the factor and the absolute jitter that was added (0.0 if none).
    """
    try:
        return linalg.cholesky(a, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(a))) if a.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            chol = linalg.cholesky(a + jitter * np.eye(len(a)), lower=True, check_finite=False)
            return chol, jitter
        except linalg.LinAlgError:
            rel *= 10.0
    cond = np.linalg.cond(a)
    raise GPFitError(
        f"kernel matrix not positive definite after jitter {JITTER_MAX:g}*mean(diag) "
        f"(n={len(a)}, mean diag={scale:.3g}, condition number={cond:.3g})"
    )


@dataclass(frozen=True)
class GpModel:
    """A trained GP. Immutable; use :func:`fantasize` to condition further."""

    train_x: np.ndarray
    train_y: np.ndarray  # standardized
    hyperparams: Hyperparams
    y_mean: float = 0.0
    y_std: float = 1.0
    chol: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)
    jitter: float = 0.0
    n_fantasies: int = 0
    start_mlls: tuple = ()  # log evidence at each multi-start initialization

    @property
    def n(self) -> int:
        return len(self.train_y)

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def observed_y(self) -> np.ndarray:
        """Training targets in objective units."""
        return self.y_mean + self.y_std * self.train_y

    def kernel(self, x1, x2) -> np.ndarray:
        hp = self.hyperparams
        return matern52(x1, x2, hp.lengthscales, hp.signal_variance)

    def standardized_posterior(self, x):
        """Latent mean and variance in standardized units for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        kxs = self.kernel(x, self.train_x)
        mean = kxs @ self.alpha
        v = linalg.solve_triangular(self.chol, kxs.T, lower=True, check_finite=False)
        var = self.hyperparams.signal_variance - (v * v).sum(0)
        bad = var < -1e-10
        if bad.any():
            _CLAMP_EVENTS[0] += int(bad.sum())
            log.warning("clamped %d negative posterior variances", int(bad.sum()))
        return mean, np.maximum(var, 0.0)


_CLAMP_EVENTS = [0]


def clamp_events() -> int:
    """Number of posterior variances clamped to zero in this process."""
    return _CLAMP_EVENTS[0]


def build_model(train_x, train_y_std, hyperparams: Hyperparams, y_mean=0.0, y_std=1.0,
                n_fantasies=0) -> GpModel:
    """Factorize and cache a model for fixed hyperparameters (standardized targets)."""
    train_x = np.atleast_2d(np.asarray(train_x, dtype=float))
    train_y_std = np.asarray(train_y_std, dtype=float).ravel()
    k = matern52(train_x, train_x, hyperparams.lengthscales, hyperparams.signal_variance)
    k[np.diag_indices_from(k)] += hyperparams.noise_variance
    chol, jitter = robust_cholesky(k)
    alpha = linalg.cho_solve((chol, True), train_y_std, check_finite=False)
    return GpModel(train_x, train_y_std, hyperparams, float(y_mean), float(y_std),
                   chol, alpha, jitter, n_fantasies)


def from_hyperparams(train_x, train_y, hyperparams: Hyperparams, standardize=False) -> GpModel:
    """Model with given hyperparameters; targets in objective units."""
    y = np.asarray(train_y, dtype=float).ravel()
    y_mean, y_std = _standardization(y) if standardize else (0.0, 1.0)
    return build_model(train_x, (y - y_mean) / y_std, hyperparams, y_mean, y_std)


def _standardization(y):
    mean = float(np.mean(y))
    std = float(np.std(y)) if len(y) > 1 else 0.0
    if not std > 1e-12 * max(1.0, abs(mean)):
        std = 1.0
    return mean, std


def log_marginal_likelihood(model: GpModel) -> float:
    """Gaussian log evidence of the standardized targets under ``model``."""
    y = model.train_y
    return float(
        -0.5 * y @ model.alpha
        - np.log(np.diag(model.chol)).sum()
        - 0.5 * len(y) * np.log(2.0 * np.pi)
    )


def _neg_mll_and_grad(theta, x, y, fixed_noise):
    d = x.shape[1]
    ls = np.exp(theta[:d])
    sf = np.exp(theta[d])
    sn = fixed_noise if fixed_noise is not None else np.exp(theta[d + 1])
    k, dls = _matern52_with_grads(x, ls, sf)
    kn = k.copy()
    kn[np.diag_indices_from(kn)] += sn
    try:
        chol = linalg.cholesky(kn, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = linalg.cho_solve((chol, True), y, check_finite=False)
    nll = 0.5 * y @ alpha + np.log(np.diag(chol)).sum() + 0.5 * len(y) * np.log(2 * np.pi)
    kinv = linalg.cho_solve((chol, True), np.eye(len(y)), check_finite=False)
    w = np.outer(alpha, alpha) - kinv
    grad = np.empty_like(theta)
    grad[:d] = -0.5 * np.einsum("ij,ijk->k", w, dls)
    grad[d] = -0.5 * np.sum(w * k)
    if fixed_noise is None:
        grad[d + 1] = -0.5 * np.trace(w) * sn
    return float(nll), grad


def fit(train_x, train_y, noise_mode: NoiseMode | None = None, seed=0,
        n_starts: int = N_STARTS, standardize: bool = True,
        init: Hyperparams | None = None) -> GpModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Multi-start L-BFGS-B in log-parameter space. The first start is a fixed
    default (or ``init`` when given, e.g. the previous step's fit); the rest
    are drawn log-uniformly from a central part of the box using ``seed``.
    A fixed noise value is interpreted in objective units.
    """
    noise_mode = noise_mode or NoiseMode.learned()
    x = np.atleast_2d(np.asarray(train_x, dtype=float))
    y_raw = np.asarray(train_y, dtype=float).ravel()
    if len(y_raw) < 1:
        raise ValueError("need at least one training point")
    if len(x) != len(y_raw):
        raise ValueError(f"train_x has {len(x)} rows but train_y has {len(y_raw)}")
    y_mean, y_std = _standardization(y_raw) if standardize else (0.0, 1.0)
    y = (y_raw - y_mean) / y_std
    d = x.shape[1]
    fixed_noise = None if noise_mode.is_learned else noise_mode.fixed / y_std**2

    lo = [np.log(LENGTHSCALE_BOUNDS[0])] * d + [np.log(VARIANCE_BOUNDS[0])]
    hi = [np.log(LENGTHSCALE_BOUNDS[1])] * d + [np.log(VARIANCE_BOUNDS[1])]
    if fixed_noise is None:
        lo.append(np.log(VARIANCE_BOUNDS[0]))
        hi.append(np.log(VARIANCE_BOUNDS[1]))
    lo, hi = np.array(lo), np.array(hi)

    starts = []
    if init is not None:
        first = np.r_[np.log(init.lengthscales), np.log(init.signal_variance)]
        if fixed_noise is None:
            first = np.r_[first, np.log(max(init.noise_variance, VARIANCE_BOUNDS[0]))]
    else:
        first = np.r_[np.full(d, np.log(0.3)), 0.0]
        if fixed_noise is None:
            first = np.r_[first, np.log(1e-2)]
    starts.append(np.clip(first, lo, hi))
    rng = np.random.default_rng(seed)
    # random starts from a central sub-box; extremes are reachable by the optimizer
    c_lo = np.r_[np.full(d, np.log(0.02)), np.log(0.05)]
    c_hi = np.r_[np.full(d, np.log(3.0)), np.log(20.0)]
    if fixed_noise is None:
        c_lo, c_hi = np.r_[c_lo, np.log(1e-5)], np.r_[c_hi, np.log(0.5)]
    for _ in range(max(n_starts, 1) - 1):
        starts.append(rng.uniform(c_lo, c_hi))

    best_theta, best_val = None, np.inf
    bounds = list(zip(lo, hi))
    start_vals = []
    for theta0 in starts:
        f0, _ = _neg_mll_and_grad(theta0, x, y, fixed_noise)
        start_vals.append(f0)
        res = optimize.minimize(_neg_mll_and_grad, theta0, args=(x, y, fixed_noise),
                                jac=True, method="L-BFGS-B", bounds=bounds)
        theta, val = (res.x, res.fun) if res.fun <= f0 else (theta0, f0)
        if val < best_val:
            best_theta, best_val = theta, val
    if best_theta is None or not np.isfinite(best_val) or best_val >= 1e25:
        k0 = matern52(x, x, np.exp(starts[0][:d]), np.exp(starts[0][d]))
        k0[np.diag_indices_from(k0)] += fixed_noise if fixed_noise is not None else np.exp(starts[0][d + 1])
        n_dup = len(x) - len(np.unique(x, axis=0))
        raise GPFitError(
            f"no start produced a factorizable kernel matrix (n={len(x)}, duplicate inputs={n_dup}, "
            f"condition number at first start={np.linalg.cond(k0):.3g})"
        )

    hp = Hyperparams(
        lengthscales=np.exp(best_theta[:d]),
        signal_variance=float(np.exp(best_theta[d])),
        noise_variance=float(fixed_noise if fixed_noise is not None else np.exp(best_theta[d + 1])),
    )
    model = build_model(x, y, hp, y_mean, y_std)
    object.__setattr__(model, "start_mlls", tuple(-v for v in start_vals))
    return model


def posterior(model: GpModel, x, observation_noise: bool = False):
    """Predictive mean and variance in objective units.

    ``x`` may be a single d-vector (scalars returned) or an (m, d) array.
    """
    arr = np.asarray(x, dtype=float)
    mean, var = model.standardized_posterior(arr)
    if observation_noise:
        var = var + model.hyperparams.noise_variance
    mean = model.y_mean + model.y_std * mean
    var = model.y_std**2 * var
    if arr.ndim == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def fantasize(model: GpModel, pending_x) -> GpModel:
    """Condition on pending inputs using posterior-mean fantasy targets.

    Points are added one at a time (kriging believer); hyperparameters and
    the target standardization are left untouched.
    """
    pending = np.asarray(pending_x, dtype=float)
    if pending.size == 0:
        return model
    pending = np.atleast_2d(pending)
    out = model
    for p in pending:
        mu, _ = out.standardized_posterior(p)
        out = build_model(
            np.vstack([out.train_x, p]),
            np.r_[out.train_y, mu],
            out.hyperparams, out.y_mean, out.y_std,
            n_fantasies=out.n_fantasies + 1,
        )
    return out


def r_squared(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    ss_res = float(np.sum((y_true - np.asarray(y_pred)) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    return 1.0 - ss_res / ss_tot


def fold_indices(n: int, folds: int) -> list[np.ndarray]:
    """Interleaved fold assignment: point i goes to fold ``i % folds``."""
    return [np.arange(k, n, folds) for k in range(folds)]


def cross_validate(train_x, train_y, noise_mode: NoiseMode | None = None, folds: int = 10,
                   seed=0, n_starts: int = N_STARTS) -> float:
    """K-fold cross-validated coefficient of determination (pooled predictions)."""
    x = np.atleast_2d(np.asarray(train_x, dtype=float))
    y = np.asarray(train_y, dtype=float).ravel()
    n = len(y)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"need at least {folds} points for {folds}-fold CV, got {n}")
    pred = np.empty(n)
    for k, test in enumerate(fold_indices(n, folds)):
        train = np.setdiff1d(np.arange(n), test)
        if len(train) < 1:
            raise ValueError(f"fold {k} leaves no training points")
        m = fit(x[train], y[train], noise_mode, seed=seed, n_starts=n_starts)
        pred[test], _ = posterior(m, x[test])
    return r_squared(y, pred)


def dump(model: GpModel, bounds=None) -> dict:
    """JSON-serializable snapshot of a model (hyperparameters and training set)."""
    out = {
        "kernel": "matern52_ard",
        "hyperparams": model.hyperparams.to_dict(),
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "jitter": model.jitter,
        "log_marginal_likelihood": log_marginal_likelihood(model),
        "train_x_normalized": model.train_x.tolist(),
        "train_y": model.observed_y.tolist(),
    }
    if bounds is not None:
        out["bounds"] = np.asarray(bounds, dtype=float).tolist()
    return out


def with_hyperparams(model: GpModel, hyperparams: Hyperparams) -> GpModel:
    return build_model(model.train_x, model.train_y, hyperparams, model.y_mean, model.y_std)


__all__ = [
    "GPFitError", "GpModel", "Hyperparams", "NoiseMode", "build_model", "clamp_events",
    "cross_validate", "dump", "fantasize", "fit", "fold_indices", "from_hyperparams",
    "log_marginal_likelihood", "matern52", "normalize", "posterior", "r_squared",
    "robust_cholesky", "unnormalize", "with_hyperparams",
]
