"""Search strategies and the candidate-selection optimizer.

All acquisition functions take inputs on the unit cube (rows of an (m, d)
array) and return one score per row. :func:`propose` wraps them into the
strategy roster used by the simulator: Random, analytic EI, Monte-Carlo
noisy EI and UCB/space-filling mode cycling.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg, optimize, special
from scipy.stats import qmc

from . import gp

log = logging.getLogger(__name__)

SHORT_BETAS = (0.25, 2.5, 25.0)
MEDIUM_BETAS = (0.1, 0.25, 1.0, 2.5, 25.0)
LONG_BETAS = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0)

DEFAULT_POOL_SIZE = 1024
DEFAULT_RESTARTS = 8
DEFAULT_MC_SAMPLES = 128
MIN_MC_SAMPLES = 64
FLAT_TOL = 1e-15


class StrategyKind(str, Enum):
    RANDOM = "random"
    EI = "ei"
    QNEI = "qnei"
    MODECYCLE = "modecycle"


class PendingPolicy(str, Enum):
    FANTASIZE = "fantasize"
    NONE = "none"


def preset_betas(delay: int) -> tuple[float, ...]:
    """UCB betas for mode cycling at a given delay.

    Delays 0-3 use the short list, 4-5 the five-beta list and anything
    larger the seven-beta list.
    """
    if delay < 0:
        raise ValueError("delay must be nonnegative")
    if delay <= 3:
        return SHORT_BETAS
    if delay <= 5:
        return MEDIUM_BETAS
    return LONG_BETAS


@dataclass(frozen=True)
class Mode:
    kind: str  # "ucb" or "spacefill"
    beta: float | None = None

    @property
    def label(self) -> str:
        return f"ucb({self.beta:g})" if self.kind == "ucb" else "spacefill"


SPACE_FILL = Mode("spacefill")


@dataclass(frozen=True)
class ModeSchedule:
    modes: tuple[Mode, ...]

    @classmethod
    def from_betas(cls, betas) -> "ModeSchedule":
        betas = tuple(float(b) for b in betas)
        if not betas:
            raise ValueError("beta schedule must be nonempty")
        if any(not b > 0 for b in betas):
            raise ValueError(f"betas must be positive, got {betas}")
        return cls(tuple(Mode("ucb", b) for b in betas) + (SPACE_FILL,))

    def __len__(self) -> int:
        return len(self.modes)

    def mode_at(self, step: int) -> Mode:
        return self.modes[step % len(self.modes)]


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    mc_samples: int = DEFAULT_MC_SAMPLES
    # None means: pick the preset for the trial's delay
    beta_schedule: tuple[float, ...] | None = None
    candidate_pool_size: int = DEFAULT_POOL_SIZE
    restarts: int = DEFAULT_RESTARTS
    pending_policy: PendingPolicy = PendingPolicy.FANTASIZE
    noise_mode: gp.NoiseMode = field(default_factory=gp.NoiseMode.learned)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        object.__setattr__(self, "pending_policy", PendingPolicy(self.pending_policy))
        if self.kind is StrategyKind.QNEI and self.mc_samples < MIN_MC_SAMPLES:
            raise ValueError(f"qnei needs mc_samples >= {MIN_MC_SAMPLES}, got {self.mc_samples}")
        if self.beta_schedule is not None:
            sched = tuple(float(b) for b in self.beta_schedule)
            ModeSchedule.from_betas(sched)
            object.__setattr__(self, "beta_schedule", sched)
        if self.candidate_pool_size < 1 or self.restarts < 1:
            raise ValueError("candidate_pool_size and restarts must be positive")
        if not self.label:
            object.__setattr__(self, "label", self.kind.value)

    @property
    def needs_model(self) -> bool:
        return self.kind is not StrategyKind.RANDOM

    def schedule_for(self, delay: int) -> ModeSchedule:
        return ModeSchedule.from_betas(self.beta_schedule or preset_betas(delay))


# -- acquisition functions ---------------------------------------------------


def ei_from_moments(mean, sigma, best_f):
    """Analytic expected improvement of N(mean, sigma^2) over ``best_f``."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    diff = mean - best_f
    safe = np.where(sigma < 1e-12, 1.0, sigma)
    z = diff / safe
    ei = safe * (z * special.ndtr(z) + np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi))
    return np.where(sigma < 1e-12, np.maximum(diff, 0.0), np.maximum(ei, 0.0))


def expected_improvement(model: gp.GpModel, x, best_f: float):
    mean, var = gp.posterior(model, np.atleast_2d(x))
    out = ei_from_moments(mean, np.sqrt(var), best_f)
    return float(out[0]) if np.ndim(x) == 1 else out


def ucb(model: gp.GpModel, x, beta: float):
    """Upper confidence bound ``mean + sqrt(beta) * std``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    mean, var = gp.posterior(model, np.atleast_2d(x))
    out = mean + np.sqrt(beta) * np.sqrt(var)
    return float(out[0]) if np.ndim(x) == 1 else out


def space_fill_score(x, anchors):
    """Minimum Euclidean distance from each row of ``x`` to any anchor."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if anchors.size == 0:
        raise ValueError("space-filling needs at least one anchor")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    sq = ((pts[:, None, :] - anchors[None, :, :]) ** 2).sum(-1)
    out = np.sqrt(sq.min(1))
    return float(out[0]) if np.ndim(x) == 1 else out


class QNoisyEI:
    """Monte-Carlo noisy expected improvement with frozen base samples.

    The incumbent is the sampled maximum of the latent function over the
    model's training inputs (revealed points plus any fantasies), so no
    noisy observation is ever trusted as the best value. Base samples are
    drawn once at construction, making the surface deterministic.
    """

    def __init__(self, model: gp.GpModel, mc_samples: int, rng: np.random.Generator):
        self.model = model
        n = model.n
        self.z_base = rng.standard_normal((mc_samples, n))
        self.z_cand = rng.standard_normal(mc_samples)
        kss = model.kernel(model.train_x, model.train_x)
        v = linalg.solve_triangular(model.chol, kss, lower=True, check_finite=False)
        cov = kss - v.T @ v
        cov = 0.5 * (cov + cov.T)
        self.base_mean = kss @ model.alpha
        self._v = v
        self.base_chol, _ = gp.robust_cholesky(cov)
        samples = self.base_mean + self.z_base @ self.base_chol.T
        self.incumbent = samples.max(axis=1)

    def improvement_samples(self, x) -> np.ndarray:
        """(m, mc_samples) improvement draws in objective units."""
        m = self.model
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        kxs = m.kernel(pts, m.train_x)
        mean = kxs @ m.alpha
        w = linalg.solve_triangular(m.chol, kxs.T, lower=True, check_finite=False)
        var = m.hyperparams.signal_variance - (w * w).sum(0)
        # posterior cross-covariance between candidates and the training inputs
        cross = kxs - w.T @ self._v
        ell = linalg.solve_triangular(self.base_chol, cross.T, lower=True,
                                      check_finite=False).T
        resid = np.sqrt(np.maximum(var - (ell * ell).sum(1), 0.0))
        f = mean[:, None] + ell @ self.z_base.T + resid[:, None] * self.z_cand[None, :]
        return m.y_std * np.maximum(f - self.incumbent[None, :], 0.0)

    def __call__(self, x):
        out = self.improvement_samples(x).mean(1)
        return float(out[0]) if np.ndim(x) == 1 else out

    def standard_error(self, x) -> np.ndarray:
        """Monte-Carlo standard error of the estimate at each row of ``x``."""
        imp = self.improvement_samples(x)
        return imp.std(1, ddof=1) / np.sqrt(imp.shape[1])


def qnei(model: gp.GpModel, x, pending_x, mc_samples: int, rng: np.random.Generator,
         pending_policy: PendingPolicy = PendingPolicy.FANTASIZE):
    """One-shot noisy EI estimate at ``x`` (fresh base samples from ``rng``)."""
    if pending_policy is PendingPolicy.FANTASIZE:
        model = gp.fantasize(model, pending_x)
    return QNoisyEI(model, mc_samples, rng)(x)


# -- maximization ------------------------------------------------------------


def candidate_pool(dim: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Scrambled Sobol points on the unit cube."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two sizes
        return qmc.Sobol(dim, scramble=True, seed=rng).random(size)


def pool_argmax(scores) -> int:
    """Index of the highest score; the lowest index wins ties."""
    return int(np.argmax(np.asarray(scores)))


def _refine(acq, u0: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    d = len(u0)
    h = 1e-6

    def fun_and_grad(u):
        u = np.clip(u, 0.0, 1.0)
        steps = np.where(u + h <= 1.0, h, -h)
        pts = np.vstack([u, u + np.diag(steps)])
        vals = np.asarray(acq(pts), dtype=float) / scale
        grad = (vals[1:] - vals[0]) / steps
        return -vals[0], -grad

    res = optimize.minimize(fun_and_grad, u0, jac=True, method="L-BFGS-B",
                            bounds=[(0.0, 1.0)] * d, options={"maxiter": 50})
    u = np.clip(res.x, 0.0, 1.0)
    return u, float(np.asarray(acq(u[None, :]))[0])


def maximize_acquisition(acq, dim: int, rng: np.random.Generator,
                         pool_size: int = DEFAULT_POOL_SIZE,
                         restarts: int = DEFAULT_RESTARTS) -> np.ndarray | None:
    """Score a quasi-random pool, refine the top ``restarts`` by local ascent.

    Returns ``None`` when the acquisition is flat over the pool.
    """
    pool = candidate_pool(dim, pool_size, rng)
    scores = np.asarray(acq(pool), dtype=float)
    if np.ptp(scores) <= FLAT_TOL:
        return None
    top = np.argsort(-scores, kind="stable")[:restarts]
    scale = float(np.max(np.abs(scores[top]))) or 1.0
    best_u, best_val, best_idx = None, -np.inf, None
    for idx in top:
        u, val = _refine(acq, pool[idx], scale)
        if val < scores[idx]:
            u, val = pool[idx], float(scores[idx])
        if val > best_val or (val == best_val and idx < best_idx):
            best_u, best_val, best_idx = u, val, idx
    return best_u


def space_fill_argmax(anchors, dim: int, rng: np.random.Generator,
                      pool_size: int = DEFAULT_POOL_SIZE,
                      restarts: int = DEFAULT_RESTARTS) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=float)
    if anchors.size == 0:
        return rng.random(dim)
    u = maximize_acquisition(lambda p: space_fill_score(p, anchors), dim, rng,
                             pool_size, restarts)
    return rng.random(dim) if u is None else u


def _to_bounds(u, b) -> np.ndarray:
    return np.clip(gp.unnormalize(u, b), b[:, 0], b[:, 1])


@dataclass(frozen=True)
class Proposal:
    x: np.ndarray  # in surface units
    mode: str
    fallback: bool = False


def select(strategy: StrategySpec, model: gp.GpModel | None, pending_x, bounds,
           step: int, rng: np.random.Generator, delay: int = 0) -> Proposal:
    """Next experiment for ``strategy`` plus a label for the mode used.

    ``model`` is trained on revealed data with inputs normalized to
    ``bounds``; ``pending_x`` is in surface units.
    """
    b = np.asarray(bounds, dtype=float)
    dim = len(b)
    if strategy.kind is StrategyKind.RANDOM:
        return Proposal(rng.uniform(b[:, 0], b[:, 1]), "random")
    if model is None:
        raise ValueError(f"strategy {strategy.label!r} needs a fitted model")

    pending = np.asarray(pending_x, dtype=float).reshape(-1, dim)
    pending_u = gp.normalize(pending, b) if len(pending) else np.empty((0, dim))
    use_pending = strategy.pending_policy is PendingPolicy.FANTASIZE
    anchors = np.vstack([model.train_x, pending_u]) if use_pending else model.train_x
    pool, restarts = strategy.candidate_pool_size, strategy.restarts

    if strategy.kind is StrategyKind.MODECYCLE:
        mode = strategy.schedule_for(delay).mode_at(step)
        if mode.kind == "spacefill":
            u = space_fill_argmax(anchors, dim, rng, pool, restarts)
            return Proposal(_to_bounds(u, b), mode.label)
        label = mode.label
        acq = lambda p: ucb(model, p, mode.beta)  # noqa: E731
    else:
        fmodel = gp.fantasize(model, pending_u) if use_pending else model
        label = strategy.kind.value
        if strategy.kind is StrategyKind.EI:
            # believed fantasies count as observations for the incumbent
            best_f = float(np.max(fmodel.observed_y))
            acq = lambda p: expected_improvement(fmodel, p, best_f)  # noqa: E731
        else:
            acq = QNoisyEI(fmodel, strategy.mc_samples, rng)

    u = maximize_acquisition(acq, dim, rng, pool, restarts)
    if u is None:
        log.info("acquisition %s flat at step %d; falling back to space filling", label, step)
        u = space_fill_argmax(anchors, dim, rng, pool, restarts)
        return Proposal(_to_bounds(u, b), label, fallback=True)
    return Proposal(_to_bounds(u, b), label)


def propose(strategy: StrategySpec, model: gp.GpModel | None, pending_x, bounds,
            step: int, rng: np.random.Generator, delay: int = 0) -> np.ndarray:
    """Next experiment (surface units) for ``strategy``; see :func:`select`."""
    x = select(strategy, model, pending_x, bounds, step, rng, delay).x
    b = np.asarray(bounds, dtype=float)
    assert np.all(x >= b[:, 0]) and np.all(x <= b[:, 1]), "proposal escaped bounds"
    return x
