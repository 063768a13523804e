"""Delayed-feedback engine for an asynchronous-parallel laboratory.

An experiment's result is revealed to the optimizer only after ``delay``
further experiments have been submitted, so a lab with ``delay + 1``
stages always has up to ``delay`` results in flight.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import acquisition, gp, metrics
from .acquisition import StrategySpec
from .surfaces import ProblemSurface

log = logging.getLogger(__name__)

STREAMS = ("init", "noise", "propose", "fit")


class TrialError(RuntimeError):
    pass


@dataclass
class Experiment:
    x: np.ndarray
    true_y: float
    noisy_y: float
    submit_index: int
    reveal_index: int | None = None
    mode: str = ""


@dataclass
class ConveyorState:
    delay: int
    budget: int
    submitted: list[Experiment] = field(default_factory=list)
    revealed_count: int = 0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")

    @property
    def n_submitted(self) -> int:
        return len(self.submitted)

    @property
    def pending(self) -> list[Experiment]:
        return self.submitted[self.revealed_count:]

    @property
    def revealed(self) -> list[Experiment]:
        return self.submitted[:self.revealed_count]

    def submit(self, x, true_y: float, noisy_y: float, mode: str = "",
               reveal_now: bool = False) -> Experiment:
        """Put an experiment on the belt and reveal whatever has come due."""
        if self.n_submitted >= self.budget:
            raise TrialError(f"budget of {self.budget} experiments exhausted")
        exp = Experiment(np.asarray(x, dtype=float), float(true_y), float(noisy_y),
                         self.n_submitted, mode=mode)
        self.submitted.append(exp)
        if reveal_now:
            if self.revealed_count != exp.submit_index:
                raise TrialError("cannot reveal out of submit order")
            exp.reveal_index = exp.submit_index
            self.revealed_count += 1
            return exp
        latest = exp.submit_index
        while (self.revealed_count < self.n_submitted
               and self.submitted[self.revealed_count].submit_index + self.delay <= latest):
            self.submitted[self.revealed_count].reveal_index = latest
            self.revealed_count += 1
        return exp

    def flush(self) -> None:
        """Reveal everything still in flight (end of the trial)."""
        for exp in self.pending:
            exp.reveal_index = self.n_submitted
        self.revealed_count = self.n_submitted


def pending_at(state: ConveyorState) -> np.ndarray:
    """Inputs of submitted-but-unrevealed experiments, in submit order."""
    pend = state.pending
    if not pend:
        dim = state.submitted[0].x.size if state.submitted else 0
        return np.empty((0, dim))
    return np.vstack([e.x for e in pend])


@dataclass(frozen=True)
class TrialConfig:
    surface: ProblemSurface
    strategy: StrategySpec
    delay: int = 0
    n_init: int = 10
    budget: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")
        if self.n_init < 1:
            raise ValueError("n_init must be positive")
        if self.n_init + 1 > self.budget:
            raise ValueError(f"budget {self.budget} leaves no BO steps after {self.n_init} init points")


def trial_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for each source of randomness in a trial."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def _evaluate(surface: ProblemSurface, x, noise_rng):
    true_y = surface.objective(x)
    return true_y, true_y + surface.noise_std * noise_rng.standard_normal()


def run_trial(config: TrialConfig) -> metrics.TrialRecord:
    """Run one seeded optimization trial through the delay queue."""
    surface, strategy, delay = config.surface, config.strategy, config.delay
    bounds = surface.bounds_array
    rng = trial_streams(config.seed)
    state = ConveyorState(delay, config.budget)

    for _ in range(config.n_init):
        x = rng["init"].uniform(bounds[:, 0], bounds[:, 1])
        true_y, noisy_y = _evaluate(surface, x, rng["noise"])
        state.submit(x, true_y, noisy_y, mode="init", reveal_now=True)

    pending_sizes, train_sizes = [], []
    hyper = None
    for step in range(config.budget - config.n_init):
        revealed = state.revealed
        expected = config.n_init + max(0, step - delay)
        assert len(revealed) == expected, (len(revealed), expected)
        assert len(state.pending) <= delay
        pending_sizes.append(len(state.pending))
        train_sizes.append(len(revealed))
        try:
            model = None
            if strategy.needs_model:
                xr = gp.normalize(np.vstack([e.x for e in revealed]), bounds)
                yr = np.array([e.noisy_y for e in revealed])
                model = gp.fit(xr, yr, strategy.noise_mode,
                               seed=int(rng["fit"].integers(2**32)), init=hyper)
                hyper = model.hyperparams
            prop = acquisition.select(strategy, model, pending_at(state), bounds, step,
                                      rng["propose"], delay=delay)
            true_y, noisy_y = _evaluate(surface, prop.x, rng["noise"])
        except Exception as exc:
            raise TrialError(
                f"{surface.name} d={surface.dim} strategy={strategy.label} delay={delay} "
                f"seed={config.seed} step={step}: {exc}"
            ) from exc
        state.submit(prop.x, true_y, noisy_y,
                     mode=prop.mode + ("+fallback" if prop.fallback else ""))
    state.flush()

    exps = state.submitted
    return metrics.TrialRecord(
        x=np.vstack([e.x for e in exps]),
        y=np.array([e.noisy_y for e in exps]),
        y_true=np.array([e.true_y for e in exps]),
        submit_index=np.array([e.submit_index for e in exps]),
        reveal_index=np.array([e.reveal_index for e in exps]),
        modes=tuple(e.mode for e in exps),
        surface_id=f"{surface.name}-d{surface.dim}",
        strategy_id=strategy.label,
        delay=delay,
        seed=config.seed,
        pending_sizes=tuple(pending_sizes),
        train_sizes=tuple(train_sizes),
    )


# -- studies -------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    surface: ProblemSurface
    strategy: StrategySpec
    delay: int

    @property
    def key(self) -> str:
        return f"{self.surface.name}-d{self.surface.dim}-D{self.delay}-{self.strategy.label}"


def derive_seed(base_seed: int, cell_key: str, trial: int) -> int:
    """Trial seed from the study seed, the cell identity and the trial index.

    The trial index is XORed into the upper word so that nearby base seeds
    (b and b ^ 1, say) never produce the same set of trial seeds.
    """
    h = hashlib.blake2b(cell_key.encode(), digest_size=8)
    cell_hash = int.from_bytes(h.digest(), "little")
    return (int(base_seed) ^ cell_hash ^ (int(trial) << 32)) & (2**63 - 1)


def _run_task(task):
    cell_idx, trial, config = task
    try:
        return cell_idx, trial, run_trial(config), None
    except Exception as exc:  # recorded per cell, never aborts the study
        return cell_idx, trial, None, f"trial {trial} (seed {config.seed}): {exc}"


def run_cells(cells, n_trials: int, n_init: int = 10, budget: int = 100,
              base_seed: int = 0, jobs: int = 1,
              regret_of_mean_curve: bool = False) -> metrics.StudySummary:
    """Run ``n_trials`` trials of every cell and aggregate them.

    Output is independent of ``jobs``: every trial has its own derived seed
    and results are collected by (cell, trial) index.
    """
    cells = list(cells)
    keys = [c.key for c in cells]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate study cells; give strategies distinct labels")
    tasks = [
        (ci, t, TrialConfig(c.surface, c.strategy, c.delay, n_init, budget,
                            derive_seed(base_seed, c.key, t)))
        for ci, c in enumerate(cells) for t in range(n_trials)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        results = [_run_task(t) for t in tasks]

    by_cell: dict[int, dict[int, metrics.TrialRecord]] = {i: {} for i in range(len(cells))}
    errors: dict[int, list[str]] = {i: [] for i in range(len(cells))}
    for ci, t, rec, err in results:
        if err is None:
            by_cell[ci][t] = rec
        else:
            log.error("cell %s failed: %s", keys[ci], err)
            errors[ci].append(err)

    summary = metrics.StudySummary()
    for ci, cell in enumerate(cells):
        recs = [by_cell[ci][t] for t in sorted(by_cell[ci])]
        summary.records[cell.key] = recs
        meta = {"surface": cell.surface.name, "dim": cell.surface.dim,
                "delay": cell.delay, "strategy": cell.strategy.label}
        if errors[ci] or not recs:
            nan = np.full(budget, np.nan)
            summary.cells[cell.key] = metrics.CellSummary(
                cell.key, cell.surface.global_max, len(recs), nan, nan.copy(),
                np.array([metrics.cumulative_regret(r, cell.surface.global_max) for r in recs]),
                float("nan"), float("nan"), complete=False, errors=errors[ci], meta=meta)
            continue
        agg = metrics.aggregate(recs, cell.surface.global_max, cell.key, regret_of_mean_curve)
        agg.meta = meta
        summary.cells[cell.key] = agg
    return summary


def run_study(study, jobs: int = 1) -> metrics.StudySummary:
    """Run every cell of a parsed study configuration."""
    return run_cells(study.cells(), study.n_trials, study.n_init, study.budget,
                     study.base_seed, jobs, study.regret_of_mean_curve)
