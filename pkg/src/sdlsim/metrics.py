"""Running-best curves, cumulative regret and cross-trial aggregates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrialRecord:
    """Every observation of one trial, in submit order.

    ``pending_sizes[t]`` and ``train_sizes[t]`` describe what the optimizer
    saw when proposing BO step ``t``.
    """

    x: np.ndarray
    y: np.ndarray  # noisy observations
    y_true: np.ndarray
    submit_index: np.ndarray
    reveal_index: np.ndarray
    modes: tuple[str, ...]
    surface_id: str = ""
    strategy_id: str = ""
    delay: int = 0
    seed: int = 0
    pending_sizes: tuple[int, ...] = ()
    train_sizes: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.y)

    @property
    def observations(self) -> list[dict]:
        return [
            {"x": self.x[i], "noisy_y": float(self.y[i]),
             "submit_index": int(self.submit_index[i]),
             "reveal_index": int(self.reveal_index[i])}
            for i in range(len(self))
        ]


def _values(record) -> np.ndarray:
    y = record.y if isinstance(record, TrialRecord) else record
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("running best needs a nonempty 1-D series")
    return y


def running_best(record) -> np.ndarray:
    """Best noisy observation so far, per observation index (submit order)."""
    return np.maximum.accumulate(_values(record))


def cumulative_regret(record, global_max: float) -> float:
    """Sum over observations of ``global_max - running_best``.

    Terms go negative when noise lifts the running best above the optimum;
    they are not clamped.
    """
    return float(np.sum(global_max - running_best(record)))


@dataclass
class CellSummary:
    key: str
    global_max: float
    n_trials: int
    running_best_mean: np.ndarray
    running_best_std: np.ndarray
    regrets: np.ndarray
    regret_mean: float
    regret_std: float
    complete: bool = True
    errors: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class StudySummary:
    cells: dict[str, CellSummary] = field(default_factory=dict)
    records: dict[str, list[TrialRecord]] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(c.complete for c in self.cells.values())


def aggregate(records, global_max: float, key: str = "",
              regret_of_mean_curve: bool = False) -> CellSummary:
    """Pointwise mean/std of running-best curves and per-trial regret stats.

    Standard deviations use the n-1 denominator. With
    ``regret_of_mean_curve`` the reported mean regret is taken from the
    averaged running-best curve instead of averaging per-trial regrets.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate an empty list of trials")
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ValueError(f"trials have different budgets: {sorted(lengths)}")
    curves = np.vstack([running_best(r) for r in records])
    regrets = np.array([cumulative_regret(r, global_max) for r in records])
    n = len(records)
    mean_curve = curves.mean(0)
    if n == 1:
        log.warning("cell %r aggregated from a single trial; std set to 0", key)
        std_curve = np.zeros_like(mean_curve)
        regret_std = 0.0
    else:
        std_curve = curves.std(0, ddof=1)
        regret_std = float(regrets.std(ddof=1))
    if regret_of_mean_curve:
        regret_mean = float(np.sum(global_max - mean_curve))
    else:
        regret_mean = float(regrets.mean())
    return CellSummary(key, float(global_max), n, mean_curve, std_curve, regrets,
                       regret_mean, regret_std)
