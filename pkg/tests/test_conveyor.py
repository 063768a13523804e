import numpy as np
import pytest

from sdlsim import acquisition, conveyor, gp, surfaces
from sdlsim.acquisition import StrategySpec
from sdlsim.conveyor import Cell, ConveyorState, TrialConfig, TrialError

from oracles import queue_events

RANDOM = StrategySpec("random", pending_policy="none")
SMALL_EI = StrategySpec("ei", candidate_pool_size=128, restarts=2)


@pytest.mark.parametrize("delay", [0, 1, 3, 5, 7])
def test_queue_matches_event_oracle(delay):
    rec = conveyor.run_trial(TrialConfig(surfaces.ackley(3), RANDOM, delay, n_init=10, budget=30,
                                         seed=delay))
    sizes, reveals = queue_events(10, 30, delay)
    assert list(rec.pending_sizes) == sizes
    assert rec.reveal_index.tolist() == reveals
    assert rec.submit_index.tolist() == list(range(30))


def test_hand_enumeration_delay_three():
    state = ConveyorState(delay=3, budget=8)
    for s in range(2):
        state.submit([0.0], 0.0, 0.0, reveal_now=True)
    seen = []
    for s in range(2, 8):
        seen.append(len(state.pending))
        state.submit([float(s)], 0.0, 0.0)
    state.flush()
    assert seen == [0, 1, 2, 3, 3, 3]
    assert [e.reveal_index for e in state.submitted] == [0, 1, 5, 6, 7, 8, 8, 8]


def test_delay_one_alternates_single_pending():
    rec = conveyor.run_trial(TrialConfig(surfaces.levy(2), RANDOM, 1, n_init=3, budget=9, seed=0))
    assert rec.pending_sizes == (0, 1, 1, 1, 1, 1)
    assert rec.train_sizes == (3, 3, 4, 5, 6, 7)


def test_zero_delay_equals_sequential_loop():
    surf = surfaces.ackley(2)
    cfg = TrialConfig(surf, SMALL_EI, 0, n_init=4, budget=9, seed=11)
    rec = conveyor.run_trial(cfg)

    # plain loop: fit on everything seen so far, propose, observe
    rng = conveyor.trial_streams(11)
    b = surf.bounds_array
    xs, ys = [], []
    for _ in range(4):
        x = rng["init"].uniform(b[:, 0], b[:, 1])
        xs.append(x)
        ys.append(surf.objective(x) + surf.noise_std * rng["noise"].standard_normal())
    hyper = None
    for t in range(5):
        model = gp.fit(gp.normalize(np.array(xs), b), np.array(ys),
                       seed=int(rng["fit"].integers(2**32)), init=hyper)
        hyper = model.hyperparams
        x = acquisition.propose(SMALL_EI, model, np.empty((0, 2)), b, t, rng["propose"])
        xs.append(x)
        ys.append(surf.objective(x) + surf.noise_std * rng["noise"].standard_normal())
    np.testing.assert_array_equal(rec.x, np.array(xs))
    np.testing.assert_array_equal(rec.y, np.array(ys))
    assert rec.reveal_index.tolist() == list(range(9))


def test_training_sizes_follow_delay():
    for delay in (0, 2, 4):
        rec = conveyor.run_trial(TrialConfig(surfaces.ackley(2), RANDOM, delay, 5, 15, seed=1))
        assert list(rec.train_sizes) == [5 + max(0, t - delay) for t in range(10)]


def test_revealed_information_shrinks_with_delay():
    totals = []
    for delay in (0, 1, 3, 5, 7):
        rec = conveyor.run_trial(TrialConfig(surfaces.ackley(2), RANDOM, delay, 10, 30, seed=2))
        totals.append(sum(rec.train_sizes))
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_budget_enforced():
    state = ConveyorState(0, 1)
    state.submit([0.0], 0.0, 0.0)
    with pytest.raises(TrialError):
        state.submit([0.0], 0.0, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrialConfig(surfaces.ackley(2), RANDOM, n_init=10, budget=10)
    with pytest.raises(ValueError):
        TrialConfig(surfaces.ackley(2), RANDOM, delay=-1)


def test_streams_are_independent_and_seeded():
    a, b = conveyor.trial_streams(5), conveyor.trial_streams(5)
    assert set(a) == {"init", "noise", "propose", "fit"}
    assert a["noise"].random() == b["noise"].random()
    assert conveyor.trial_streams(5)["init"].random() != conveyor.trial_streams(5)["noise"].random()


def test_trial_is_reproducible_and_modes_labelled():
    cfg = TrialConfig(surfaces.levy(2), StrategySpec("modecycle", candidate_pool_size=64, restarts=1),
                      1, n_init=3, budget=8, seed=4)
    a, b = conveyor.run_trial(cfg), conveyor.run_trial(cfg)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.modes == ("init",) * 3 + ("ucb(0.25)", "ucb(2.5)", "ucb(25)", "spacefill", "ucb(0.25)")


def test_derive_seed():
    s = conveyor.derive_seed(7, "ackley-d3-D0-ei", 0)
    assert s == conveyor.derive_seed(7, "ackley-d3-D0-ei", 0)
    assert s != conveyor.derive_seed(7, "ackley-d3-D0-ei", 1)
    assert s != conveyor.derive_seed(7, "ackley-d3-D1-ei", 0)
    assert 0 <= s < 2**63
    # neighbouring base seeds must not just permute the same trials
    near = {conveyor.derive_seed(b, "k", t) for b in (0, 1) for t in range(30)}
    assert len(near) == 60


def test_run_cells_uses_derived_seeds():
    cell = Cell(surfaces.ackley(2), RANDOM, 1)
    summary = conveyor.run_cells([cell], n_trials=1, n_init=3, budget=8, base_seed=9)
    direct = conveyor.run_trial(TrialConfig(cell.surface, RANDOM, 1, 3, 8,
                                            conveyor.derive_seed(9, cell.key, 0)))
    np.testing.assert_array_equal(summary.records[cell.key][0].y, direct.y)
    assert summary.cells[cell.key].n_trials == 1


def test_failing_cell_is_isolated(monkeypatch):
    good = Cell(surfaces.ackley(2), RANDOM, 0)
    bad = Cell(surfaces.levy(2), StrategySpec("ei", label="boom"), 0)

    def fit(*args, **kwargs):
        raise gp.GPFitError("synthetic failure")

    monkeypatch.setattr(gp, "fit", fit)  # Random never fits a model
    summary = conveyor.run_cells([good, bad], n_trials=2, n_init=3, budget=6, base_seed=0)
    assert summary.cells[good.key].complete
    failed = summary.cells[bad.key]
    assert not failed.complete and not summary.complete
    assert np.isnan(failed.regret_mean)
    assert "synthetic failure" in failed.errors[0] and "step=0" in failed.errors[0]


def test_duplicate_cells_rejected():
    cell = Cell(surfaces.ackley(2), RANDOM, 0)
    with pytest.raises(ValueError):
        conveyor.run_cells([cell, cell], 1, 3, 6)


def test_random_trajectory_ignores_delay():
    runs = [conveyor.run_trial(TrialConfig(surfaces.ackley(3), RANDOM, d, 10, 40, seed=8))
            for d in (0, 3, 7)]
    for rec in runs[1:]:
        np.testing.assert_array_equal(rec.x, runs[0].x)
        np.testing.assert_array_equal(rec.y, runs[0].y)
