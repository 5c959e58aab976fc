"""Stopping rules, single-run semantics, and the pathwise grid evaluator."""

import numpy as np
import pytest

from changediag import models
from changediag.procedures import (
    ProcedureSpec,
    RunOutcome,
    Scenario,
    StatisticBank,
    check_rule,
    pathwise_stop_times,
    run,
    step,
)
from changediag.montecarlo import rng_stream
from conftest import random_llr_paths


class TestRule:
    def test_family_stops_when_both_conditions_hold(self):
        spec = ProcedureSpec("adaptive", b=1.0, h=0.5, num_alternatives=2)
        got = check_rule(spec, np.array([1.2, 0.0]), np.array([0.6, 0.0]))
        assert got == 1

    def test_family_continues_when_isolation_short(self):
        spec = ProcedureSpec("adaptive", b=1.0, h=0.5, num_alternatives=2)
        assert check_rule(spec, np.array([1.2, 0.0]), np.array([0.4, 0.0])) is None

    def test_min_cusum_tie_breaks_to_smallest(self):
        spec = ProcedureSpec("min_cusum", b=1.0, num_alternatives=2)
        assert check_rule(spec, np.array([1.0, 1.0]), np.array([np.inf, np.inf])) == 1

    def test_family_simultaneous_crossing_smallest_index(self):
        spec = ProcedureSpec("matrix", b=1.0, h=0.2, num_alternatives=3)
        got = check_rule(spec, np.array([1.5, 1.5, 0.0]), np.array([0.3, 0.9, 0.0]))
        assert got == 1

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            ProcedureSpec("nope", b=1.0)
        with pytest.raises(ValueError):
            ProcedureSpec("matrix", b=-1.0)
        with pytest.raises(ValueError):
            ProcedureSpec("generalized", b=1.0, h=1.0, num_alternatives=2)


class TestRun:
    def test_zero_thresholds_stop_immediately(self, simultaneous_model):
        spec = ProcedureSpec("adaptive", b=0.0, h=0.0, num_alternatives=3)
        out = run(spec, simultaneous_model, Scenario(nu=None), 100, rng_stream(1, 0))
        assert out.stopping_time == 1 and not out.censored

    def test_horizon_censors(self, scalar_model):
        spec = ProcedureSpec("min_cusum", b=200.0, num_alternatives=1)
        out = run(spec, scalar_model, Scenario(nu=None), 5, rng_stream(1, 1))
        assert out == RunOutcome(5, None, True, 5, None)

    def test_mean_delay_near_threshold_over_divergence(self, scalar_model):
        # E[T] for the single CuSum at threshold b is close to b / 0.5 = 16
        spec = ProcedureSpec("min_cusum", b=8.0, num_alternatives=1)
        times = [
            run(spec, scalar_model, Scenario(nu=0, j=1), 10_000, rng_stream(3, k)).stopping_time
            for k in range(300)
        ]
        assert np.mean(times) == pytest.approx(16.0, rel=0.25)

    def test_stopped_after_change_flag(self, scalar_model):
        spec = ProcedureSpec("min_cusum", b=0.0, num_alternatives=1)
        out = run(spec, scalar_model, Scenario(nu=3, j=1), 100, rng_stream(4, 0))
        assert out.stopping_time == 1 and out.stopped_after_change is False

    def test_unwindowed_generalized_warns_on_long_horizon(self, scalar_model):
        spec = ProcedureSpec("generalized_full", b=0.0, h=0.0, num_alternatives=1)
        with pytest.warns(UserWarning, match="O\\(n\\) per step"):
            run(spec, scalar_model, Scenario(nu=None), 20_000, rng_stream(2, 0))

    def test_single_alternative_family_degenerates_to_cusum(self, scalar_model):
        # identical observation streams: family stopping equals plain CuSum
        for k in range(20):
            t_family = run(
                ProcedureSpec("adaptive", b=2.0, h=5.0, num_alternatives=1),
                scalar_model, Scenario(nu=0, j=1), 1000, rng_stream(5, k),
            ).stopping_time
            t_cusum = run(
                ProcedureSpec("min_cusum", b=2.0, num_alternatives=1),
                scalar_model, Scenario(nu=0, j=1), 1000, rng_stream(5, k),
            ).stopping_time
            assert t_family == t_cusum

    def test_decision_uses_no_lookahead(self, simultaneous_model):
        # replaying the first T observations reproduces the same outcome
        spec = ProcedureSpec("adaptive", b=1.5, h=0.3, num_alternatives=3)
        recorded = []
        rng = rng_stream(6, 0)

        class Recorder:
            def __init__(self, density):
                self.density = density

            def sampler(self, rng, m):
                x = self.density.sampler(rng, m)
                recorded.extend(x)
                return x

            @property
            def log_density(self):
                return self.density.log_density

        wrapped = models.ChangeModel(
            f=models.Density(
                simultaneous_model.f.log_density,
                Recorder(simultaneous_model.f).sampler,
                dim=2,
            ),
            alternatives=simultaneous_model.alternatives,
        )
        out = run(spec, wrapped, Scenario(nu=None), 500, rng)
        assert not out.censored
        assert len(recorded) == out.stopping_time

        bank = StatisticBank(spec)
        redo = None
        for x in recorded:
            redo = step(spec, bank, np.asarray(x), simultaneous_model)
        assert redo == out.decision


def statistic_paths(llr, variant, window=None):
    K = llr.shape[1]
    spec = ProcedureSpec(variant, 0.0, 0.0, K, window)
    bank = StatisticBank(spec)
    Y = np.empty_like(llr)
    W = np.empty_like(llr)
    for t in range(llr.shape[0]):
        bank.advance(llr[t])
        Y[t] = bank.cusums.values
        W[t] = bank.isolation
    return Y, W


class TestPathwiseStopTimes:
    def test_degenerate_grid_matches_step_loop(self):
        rng = np.random.default_rng(21)
        llr = rng.normal(size=(40, 2))
        Y, W = statistic_paths(llr, "adaptive")
        T, D = pathwise_stop_times(Y, W, [0.8], [0.3])

        spec = ProcedureSpec("adaptive", 0.8, 0.3, 2)
        bank = StatisticBank(spec)
        expected = (-1, -1)
        for t in range(40):
            bank.advance(llr[t])
            from changediag.procedures import check_rule

            d = check_rule(spec, bank.cusums.values, bank.isolation)
            if d is not None:
                expected = (t + 1, d)
                break
        assert (T[0, 0], D[0, 0]) == expected

    def test_grid_equivalence_on_random_paths(self):
        rng = np.random.default_rng(22)
        b_grid = np.array([0.2, 0.6, 1.0, 1.4])
        h_grid = np.array([0.1, 0.4, 0.7, 1.0])
        for llr in random_llr_paths(rng, 50, 30, 2):
            Y, W = statistic_paths(llr, "matrix")
            T, D = pathwise_stop_times(Y, W, b_grid, h_grid)
            for bi, b in enumerate(b_grid):
                for hi, h in enumerate(h_grid):
                    spec = ProcedureSpec("matrix", float(b), float(h), 2)
                    bank = StatisticBank(spec)
                    expected = (-1, -1)
                    for t in range(30):
                        bank.advance(llr[t])
                        d = check_rule(spec, bank.cusums.values, bank.isolation)
                        if d is not None:
                            expected = (t + 1, d)
                            break
                    assert (T[bi, hi], D[bi, hi]) == expected

    def test_monotone_in_both_thresholds(self):
        rng = np.random.default_rng(23)
        b_grid = np.arange(0.0, 2.01, 0.25)
        h_grid = np.arange(0.05, 1.06, 0.25)
        for llr in random_llr_paths(rng, 25, 60, 3):
            Y, W = statistic_paths(llr, "adaptive")
            T, _ = pathwise_stop_times(Y, W, b_grid, h_grid)
            T = np.where(T < 0, np.iinfo(np.int64).max, T)
            assert np.all(np.diff(T, axis=0) >= 0)
            assert np.all(np.diff(T, axis=1) >= 0)

    def test_isolation_condition_only_delays(self):
        # the family stopping time is never before the plain detection time
        rng = np.random.default_rng(24)
        b_grid = np.arange(0.0, 2.01, 0.5)
        for llr in random_llr_paths(rng, 25, 60, 3):
            for variant in ("matrix", "adaptive", "vector"):
                Y, W = statistic_paths(llr, variant)
                T, _ = pathwise_stop_times(Y, W, b_grid, [0.5])
                T = np.where(T < 0, np.iinfo(np.int64).max, T)
                detect = pathwise_stop_times(Y, np.full_like(W, np.inf), b_grid, [0.0])[0]
                detect = np.where(detect < 0, np.iinfo(np.int64).max, detect)
                assert np.all(T[:, 0] >= detect[:, 0])
