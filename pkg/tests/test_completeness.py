import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bell_lab.completeness import (
    RunSeries, fine_structure, homogeneity_guard, lagged_correlation, periodogram, purity_test,
    read_run_series, run_lengths, run_series_rows, runs_test, subensemble_size,
)
from bell_lab.errors import InputError, StatisticalError
from bell_lab.sheets import rows_to_csv
from bell_lab.streams import substream


def coin(seed, n, p=0.5, key="coin"):
    rng = substream(seed, key)
    return np.where(rng.random(n) < p, 1, -1)


class TestRunSeries:
    def test_validation(self):
        with pytest.raises(InputError):
            RunSeries([])
        with pytest.raises(InputError):
            RunSeries([1, 0, 1])
        with pytest.raises(InputError):
            RunSeries([1, 1], alphabet=(1,))

    def test_custom_alphabet(self):
        r = RunSeries(["a", "b", "c", "a"], alphabet=("a", "b", "c"))
        assert r.codes().tolist() == [0, 1, 2, 0]

    def test_csv_round_trip(self):
        r = RunSeries(coin(1, 50))
        text = rows_to_csv(["trial", "outcome"], run_series_rows(r), ["header comment"])
        back = read_run_series(io.StringIO(text))
        np.testing.assert_array_equal(back.outcomes, r.outcomes)

    def test_bad_csv(self):
        with pytest.raises(InputError):
            read_run_series(io.StringIO("t,o\n0,1\n"))
        with pytest.raises(InputError):
            read_run_series(io.StringIO("trial,outcome\n0,x\n"))


class TestPrimitives:
    def test_run_lengths(self):
        assert run_lengths(np.array([0, 0, 1, 0, 0, 0])).tolist() == [2, 1, 3]
        assert run_lengths(np.array([1])).tolist() == [1]

    def test_subensemble_size(self):
        assert subensemble_size(10_000) == 2000
        assert subensemble_size(1500) == 500
        assert subensemble_size(600) == 300

    @settings(max_examples=50)
    @given(st.integers(20, 400))
    def test_alternating_autocorrelation_exact(self, n):
        x = np.array([1, -1] * n)
        for k in range(1, len(x) // 10):
            assert lagged_correlation(x, k) == (-1) ** k

    def test_lag_zero(self):
        assert lagged_correlation(np.array([0.1, 2.0, -1.0]), 0) == 1.0

    def test_float_series_correlation(self):
        x = np.sin(np.arange(400) * 0.3)
        assert lagged_correlation(x, 1) == pytest.approx(np.corrcoef(x[:-1], x[1:])[0, 1])

    def test_periodogram_parseval(self):
        # the Fourier ordinates excluding 0 and n/2 carry the whole variance for odd n
        x = substream(3).standard_normal(1001)
        f, p = periodogram(x)
        assert len(f) == 500
        assert p.sum() * 2 / len(x) == pytest.approx(1.0)

    def test_runs_test_alternating(self):
        z, p = runs_test(np.array([1, -1] * 500))
        assert z > 30 and p < 1e-100


class TestPurity:
    def test_iid_runs_pass(self):
        runs = [RunSeries(coin(2, 10_000, key=f"r{i}"), i) for i in range(3)]
        r = purity_test(runs, seed=1)
        assert r.verdict == "pass"
        assert all(0 <= t.p_value <= 1 for t in r.tests)
        # symbol, block2, three KS pairs, one sub-ensemble per run
        assert r.n_tests == 1 + 1 + 3 + 3

    def test_biased_runs_rejected(self):
        runs = [RunSeries(coin(3, 10_000, 0.3), 0), RunSeries(coin(4, 10_000, 0.7), 1)]
        r = purity_test(runs)
        assert r.rejected
        assert r.test("symbol").p_value < 1e-100

    def test_planted_mixture_in_one_run(self):
        mixed = np.concatenate([coin(5, 5000, 0.3), coin(6, 5000, 0.7)])
        runs = [RunSeries(mixed, 0), RunSeries(coin(7, 10_000), 1)]
        r = purity_test(runs, resamples=3, seed=2)
        assert r.rejected
        assert all(r.test(f"subensemble[0#{k}]").p_value < 1e-10 for k in range(3))

    def test_relabelling_invariance(self):
        runs = [RunSeries(coin(8, 4000, 0.45), 0), RunSeries(coin(9, 4000, 0.55), 1)]
        flipped = [RunSeries(-r.outcomes, r.run_id) for r in runs]
        a = purity_test(runs, block_length=3, resamples=2, seed=4)
        b = purity_test(flipped, block_length=3, resamples=2, seed=4)
        for s, t in zip(a.tests, b.tests):
            assert s.p_value == pytest.approx(t.p_value, rel=1e-12, abs=1e-300)

    def test_short_runs(self):
        with pytest.raises(StatisticalError) as info:
            purity_test([RunSeries(coin(1, 150)), RunSeries(coin(2, 150))], block_length=2)
        assert info.value.required == 200

    def test_single_run(self):
        with pytest.raises(StatisticalError):
            purity_test([RunSeries(coin(1, 1000))])

    def test_alphabet_mismatch(self):
        with pytest.raises(InputError):
            purity_test([RunSeries(coin(1, 500)), RunSeries(np.ones(500, int), alphabet=(1, 2))],
                        block_length=1)


class TestGuard:
    def test_homogeneous_pass(self):
        runs = [RunSeries(coin(1, 10_000, key=f"g{i}"), i) for i in range(2)]
        assert homogeneity_guard(runs).passed

    def test_drift_fails(self):
        rng = substream(2)
        p = np.linspace(0.4, 0.6, 10_000)
        runs = [RunSeries(np.where(rng.random(10_000) < p, 1, -1), i) for i in range(2)]
        g = homogeneity_guard(runs)
        assert not g.passed
        assert "FAIL" in g.lines()[0]


class TestFineStructure:
    def test_alternating_series_flagged(self):
        r = fine_structure(RunSeries(np.array([1, -1] * 5000)), max_lag=20)
        assert r.symbol_frequency[1] == 0.5
        assert r.acf[0] == 1.0
        assert r.acf[1] == -1.0
        assert 1 in r.acf_flags
        assert r.acf_rejects

    def test_period_eight(self):
        t = np.arange(10_000)
        rng = substream(3)
        x = np.where(rng.random(10_000) < 0.5 + 0.2 * np.cos(2 * np.pi * t / 8), 1, -1)
        r = fine_structure(RunSeries(x))
        assert r.peak_frequency == 0.125
        assert 0.125 in r.power_flags
        assert r.periodogram_rejects

    def test_iid_mostly_within_band(self):
        r = fine_structure(RunSeries(coin(4, 10_000)), max_lag=50)
        assert len(r.acf_flags) <= 4

    def test_constant_series_degenerate(self):
        r = fine_structure(RunSeries(np.ones(300, int)), max_lag=20)
        assert r.degenerate
        assert r.acf == []
        assert "undefined" in r.lines()[0]
        assert r.rows()[0][0] == "degenerate"

    def test_too_short(self):
        with pytest.raises(StatisticalError) as info:
            fine_structure(RunSeries(coin(1, 150)), max_lag=20)
        assert info.value.required == 200

    def test_report_rows(self):
        r = fine_structure(RunSeries(coin(5, 400)), max_lag=5)
        kinds = {row[0] for row in r.rows()}
        assert kinds == {"acf", "periodogram", "runs"}


@pytest.mark.slow
class TestCalibration:
    def test_rejection_rates_near_alpha(self):
        reps = 300
        counts = {"symbol": 0, "purity": 0, "acf": 0, "periodogram": 0, "runs": 0}
        for i in range(reps):
            runs = [RunSeries(coin(i, 5000, key="cal-a"), 0), RunSeries(coin(i, 5000, key="cal-b"), 1)]
            p = purity_test(runs, seed=i)
            counts["symbol"] += p.test("symbol").rejects(0.01)
            counts["purity"] += p.rejected
            f = fine_structure(runs[0])
            counts["acf"] += f.acf_rejects
            counts["periodogram"] += f.periodogram_rejects
            counts["runs"] += f.runs_rejects
        # 300 draws of Bernoulli(0.01): 12 or more has probability < 0.1%
        assert all(c <= 11 for c in counts.values())
