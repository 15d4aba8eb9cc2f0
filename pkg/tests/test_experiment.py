import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bell_lab.completeness import RunSeries, homogeneity_guard
from bell_lab.errors import ContractError, InputError, InvariantViolation, StatisticalError
from bell_lab.experiment import (
    MIN_COUPLING_N, boundary_setup, bootstrap_se, chsh_from_pairs, chsh_from_quadruples,
    coupling_check, interior_setup, run_counterfactual_experiment, run_pair_experiments,
    violation_frequency,
)
from bell_lab.models import LRHVM, SHVM, QuantumModel, RotationalCHVM
from bell_lab.sheets import (
    COUNT_HEADER, PAIR_HEADER, CountTable, Design, PairSheet, QuadrupleSheet, SettingPair,
    chsh_value, count_table_to_rows, pair_sheets_to_rows, read_count_table, read_pair_sheets,
    read_quadruples, quadruples_to_rows, rows_to_csv,
)
from bell_lab.streams import substream

STD = Design.standard()


def pm1_rows(n):
    return arrays(np.int8, (n, 4), elements=st.sampled_from([-1, 1]))


class TestSheets:
    def test_pair_sheet_validates(self):
        with pytest.raises(InputError):
            PairSheet(SettingPair(0, 0), [1, 0], [1, 1])
        with pytest.raises(InputError):
            PairSheet(SettingPair(0, 0), [1, -1], [1])

    def test_counts_layout(self):
        s = PairSheet(SettingPair(0, 1), [1, 1, -1], [1, -1, -1])
        np.testing.assert_array_equal(s.counts(), [[1, 1], [0, 1]])

    def test_count_table_requires_all_pairs(self):
        s = PairSheet(SettingPair(0, 0), [1], [1])
        with pytest.raises(InputError):
            CountTable.from_sheets([s])
        with pytest.raises(InputError):
            CountTable.from_sheets([s, s, s, s])

    def test_design_rejects_nan(self):
        with pytest.raises(InputError):
            Design(0, math.nan, 0, 0)

    def test_pair_sheet_csv_round_trip(self):
        sheets = run_pair_experiments(QuantumModel(), STD, 50, seed=1)
        text = rows_to_csv(PAIR_HEADER, pair_sheets_to_rows(sheets), ["comment"])
        back = read_pair_sheets(io.StringIO(text), STD)
        for s, t in zip(sheets, back):
            np.testing.assert_array_equal(s.a, t.a)
            np.testing.assert_array_equal(s.b, t.b)
            np.testing.assert_array_equal(s.trial, t.trial)

    def test_quadruple_csv_round_trip(self):
        q = QuadrupleSheet.from_rows(np.array([[1, -1, 1, 1], [-1, -1, 1, -1]]))
        text = rows_to_csv(["trial", "a", "a_prime", "b", "b_prime"], quadruples_to_rows(q))
        np.testing.assert_array_equal(read_quadruples(io.StringIO(text)).rows(), q.rows())

    def test_count_table_csv_round_trip(self):
        c = CountTable(np.arange(16).reshape(4, 2, 2))
        text = rows_to_csv(COUNT_HEADER, count_table_to_rows(c))
        np.testing.assert_array_equal(read_count_table(io.StringIO(text)).counts, c.counts)

    @pytest.mark.parametrize("text", [
        "trial,a,b\n0,1,1\n",
        "trial,setting_x,setting_y,a,b\n0,z,y,1,1\n",
        "trial,setting_x,setting_y,a,b\n0,x,y,2,1\n",
        "trial,setting_x,setting_y,a,b\n0,x,y,one,1\n",
    ])
    def test_malformed_pair_csv(self, text):
        with pytest.raises(InputError):
            read_pair_sheets(io.StringIO(text))


class TestQuadrupleChsh:
    def test_all_sixteen_rows_give_two(self):
        for row in itertools.product((1, -1), repeat=4):
            a, ap, b, bp = row
            s = chsh_value((a * b, a * bp, ap * b, ap * bp))
            assert abs(s) == 2

    @settings(max_examples=200)
    @given(pm1_rows(60))
    def test_sheet_never_exceeds_two(self, rows):
        r = chsh_from_quadruples(QuadrupleSheet.from_rows(rows))
        assert abs(r.S) <= 2
        assert not r.violated

    def test_crafted_pair_sheets_reach_four(self):
        # (x,y), (x',y), (x',y') agree; (x,y') anti-agree: S = 1 - (-1) + 1 + 1 = 4
        sheets = [PairSheet(p, [1], [1 if p.name != "xy'" else -1]) for p in STD.pairs()]
        assert chsh_from_pairs(sheets).S == 4

    def test_lrhvm_counterfactual_sheet(self):
        q = run_counterfactual_experiment(LRHVM(), STD, 5000, seed=2)
        r = chsh_from_quadruples(q)
        assert abs(r.S) <= 2
        # the sign model sits exactly on the bound at the standard angles
        assert abs(r.S) == 2

    @pytest.mark.parametrize("model", [SHVM(), RotationalCHVM(), QuantumModel()])
    def test_quadruples_need_counterfactual_definiteness(self, model):
        with pytest.raises(ContractError):
            run_counterfactual_experiment(model, STD, 10, seed=0)

    def test_empty_sheet(self):
        with pytest.raises(InputError):
            chsh_from_quadruples(QuadrupleSheet.from_rows(np.zeros((0, 4))))


class TestPairExperiments:
    def test_sheet_sizes_and_trial_ids(self):
        sheets = run_pair_experiments(LRHVM(), STD, 777, seed=3)
        assert [s.n for s in sheets] == [777] * 4
        ids = np.concatenate([s.trial for s in sheets])
        assert len(np.unique(ids)) == len(ids)

    def test_worker_count_does_not_matter(self):
        one = run_pair_experiments(QuantumModel(), STD, 40_000, seed=4, workers=1)
        many = run_pair_experiments(QuantumModel(), STD, 40_000, seed=4, workers=3)
        for s, t in zip(one, many):
            np.testing.assert_array_equal(s.a, t.a)
            np.testing.assert_array_equal(s.trial, t.trial)

    def test_quantum_violates(self):
        r = chsh_from_pairs(run_pair_experiments(QuantumModel(), STD, 50_000, seed=5))
        assert abs(abs(r.S) - 2 * math.sqrt(2)) < 4 * r.se_S
        assert r.violated

    def test_se_against_bootstrap(self):
        sheets = run_pair_experiments(QuantumModel(), STD, 2000, seed=6)
        r = chsh_from_pairs(sheets)
        assert bootstrap_se(sheets, 400, seed=1) == pytest.approx(r.se_S, rel=0.15)

    def test_empty_sheet_rejected(self):
        sheets = [PairSheet(p, [], []) for p in STD.pairs()]
        with pytest.raises(InputError):
            chsh_from_pairs(sheets)

    def test_any_pair_sheets_bounded_by_four(self):
        rng = substream(0)
        for _ in range(50):
            sheets = [PairSheet(p, rng.choice([-1, 1], 5), rng.choice([-1, 1], 5)) for p in STD.pairs()]
            assert abs(chsh_from_pairs(sheets).S) <= 4


class TestViolationFrequency:
    def test_true_values_of_setups(self):
        model, design = boundary_setup()
        e = [model.expectation(p.theta_x, p.theta_y) for p in design.pairs()]
        assert abs(chsh_value(e)) == pytest.approx(2.0, abs=1e-12)
        model, design = interior_setup()
        e = [model.expectation(p.theta_x, p.theta_y) for p in design.pairs()]
        assert abs(chsh_value(e)) == pytest.approx(1.0, abs=1e-12)

    def test_interior_rarely_violates(self):
        model, design = interior_setup()
        r = violation_frequency(model, design, 1000, 100, seed=1)
        assert r.violations == 0
        assert r.ci_low == 0.0

    def test_interior_fraction_falls_as_n_doubles(self):
        model, design = interior_setup()
        f = [violation_frequency(model, design, n, 1000, seed=2).fraction for n in (4, 8, 16, 32, 64)]
        assert f == sorted(f, reverse=True)
        assert f[0] > 0.03 and f[-1] == 0.0

    def test_minimum_replications(self):
        with pytest.raises(InputError):
            violation_frequency(LRHVM(), STD, 10, 10, seed=0)


class TestCoupling:
    def test_model_matches_own_data(self):
        sheets = run_pair_experiments(QuantumModel(), STD, 5000, seed=7)
        r = coupling_check(QuantumModel(), sheets)
        assert len(r.tests) == 16
        assert r.passed and r.reliable

    def test_wrong_model_rejected(self):
        sheets = run_pair_experiments(QuantumModel(), STD, 5000, seed=7)
        r = coupling_check(LRHVM(), sheets)
        assert not r.passed
        assert any(t.name == "mean_AB" for t in r.failures)

    def test_inconsistent_marginals_flagged(self):
        sheets = list(run_pair_experiments(LRHVM(), STD, 2000, seed=8))
        s = sheets[0]
        sheets[0] = PairSheet(s.setting, np.ones(s.n, dtype=int), -np.ones(s.n, dtype=int))
        r = coupling_check(LRHVM(), sheets)
        assert any(t.name == "cross_A" for t in r.failures)

    def test_guard_failure_annotates(self):
        sheets = run_pair_experiments(QuantumModel(), STD, 500, seed=9)
        rng = substream(1)
        p = np.linspace(0.2, 0.8, 4000)
        drift = [RunSeries(np.where(rng.random(4000) < p, 1, -1), i) for i in range(2)]
        guard = homogeneity_guard(drift)
        assert not guard.passed
        r = coupling_check(QuantumModel(), sheets, guard=guard)
        assert not r.reliable
        assert "unreliable" in r.annotation

    def test_monte_carlo_fallback_for_custom_models(self):
        m = LRHVM(outcome_a=lambda lam, th: np.where(np.cos(th - lam) >= 0, 1, -1))
        sheets = run_pair_experiments(LRHVM(), STD, 3000, seed=10)
        assert coupling_check(m, sheets, mc_n=200_000).passed

    def test_small_sheets_refused(self):
        sheets = run_pair_experiments(QuantumModel(), STD, MIN_COUPLING_N - 1, seed=1)
        with pytest.raises(StatisticalError):
            coupling_check(QuantumModel(), sheets)

    def test_sheets_without_angles(self):
        sheets = [PairSheet(SettingPair(i, j), [1] * 40, [1] * 40) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1))]
        with pytest.raises(InputError):
            coupling_check(QuantumModel(), sheets)


def test_invariant_violation_is_an_assertion():
    assert issubclass(InvariantViolation, AssertionError)
