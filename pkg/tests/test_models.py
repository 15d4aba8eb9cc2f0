import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bell_lab.errors import ConfigurationError, ContractError, InputError, StatisticalError
from bell_lab.models import (
    CHVM, LRHVM, SHVM, Discrete, Family, Fixed, QuantumModel, RotationalCHVM, Shared, Uniform,
    analytic_expectation, chvm_trial, lrhvm_outcomes, model_from_name, monte_carlo_expectation,
    rotational_chvm_trial, sawtooth, sign, statistical_independence_check,
)
from bell_lab.quantum import QuantumState
from bell_lab.streams import substream

STANDARD_PAIRS = [(0.0, math.pi / 4), (0.0, 3 * math.pi / 4),
                  (math.pi / 2, math.pi / 4), (math.pi / 2, 3 * math.pi / 4)]


def sawtooth_oracle(theta):
    # fraction of lambda on the circle where sign cos(tx - l) == sign cos(ty - l)
    # is 1 - phi/pi for phi in [0, pi]; B carries an extra minus sign
    phi = abs(math.atan2(math.sin(theta), math.cos(theta)))
    agree = 1 - phi / math.pi
    return -(2 * agree - 1)


class TestSign:
    def test_zero_maps_to_plus(self):
        assert sign(0.0) == 1
        assert list(sign(np.array([-2.0, 0.0, 3.0]))) == [-1, 1, 1]


class TestLRHVM:
    @given(st.floats(-10, 10))
    def test_sawtooth_matches_oracle(self, theta):
        assert sawtooth(theta) == pytest.approx(sawtooth_oracle(theta), abs=1e-12)

    def test_perfect_anticorrelation_at_equal_angles(self):
        m = LRHVM()
        a, b, _ = m.sample(0.4, 0.4, 10_000, substream(1, "t"))
        assert np.all(a == -b)

    @pytest.mark.parametrize("tx,ty", [(0.0, 0.0), (0.0, 1.0), (0.3, 2.5), (-1.0, 4.0)])
    def test_monte_carlo_matches_sawtooth(self, tx, ty):
        e, se = monte_carlo_expectation(LRHVM(), tx, ty, 200_000, seed=5)
        assert abs(e - sawtooth(tx - ty)) < 4 * max(se, 1e-3)

    def test_outcomes_are_deterministic_in_lambda(self):
        lam = np.linspace(0, 2 * math.pi, 101)
        np.testing.assert_array_equal(lrhvm_outcomes(lam, 0.7, "A"), lrhvm_outcomes(lam, 0.7, "A"))
        assert lrhvm_outcomes(0.0, 0.0, "A") == 1
        assert lrhvm_outcomes(0.0, 0.0, "B") == -1

    def test_custom_outcome_must_be_pm1(self):
        m = LRHVM(outcome_a=lambda lam, th: np.zeros_like(lam))
        with pytest.raises(ConfigurationError):
            m.sample(0, 0, 10, substream(0))

    def test_custom_model_has_no_closed_form(self):
        m = LRHVM(source=Uniform(0, math.pi))
        assert analytic_expectation(m, 0, 1) is None

    def test_quadruples_share_lambda(self):
        m = LRHVM()
        lam = m.draw_lambda(1000, substream(2))
        a, ap, b, bp = m.quadruples(lam, 0, math.pi / 2, math.pi / 4, 3 * math.pi / 4)
        s = a.astype(int) * b - a.astype(int) * bp + ap.astype(int) * b + ap.astype(int) * bp
        assert set(np.abs(s)) == {2}

    def test_bad_arm(self):
        with pytest.raises(InputError):
            lrhvm_outcomes(0.0, 0.0, "C")


class TestSHVM:
    @pytest.mark.parametrize("tx,ty", [(0.0, 0.0), (0.0, 0.5), (1.0, 2.3)])
    def test_monte_carlo_matches_closed_form(self, tx, ty):
        m = SHVM()
        e, se = monte_carlo_expectation(m, tx, ty, 200_000, seed=9)
        assert abs(e - (-math.cos(2 * (tx - ty)) / 2)) < 4 * se

    def test_max_chsh_below_two(self):
        # |E| <= 1/2 for every pair, so S never leaves [-2, 2]
        m = SHVM()
        assert all(abs(m.expectation(x, y)) <= 0.5 for x, y in STANDARD_PAIRS)

    def test_probability_out_of_range(self):
        m = SHVM(prob_a=lambda lam, th: np.full_like(lam, 1.5))
        with pytest.raises(ConfigurationError):
            m.sample(0, 0, 5, substream(0))


class TestSamplers:
    def test_discrete_probabilities_validated(self):
        with pytest.raises(ConfigurationError):
            Discrete((0.0, 1.0), (0.5, 0.6))

    def test_uniform_range_validated(self):
        with pytest.raises(ConfigurationError):
            Uniform(1.0, 1.0)

    def test_fixed_and_shared(self):
        rng = substream(0)
        assert np.all(Fixed(2.0).sample(3, rng) == 2.0)
        assert Fixed((1.0, 2.0)).sample(3, rng).shape == (3, 2)
        lam = Shared(Uniform()).sample(5, rng)
        assert np.all(lam[:, 0] == lam[:, 1])


class TestContextual:
    def test_reference_rotational_matches_minus_cos(self):
        m = RotationalCHVM()
        for tx, ty in [(0.0, 0.0), (0.2, 1.9), (1.0, 1.0 + math.pi)]:
            e, se = monte_carlo_expectation(m, tx, ty, 200_000, seed=4)
            assert abs(e + math.cos(tx - ty)) < 4 * max(se, 1e-3)

    def test_reference_marginals_are_unbiased(self):
        a, b, _ = RotationalCHVM().sample(0.3, 1.4, 200_000, substream(8))
        assert abs(a.mean()) < 4 / math.sqrt(200_000)
        assert abs(b.mean()) < 4 / math.sqrt(200_000)

    def test_trace_carries_setting_information(self):
        _, _, tr = RotationalCHVM().sample(0.3, 1.4, 10, substream(1), trace=True)
        assert np.all(tr["mu_x"][:, 0] == 0.3)
        assert np.all(tr["mu_y"][:, 0] == 1.4)
        assert np.allclose(tr["mu_y"][:, 3], math.cos(0.3 - 1.4))

    def test_kernel_bounds_enforced(self):
        m = RotationalCHVM(kernel=lambda mu, c: np.column_stack([mu[:, 1], mu[:, 2], 3 * c]),
                           kernel_bounds=((0, 1), (0, 1), (-1, 1)))
        with pytest.raises(ConfigurationError):
            m.sample(0.0, 0.1, 100, substream(0))

    def test_generic_chvm(self):
        class Inst:
            def __init__(self, tx, ty):
                self.tx, self.ty = tx, ty

            def sample(self, n, rng):
                return np.column_stack([np.full(n, self.tx), np.full(n, self.ty)])

        m = CHVM(Shared(Uniform(0, 2 * math.pi)), Inst,
                 lambda th, lam, mu: sign(np.cos(lam - mu)),
                 lambda th, lam, mu: -sign(np.cos(lam - mu)))
        out = chvm_trial(m, (0.0, 1.0), substream(0))
        assert out.a in (1, -1) and out.b in (1, -1)
        assert set(out.hidden_trace) == {"lambda1", "lambda2", "mu_x", "mu_y"}
        with pytest.raises(ContractError):
            chvm_trial(LRHVM(), (0, 0), substream(0))

    def test_rotational_trial(self):
        out = rotational_chvm_trial(RotationalCHVM(), (0.0, 0.5), substream(3))
        assert out.hidden_trace["mu_y"][0] == 0.5
        with pytest.raises(ContractError):
            rotational_chvm_trial(SHVM(), (0, 0), substream(0))


class TestQuantumModel:
    def test_sampling_matches_correlation(self):
        e, se = monte_carlo_expectation(QuantumModel(), 0.0, math.pi / 3, 200_000, seed=1)
        assert abs(e + 0.5) < 4 * se

    def test_custom_state(self):
        m = QuantumModel(QuantumState.from_vector([1, 0, 0, 0]))
        assert m.expectation(0, 0) == pytest.approx(1.0)
        assert m.moments(0, 0)[:2] == pytest.approx((1.0, 1.0))


class TestFactory:
    @pytest.mark.parametrize("name,cls", [("lrhvm", LRHVM), ("SHVM", SHVM), ("rot-chvm", RotationalCHVM),
                                          ("quantum", QuantumModel)])
    def test_names(self, name, cls):
        assert isinstance(model_from_name(name), cls)

    @pytest.mark.parametrize("name", ["chvm", "nonsense"])
    def test_unavailable(self, name):
        with pytest.raises(ConfigurationError):
            model_from_name(name)

    def test_family_tags(self):
        assert RotationalCHVM().family is Family.ROT_CHVM


class TestIndependenceCheck:
    def test_rotational_settings_recoverable(self):
        r = statistical_independence_check(RotationalCHVM(), STANDARD_PAIRS, n_per_pair=20_000, seed=3)
        assert r.recovery_accuracy == 1.0
        assert r.setting_recoverable
        assert r.measurement_independent
        assert "contextual" in r.taxonomy

    def test_rotational_mu_y_depends_on_setting_pair(self):
        r = statistical_independence_check(RotationalCHVM(), STANDARD_PAIRS, n_per_pair=100_000, seed=3)
        mu_y = [v for v in r.variables if v.name.startswith("mu_y")]
        assert any(v.dependent for v in mu_y)
        assert not any(v.dependent for v in r.variables if v.name.startswith("lambda"))

    def test_lrhvm_settings_not_recoverable(self):
        r = statistical_independence_check(LRHVM(), STANDARD_PAIRS, n_per_pair=20_000, seed=3)
        assert r.measurement_independent
        assert not r.setting_recoverable
        assert r.recovery_accuracy < 0.3
        assert r.taxonomy.startswith("measurement-independent")

    def test_setting_dependent_source_detected(self):
        # lambda drawn from a distribution that depends on the settings
        class Leaky(LRHVM):
            def sample(self, tx, ty, n, rng, trace=False):
                lam = rng.uniform(tx, tx + 1.0, size=n)
                a = self.outcome(lam, tx, "A")
                b = self.outcome(lam, ty, "B")
                return a, b, {"lambda1": lam, "lambda2": lam}

        r = statistical_independence_check(Leaky(), STANDARD_PAIRS, n_per_pair=5_000, seed=0)
        assert not r.measurement_independent
        assert "violated" in r.taxonomy

    def test_too_few_trials(self):
        with pytest.raises(StatisticalError) as info:
            statistical_independence_check(LRHVM(), STANDARD_PAIRS, n_per_pair=10, bins=16)
        assert info.value.required == 80

    def test_quantum_has_no_trace(self):
        with pytest.raises(ContractError):
            statistical_independence_check(QuantumModel(), STANDARD_PAIRS, n_per_pair=1000)
