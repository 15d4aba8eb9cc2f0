import math

import numpy as np
import pytest

from bell_lab.coincidence import (
    DelayModel, EventStream, JitterDelay, PowerDelay, REFERENCE_WINDOW, WindowPolicy, ZeroDelay,
    coincidence_chsh_scan, generate_event_streams, pair_coincidences, reference_delay_model,
    setting_independent_delay_model, zero_delay_model,
)
from bell_lab.errors import ConfigurationError, InputError
from bell_lab.sheets import Design

STD = Design.standard()


def stream(arm, times, settings=None, outcomes=None):
    n = len(times)
    return EventStream(arm, np.asarray(times, float), outcomes if outcomes is not None else np.ones(n),
                       settings if settings is not None else np.zeros(n), np.arange(n))


def oracle_pairs(ta, tb, half):
    """Greedy earliest-first reference: each A takes the earliest unused B in its window."""
    used = set()
    out = []
    for i, t in enumerate(ta):
        for j, u in enumerate(tb):
            if j not in used and t - half <= u <= t + half:
                used.add(j)
                out.append((i, j))
                break
    return out


class TestGeneration:
    def test_zero_delay_pairs_everything(self):
        a, b = generate_event_streams(zero_delay_model(), STD, 5000, seed=1)
        np.testing.assert_array_equal(a.t, b.t)
        for w in (1e-12, 1e-6, 1.0):
            co = pair_coincidences(a, b, WindowPolicy(w), STD)
            assert co.report.retained == 5000
            assert co.report.mismatched == 0

    def test_streams_sorted_and_delays_bounded(self):
        m = reference_delay_model()
        a, b = generate_event_streams(m, STD, 20_000, seed=2)
        assert a.is_sorted and b.is_sorted
        order_a = np.argsort(a.trial_id)
        order_b = np.argsort(b.trial_id)
        d = a.t[order_a] - b.t[order_b]
        assert np.all(np.abs(d) <= m.max_delay)

    def test_schedule_respected(self):
        x = np.array([0, 1, 1, 0])
        y = np.array([1, 1, 0, 0])
        a, b = generate_event_streams(zero_delay_model(), STD, 4, seed=0, schedule=(x, y))
        np.testing.assert_array_equal(a.setting[np.argsort(a.trial_id)], x)
        np.testing.assert_array_equal(b.setting[np.argsort(b.trial_id)], y)

    def test_delay_above_declared_max(self):
        m = DelayModel(PowerDelay(2e-6), max_delay=1e-6)
        with pytest.raises(ConfigurationError):
            generate_event_streams(m, STD, 100, seed=0)

    def test_worker_count_does_not_matter(self):
        m = reference_delay_model()
        a1, b1 = generate_event_streams(m, STD, 150_000, seed=3, workers=1)
        a2, b2 = generate_event_streams(m, STD, 150_000, seed=3, workers=4)
        np.testing.assert_array_equal(a1.t, a2.t)
        np.testing.assert_array_equal(b1.outcome, b2.outcome)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            generate_event_streams(zero_delay_model(), STD, 0, seed=0)
        with pytest.raises(ConfigurationError):
            DelayModel(ZeroDelay(), 0.0, rate=0.0)


class TestPairing:
    def test_two_events_within_half_window(self):
        co = pair_coincidences(stream("A", [1.0]), stream("B", [1.4]), WindowPolicy(1.0))
        assert co.report.retained == 1

    def test_outside_half_window(self):
        co = pair_coincidences(stream("A", [1.0]), stream("B", [1.6]), WindowPolicy(1.0))
        assert co.report.retained == 0
        assert co.report.unpaired_a == {"x": 1, "x'": 0}

    def test_earliest_first_tie_rule(self):
        # three A events near one B event: only the earliest A is paired
        co = pair_coincidences(stream("A", [0.9, 1.0, 1.1]), stream("B", [1.0]), WindowPolicy(1.0))
        assert co.report.retained == 1
        assert co.index_a.tolist() == [0]

    def test_unsorted_rejected(self):
        with pytest.raises(InputError):
            pair_coincidences(stream("A", [2.0, 1.0]), stream("B", [1.0]), WindowPolicy(1.0))

    def test_window_must_be_positive(self):
        with pytest.raises(InputError):
            WindowPolicy(0.0)
        with pytest.raises(InputError):
            WindowPolicy(1.0, "optimal")

    def test_arms_checked(self):
        with pytest.raises(InputError):
            pair_coincidences(stream("B", [1.0]), stream("B", [1.0]), WindowPolicy(1.0))

    def test_nearest_matches_quadratic_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            ta = np.sort(rng.uniform(0, 10, rng.integers(1, 15)))
            tb = np.sort(rng.uniform(0, 10, rng.integers(1, 15)))
            w = rng.uniform(0.1, 3)
            co = pair_coincidences(stream("A", ta), stream("B", tb), WindowPolicy(w))
            assert list(zip(co.index_a.tolist(), co.index_b.tolist())) == oracle_pairs(ta, tb, w / 2)

    def test_pairing_is_a_matching(self):
        a, b = generate_event_streams(reference_delay_model(), STD, 20_000, seed=5)
        for mode in ("nearest", "bins"):
            co = pair_coincidences(a, b, WindowPolicy(3e-7, mode), STD)
            assert len(set(co.index_a.tolist())) == len(co.index_a)
            assert len(set(co.index_b.tolist())) == len(co.index_b)
            assert sum(s.n for s in co.sheets) == co.report.retained
            assert co.report.retained + sum(co.report.unpaired_a.values()) == len(a)

    def test_fixed_bins_retention_monotone_on_nested_grid(self):
        a, b = generate_event_streams(reference_delay_model(), STD, 30_000, seed=6)
        # dyadic widths give nested bins: every coincidence at W survives at 2W
        widths = [1e-6 * 2.0 ** k for k in range(-6, 4)]
        kept = [pair_coincidences(a, b, WindowPolicy(w, "bins")).report.retained for w in widths]
        assert kept == sorted(kept)

    def test_modes_can_differ(self):
        a, b = generate_event_streams(reference_delay_model(), STD, 20_000, seed=7)
        n1 = pair_coincidences(a, b, WindowPolicy(REFERENCE_WINDOW, "nearest")).report.retained
        n2 = pair_coincidences(a, b, WindowPolicy(REFERENCE_WINDOW, "bins")).report.retained
        assert n1 != n2

    def test_infinite_window(self):
        a, b = generate_event_streams(reference_delay_model(), STD, 2000, seed=8)
        co = pair_coincidences(a, b, WindowPolicy(math.inf), STD)
        assert co.report.retained == 2000

    def test_event_rows(self):
        a, _ = generate_event_streams(zero_delay_model(), STD, 3, seed=0)
        rows = a.rows()
        assert len(rows) == 3 and rows[0][1] == "A" and rows[0][2] in ("x", "x'")


class TestScan:
    def test_curve_shape_and_bounds(self):
        ws = [1e-7, REFERENCE_WINDOW, 1e-6, 1e-5]
        curve = coincidence_chsh_scan(reference_delay_model(), STD, 40_000, ws, seed=9)
        assert [p.window for p in curve] == ws
        frac = [p.retained_fraction for p in curve]
        assert frac == sorted(frac)
        assert all(abs(p.S) <= 4 for p in curve)
        assert abs(curve[1].S) > 2.2
        assert abs(curve[-1].S) <= 2 + 4 * curve[-1].se

    def test_setting_independent_delay_stays_local(self):
        ws = [2.5e-7, 5e-7, 1e-6, 1e-5]
        curve = coincidence_chsh_scan(setting_independent_delay_model(), STD, 40_000, ws, seed=10)
        assert all(abs(p.S) <= 2 + 5 * p.se for p in curve)

    def test_empty_sheets_give_nan(self):
        m = DelayModel(JitterDelay(1e-6), 1e-6)
        curve = coincidence_chsh_scan(m, STD, 20, [1e-12], seed=0)
        assert math.isnan(curve[0].S)

    def test_empty_grid(self):
        with pytest.raises(InputError):
            coincidence_chsh_scan(zero_delay_model(), STD, 10, [], seed=0)
