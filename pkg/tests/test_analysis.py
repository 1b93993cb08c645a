"""Coincidence analysis against brute-force oracles and analytic laws."""

import math

import numpy as np
import pytest

from oamspdc.analysis import (
    CoincidenceWindows,
    CorrelationMatrix,
    MatrixCell,
    accidental_rate,
    build_matrix,
    count_coincidences,
    cross_histogram,
    diagonal_fraction,
    heralded_coincidences,
    matched_pair_times,
    pearson,
)
from oamspdc.errors import UndefinedStatisticError, ValidationError
from oamspdc.streams import EventStream, SettingStreams

from oracles import brute_greedy_matches, brute_heralded, brute_histogram


def stream(channel, times, duration_ps=0):
    return EventStream(channel, np.asarray(sorted(times), dtype=np.int64), duration_ps=duration_ps)


def random_streams(rng, max_len=60, span=2000):
    na, nb = rng.integers(0, max_len, size=2)
    ta = np.sort(rng.integers(0, span, size=na))
    tb = np.sort(rng.integers(0, span, size=nb))
    return ta.astype(np.int64), tb.astype(np.int64)


class TestCrossHistogram:
    def test_empty_stream_gives_zeros(self):
        h = cross_histogram(stream("signal", []), stream("idler", [1, 2]), 100, (0, 300))
        assert list(h.counts) == [0, 0, 0]

    def test_documented_small_case(self):
        # Delays 100 and 250 from a={0}, b={100, 250} fall in the second and
        # third of the half-open bins [0,100), [100,200), [200,300).
        h = cross_histogram(stream("signal", [0]), stream("idler", [100, 250]), 100, (0, 300))
        assert list(h.counts) == [0, 1, 1]
        assert list(h.counts) == list(brute_histogram([0], [100, 250], 100, 0, 300))

    def test_matches_brute_force(self, rng):
        for _ in range(60):
            ta, tb = random_streams(rng)
            lo = -int(rng.integers(0, 500))
            width = int(rng.integers(1, 60))
            n_bins = int(rng.integers(1, 30))
            hi = lo + width * n_bins
            h = cross_histogram(ta, tb, width, (lo, hi))
            assert list(h.counts) == list(brute_histogram(ta, tb, width, lo, hi))

    def test_flat_level_for_uncorrelated_poisson(self, rng):
        # Pooled over 100 seeded runs, the histogram level matches ra * rb * bin.
        duration_s = 2e-4
        rate_a, rate_b = 2e6, 3e6
        total = np.zeros(20)
        n_runs = 100
        for _ in range(n_runs):
            ta = np.sort(rng.integers(0, duration_s * 1e12, size=rng.poisson(rate_a * duration_s)))
            tb = np.sort(rng.integers(0, duration_s * 1e12, size=rng.poisson(rate_b * duration_s)))
            h = cross_histogram(ta.astype(np.int64), tb.astype(np.int64), 1000, (-10000, 10000))
            total += h.counts
        expected = rate_a * rate_b * 1000e-12 * duration_s * n_runs
        sigma = math.sqrt(expected)
        assert np.all(np.abs(total - expected) < 5 * sigma)
        assert abs(total.mean() - expected) < 3 * sigma / math.sqrt(20)

    def test_bin_width_must_divide_range(self):
        with pytest.raises(ValidationError):
            cross_histogram(stream("signal", [0]), stream("idler", [0]), 7, (0, 300))

    def test_unsorted_rejected(self):
        with pytest.raises(ValidationError):
            cross_histogram(np.array([5, 1]), np.array([1]), 10, (0, 100))


class TestCountCoincidences:
    def test_self_coincidence(self):
        t = stream("signal", [10, 500, 900])
        assert count_coincidences(t, t, 1) == 3

    def test_window_is_full_width_centered(self):
        # 600 ps delay vs a 1 ns window: outside the +-500 ps acceptance.
        assert count_coincidences(stream("signal", [0]), stream("idler", [600]), 1000) == 0
        assert count_coincidences(stream("signal", [0]), stream("idler", [400]), 1000) == 1
        assert count_coincidences(stream("signal", [0]), stream("idler", [500]), 1000) == 1

    def test_each_b_consumed_once(self):
        # Three a-records compete for one b-record.
        assert count_coincidences(stream("signal", [0, 1, 2]), stream("idler", [1]), 10) == 1

    def test_offset(self):
        assert count_coincidences(stream("signal", [0]), stream("idler", [1000]), 10, offset=1000) == 1

    def test_matches_brute_force(self, rng):
        for _ in range(120):
            ta, tb = random_streams(rng)
            window = int(rng.integers(1, 200))
            offset = int(rng.integers(-100, 100))
            got = count_coincidences(ta, tb, window, offset)
            assert got == len(brute_greedy_matches(ta, tb, window, offset))

    def test_matched_times_match_brute_force(self, rng):
        for _ in range(40):
            ta, tb = random_streams(rng)
            window = int(rng.integers(1, 200))
            got = matched_pair_times(ta, tb, window)
            assert list(got) == brute_greedy_matches(ta, tb, window)


class TestHeraldedCoincidences:
    W = CoincidenceWindows(pair_window=1000, herald_window=300, unheralded_window=400)

    def test_no_heralds(self):
        assert heralded_coincidences(
            stream("herald_a", []), stream("signal", [10]), stream("idler", [10]), self.W
        ) == 0

    def test_single_perfect_triple(self):
        assert heralded_coincidences(
            stream("herald_a", [100]), stream("signal", [100]), stream("idler", [100]), self.W
        ) == 1

    def test_matches_brute_force(self, rng):
        for _ in range(60):
            th = np.sort(rng.integers(0, 2000, size=rng.integers(0, 40))).astype(np.int64)
            ts, ti = random_streams(rng, max_len=40)
            got = heralded_coincidences(th, ts, ti, self.W)
            assert got == brute_heralded(th, ts, ti, self.W.pair_window, self.W.herald_window)


class TestShiftInvariance:
    def test_constant_offset_changes_nothing(self, rng):
        ta, tb = random_streams(rng, max_len=50)
        th = np.sort(rng.integers(0, 2000, size=20)).astype(np.int64)
        shift = 123_456_789
        w = CoincidenceWindows()
        assert count_coincidences(ta, tb, 150) == count_coincidences(ta + shift, tb + shift, 150)
        h0 = cross_histogram(ta, tb, 50, (-500, 500), integration_time=1.0)
        h1 = cross_histogram(ta + shift, tb + shift, 50, (-500, 500), integration_time=1.0)
        assert np.array_equal(h0.counts, h1.counts)
        assert heralded_coincidences(th, ta, tb, w) == heralded_coincidences(
            th + shift, ta + shift, tb + shift, w
        )


class TestAccidentalRate:
    def test_flat_histogram_exact(self):
        # Level c per bin, window k bins wide: k * c per integration time.
        from oamspdc.analysis import DelayHistogram

        hist = DelayHistogram(
            bin_width=100, range=(-1000, 1000), counts=np.full(20, 7), integration_time=10.0
        )
        est = accidental_rate(hist, 300, (-200, 200))
        assert est.rate_per_window_per_s == pytest.approx(7 * 3 / 10.0, rel=1e-12)
        assert est.stderr == 0.0

    def test_recovers_planted_background(self, rng):
        from oamspdc.analysis import DelayHistogram

        level = 40.0
        counts = rng.poisson(level, size=200)
        peak_bin = 100
        counts[peak_bin] += 500  # planted peak inside the exclusion zone
        hist = DelayHistogram(
            bin_width=10, range=(-1000, 1000), counts=counts, integration_time=1.0
        )
        est = accidental_rate(hist, 10, (-30, 30))
        assert abs(est.rate_per_window_per_s - level) < 2 * est.stderr + 1e-9

    def test_exclusion_covering_everything_rejected(self):
        from oamspdc.analysis import DelayHistogram

        hist = DelayHistogram(
            bin_width=100, range=(0, 1000), counts=np.ones(10, dtype=int), integration_time=1.0
        )
        with pytest.raises(ValidationError):
            accidental_rate(hist, 100, (-100, 2000))


def synthetic_bundle(rng, ell_s, ell_i, rate_hz, duration_s=50.0, herald_rate=200.0):
    """Poissonian pair events at rate_hz plus an independent herald stream."""
    duration_ps = int(duration_s * 1e12)
    n = rng.poisson(rate_hz * duration_s)
    t_pairs = np.sort(rng.integers(0, duration_ps, size=n))
    jitter = rng.integers(-20, 21, size=n)
    signal = t_pairs
    idler = np.sort(t_pairs + jitter)
    herald = np.sort(rng.integers(0, duration_ps, size=rng.poisson(herald_rate * duration_s)))
    streams = {
        "herald_a": EventStream("herald_a", herald, duration_ps=duration_ps),
        "herald_b": EventStream("herald_b", np.empty(0, dtype=np.int64), duration_ps=duration_ps),
        "signal": EventStream("signal", signal.astype(np.int64), duration_ps=duration_ps),
        "idler": EventStream("idler", idler.astype(np.int64), duration_ps=duration_ps),
    }
    return SettingStreams(ell_s=ell_s, ell_i=ell_i, streams=streams, duration_ps=duration_ps)


class TestBuildMatrix:
    W = CoincidenceWindows()

    def test_planted_rates_recovered(self, rng):
        rates = {(-1, -1): 5.0, (-1, 1): 40.0, (1, -1): 35.0, (1, 1): 4.0}
        scan = [synthetic_bundle(rng, ls, li, r) for (ls, li), r in rates.items()]
        matrix = build_matrix(scan, self.W, time_bin=10.0, pump_ell=0)
        for key, rate in rates.items():
            cell = matrix.cells[key]
            measured_per_s = cell.rate_per_hour / 3600.0
            sigma = math.sqrt(rate * 50.0) / 50.0
            assert abs(measured_per_s - rate) < 4 * sigma
            assert cell.raw >= 0

    def test_raw_counts_match_direct_window_counts(self, rng):
        scan = [synthetic_bundle(rng, ls, li, 20.0) for ls in (0, 1) for li in (0, 1)]
        matrix = build_matrix(scan, self.W, time_bin=10.0, pump_ell=1)
        for bundle in scan:
            direct = count_coincidences(
                bundle.streams["signal"], bundle.streams["idler"], self.W.unheralded_window
            )
            assert matrix.cells[(bundle.ell_s, bundle.ell_i)].raw == direct

    def test_missing_cell_is_named(self, rng):
        scan = [
            synthetic_bundle(rng, 0, 0, 5.0),
            synthetic_bundle(rng, 0, 1, 5.0),
            synthetic_bundle(rng, 1, 0, 5.0),
        ]
        with pytest.raises(ValidationError, match=r"\(1, 1\)"):
            build_matrix(scan, self.W, pump_ell=1)

    def test_zero_duration_rejected(self, rng):
        bundle = synthetic_bundle(rng, 0, 0, 5.0)
        bundle.duration_ps = 0
        with pytest.raises(ValidationError):
            build_matrix([bundle], self.W)

    def test_error_bars_cover_fluctuation(self, rng):
        scan = [synthetic_bundle(rng, 0, 0, 30.0, duration_s=100.0)]
        matrix = build_matrix(scan, self.W, time_bin=10.0, pump_ell=0)
        cell = matrix.cells[(0, 0)]
        assert cell.error_per_hour > 0
        assert cell.rate_per_hour >= -3 * cell.error_per_hour


def make_matrix(values, pump_ell=0):
    cells = {
        key: MatrixCell(raw=max(int(v), 0), integration_s=1.0, rate_per_hour=v, error_per_hour=1.0)
        for key, v in values.items()
    }
    return CorrelationMatrix(pump_ell=pump_ell, cells=cells, time_bin=1.0)


class TestPearson:
    def grid(self, rng):
        return {(ls, li): float(rng.uniform(0, 100)) for ls in (-1, 0, 1) for li in (-1, 0, 1)}

    def test_self_correlation_is_one(self, rng):
        m = make_matrix(self.grid(rng))
        assert pearson(m, m) == pytest.approx(1.0, abs=1e-14)

    def test_anti_correlation(self, rng):
        vals = self.grid(rng)
        a = make_matrix(vals)
        b = make_matrix({k: -v for k, v in vals.items()})
        assert pearson(a, b) == pytest.approx(-1.0, abs=1e-14)

    def test_symmetric_and_scale_invariant(self, rng):
        va, vb = self.grid(rng), self.grid(rng)
        a, b = make_matrix(va), make_matrix(vb)
        assert pearson(a, b) == pytest.approx(pearson(b, a), abs=1e-14)
        scaled = make_matrix({k: 7.5 * v for k, v in vb.items()})
        assert pearson(a, scaled) == pytest.approx(pearson(a, b), abs=1e-12)

    def test_zero_variance_is_undefined(self):
        a = make_matrix({(0, 0): 1.0, (0, 1): 1.0})
        b = make_matrix({(0, 0): 1.0, (0, 1): 2.0})
        with pytest.raises(UndefinedStatisticError):
            pearson(a, b)

    def test_different_cells_rejected(self):
        a = make_matrix({(0, 0): 1.0, (0, 1): 2.0})
        b = make_matrix({(0, 0): 1.0, (1, 0): 2.0})
        with pytest.raises(ValidationError):
            pearson(a, b)


class TestDiagonalFraction:
    def test_perfectly_conserving_matrix(self):
        m = make_matrix({(0, 0): 10.0, (1, -1): 5.0, (-1, 1): 5.0, (0, 1): 0.0}, pump_ell=0)
        assert diagonal_fraction(m) == 1.0

    def test_uniform_three_by_three(self):
        vals = {(ls, li): 1.0 for ls in (-1, 0, 1) for li in (-1, 0, 1)}
        m = make_matrix(vals, pump_ell=0)
        assert diagonal_fraction(m) == pytest.approx(1 / 3, rel=1e-12)

    def test_all_zero_undefined(self):
        m = make_matrix({(0, 0): 0.0, (0, 1): 0.0}, pump_ell=0)
        with pytest.raises(UndefinedStatisticError):
            diagonal_fraction(m)

    def test_clamped_despite_negative_cells(self):
        m = make_matrix({(0, 0): 10.0, (0, 1): -1.0, (1, 0): -1.0, (1, 1): 0.0}, pump_ell=0)
        assert 0.0 <= diagonal_fraction(m) <= 1.0
