import math

import numpy as np
import pytest

from photonqrng.analysis import chi_square_gof, chi_square_homogeneity, linear_fit
from photonqrng.model import SourceConfig, reference_config, raw_symbol_distribution
from photonqrng.simulator import (
    DetectionEvents,
    RawSymbolStream,
    apply_dead_time,
    generate_arrivals,
    nonparalyzable_rate,
    record_symbols,
    saturation_rate,
    simulate,
    simulate_sharded,
)

T = 40.96e-9


def cfg(mu, dead_time=0.0, dark_rate=0.0, num_bins=256):
    return SourceConfig.from_mu(mu, period=T, num_bins=num_bins, dead_time=dead_time,
                                dark_rate=dark_rate)


def dead_time_oracle(times, tau):
    kept, last = [], None
    for t in times:
        if last is None or t >= last + tau:
            kept.append(t)
            last = t
    return kept


def record_oracle(times, period, num_bins, offset):
    symbols, seen = [], set()
    for t in times:
        if t < offset:
            continue
        j = math.floor((t - offset) / period)
        if j in seen:
            continue
        seen.add(j)
        phase = (t - offset) / period - j
        symbols.append(min(int(phase * num_bins), num_bins - 1))
    return symbols


class TestArrivals:
    def test_zero_rate_is_empty(self):
        c = SourceConfig(lambda_rate=0.0, efficiency=1.0, period=T, num_bins=256)
        assert len(generate_arrivals(c, 1, 1e-3)) == 0

    def test_poisson_count(self):
        rate = 1e9
        c = SourceConfig(lambda_rate=rate, efficiency=1.0, period=T, num_bins=256)
        ev = generate_arrivals(c, 7, 1e6 / rate)
        assert abs(len(ev) - 1_000_000) < 5000

    def test_efficiency_thins_source(self):
        c = SourceConfig(lambda_rate=2e9, efficiency=0.5, period=T, num_bins=256)
        assert abs(len(generate_arrivals(c, 3, 1e-3)) - 1_000_000) < 5000

    def test_deterministic(self):
        c = cfg(1.0, dark_rate=1e6)
        a = generate_arrivals(c, 42, 1e-4)
        b = generate_arrivals(c, 42, 1e-4)
        assert np.array_equal(a.timestamps, b.timestamps)
        assert np.array_equal(a.is_dark, b.is_dark)
        assert not np.array_equal(a.timestamps[:100], generate_arrivals(c, 43, 1e-4).timestamps[:100])

    def test_sorted_and_in_range(self):
        ev = generate_arrivals(cfg(1.52), 5, 1e-4)
        assert np.all(np.diff(ev.timestamps) > 0)
        assert ev.timestamps[0] >= 0 and ev.timestamps[-1] < 1e-4

    def test_dark_fraction(self):
        c = cfg(1.0, dark_rate=0.25 * (1.0 / T))  # 20% of the merged stream
        ev = generate_arrivals(c, 11, 2e-2)
        frac = ev.is_dark.mean()
        sigma = math.sqrt(0.2 * 0.8 / len(ev))
        assert abs(frac - 0.2) < 5 * sigma

    def test_duration_must_be_positive(self):
        with pytest.raises(ValueError):
            generate_arrivals(cfg(1.0), 1, 0.0)


class TestDeadTime:
    def test_hand_trace(self):
        ev = DetectionEvents.from_times([0.0, 10e-9, 50e-9])
        assert apply_dead_time(ev, 45e-9).timestamps.tolist() == [0.0, 50e-9]

    def test_zero_is_identity(self):
        ev = generate_arrivals(cfg(2.0), 1, 1e-5)
        assert np.array_equal(apply_dead_time(ev, 0.0).timestamps, ev.timestamps)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            times = np.sort(rng.uniform(0, 1e-6, rng.integers(1, 200)))
            tau = rng.uniform(0, 5e-8)
            got = apply_dead_time(DetectionEvents.from_times(times), tau).timestamps
            assert got.tolist() == dead_time_oracle(times.tolist(), tau)

    def test_boundary_event_kept(self):
        ev = DetectionEvents.from_times([0.0, 0.5, 1.0])
        assert apply_dead_time(ev, 0.5).timestamps.tolist() == [0.0, 0.5, 1.0]

    def test_saturation(self):
        tau = 45e-9
        rate_in = 100.0 / tau
        c = SourceConfig(lambda_rate=rate_in, efficiency=1.0, period=T, num_bins=256)
        duration = 1.02e6 / rate_in
        kept = apply_dead_time(generate_arrivals(c, 9, duration), tau)
        rate_out = len(kept) / duration
        assert abs(rate_out * tau - 1.0) < 0.02
        assert rate_out == pytest.approx(nonparalyzable_rate(rate_in, tau), rel=0.005)

    def test_nonparalyzable_formula_reference_point(self):
        # mu = 1.52 per 40.96 ns period against 45 ns dead time
        assert nonparalyzable_rate(1.52 / T, 45e-9) == pytest.approx(13.9e6, rel=0.002)

    def test_saturation_rate(self):
        assert saturation_rate(reference_config()) == pytest.approx(1 / 45e-9)
        assert saturation_rate(cfg(1.0)) == math.inf


class TestRecord:
    def test_midpoint(self):
        s = record_symbols(DetectionEvents.from_times([0.5 * T]), cfg(1.0))
        assert s.symbols.tolist() == [128]

    def test_midpoint_with_offset(self):
        off = T / 4
        s = record_symbols(DetectionEvents.from_times([off + 0.5 * T]), cfg(1.0), off)
        assert s.symbols.tolist() == [128]

    def test_first_hit_only(self):
        s = record_symbols(DetectionEvents.from_times([0.2 * T, 0.7 * T]), cfg(1.0))
        assert s.symbols.tolist() == [int(0.2 * 256)]
        assert s.periods_elapsed == 1

    def test_period_boundary(self):
        s = record_symbols(DetectionEvents.from_times([0.9 * T, T]), cfg(1.0))
        assert s.symbols.tolist() == [230, 0]
        assert s.periods_elapsed == 2

    def test_events_before_offset_ignored(self):
        s = record_symbols(DetectionEvents.from_times([0.1 * T, 0.6 * T]), cfg(1.0), 0.5 * T)
        assert s.symbols.tolist() == [int(0.1 * 256)]

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            times = np.sort(rng.uniform(0, 50 * T, rng.integers(1, 300)))
            off = rng.uniform(0, T)
            s = record_symbols(DetectionEvents.from_times(times), cfg(1.0), off)
            assert s.symbols.tolist() == record_oracle(times.tolist(), T, 256, off)

    def test_offset_range(self):
        with pytest.raises(ValueError):
            record_symbols(DetectionEvents.from_times([0.0]), cfg(1.0), T)


class TestSimulate:
    def test_reproducible(self):
        a = simulate(reference_config(), 123, 50_000)
        b = simulate(reference_config(), 123, 50_000)
        assert np.array_equal(a.symbols, b.symbols)
        assert a.periods_elapsed == b.periods_elapsed and a.spad_counts == b.spad_counts

    def test_is_composition(self):
        c = reference_config()
        s = simulate(c, 77, 20_000)
        ev = generate_arrivals(c, 77, (s.periods_elapsed + 2) * c.period)
        composed = record_symbols(apply_dead_time(ev, c.dead_time), c)
        assert np.array_equal(composed.symbols[:20_000], s.symbols)

    def test_at_most_one_per_period(self):
        for mu in (0.1, 3.0):
            s = simulate(cfg(mu), 4, 10_000)
            assert s.detections_recorded == 10_000
            assert s.detections_recorded <= s.periods_elapsed
            assert s.symbols.max() < 256

    def test_zero_rate_rejected(self):
        c = SourceConfig(lambda_rate=0.0, efficiency=1.0, period=T, num_bins=256)
        with pytest.raises(ValueError):
            simulate(c, 1, 10)

    @pytest.mark.parametrize("mu", [0.2, 1.52])
    def test_model_agreement_ideal_detector(self, mu):
        s = simulate(cfg(mu), 2024, 1_000_000)
        probs = raw_symbol_distribution(s.config).probs
        assert chi_square_gof(s.histogram(), probs).p_value > 0.001

    def test_single_photon_limit_uniform(self):
        s = simulate(cfg(1e-4), 5, 200_000)
        assert chi_square_gof(s.histogram(), np.full(256, 1 / 256)).p_value > 0.001

    def test_reference_rates(self):
        s = simulate(reference_config(), 8, 500_000)
        # every kept pulse is recorded when dead time exceeds the period
        assert s.spad_counts == s.detections_recorded
        expected = nonparalyzable_rate(reference_config().detected_rate + 15.0, 45e-9)
        assert s.spad_count_rate == pytest.approx(expected, rel=0.005)
        assert s.raw_bit_rate == pytest.approx(111e6, rel=0.01)

    def test_ideal_detector_rate(self):
        s = simulate(cfg(1.52), 8, 500_000)
        assert s.detection_rate == pytest.approx(-math.expm1(-1.52) / T, rel=0.005)

    def test_rate_linearity(self):
        counts, bits = [], []
        for mu in (0.05, 0.1, 0.2, 0.4, 0.8):
            s = simulate(cfg(mu, dead_time=45e-9), 10 + int(mu * 100), 100_000)
            counts.append(s.spad_count_rate)
            bits.append(s.raw_bit_rate)
        slope, _, r2 = linear_fit(counts, bits)
        assert r2 > 0.999
        assert slope == pytest.approx(8.0, rel=0.01)

    def test_dead_time_shift_invariance(self):
        c = reference_config()
        hists = [simulate(c, 300 + k, 300_000, reference_offset=off).histogram()
                 for k, off in enumerate((0.0, T / 4, T / 2))]
        for a in range(3):
            for b in range(a + 1, 3):
                assert chi_square_homogeneity(hists[a], hists[b]).p_value > 0.001

    def test_sharded(self):
        c = reference_config()
        s = simulate_sharded(c, [1, 2, 3], 10_001)
        assert s.detections_recorded == 10_001
        assert [sh["count"] for sh in s.shards] == [3334, 3334, 3333]
        direct = simulate(c, 2, 3334)
        assert np.array_equal(s.symbols[3334:6668], direct.symbols)
        threaded = simulate_sharded(c, [1, 2, 3], 10_001, workers=3)
        assert np.array_equal(threaded.symbols, s.symbols)

    def test_stream_validation(self):
        with pytest.raises(ValueError):
            RawSymbolStream(np.array([256]), cfg(1.0), None, periods_elapsed=1)
        with pytest.raises(ValueError):
            RawSymbolStream(np.array([1, 2]), cfg(1.0), None, periods_elapsed=1)

    def test_wide_symbols(self):
        s = simulate(cfg(0.5, num_bins=1024), 1, 5000)
        assert s.symbols.dtype == np.uint16 and s.symbols.max() < 1024
