import numpy as np
import pytest
import scipy.stats

from uhrsim.engine import NS_PER_MS, NS_PER_S, RngStream
from uhrsim.traffic import (BurstSource, FlowSpec, TrafficClass, TrafficModel,
                            iter_events, offered_load_bps)

ONOFF = FlowSpec(id="f1", src="ap1", dst="sta1", model=TrafficModel.ONOFF,
                 packet_bytes=1500, mean_on_ns=4_150_000, mean_off_ns=4_150_000,
                 rate_on_bps=4e9)


class TestSpacing:
    def test_case_study_interarrival(self):
        # 12000 bits / 4 Gbps = 3 us
        assert ONOFF.spacing_ns == 3_000

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            FlowSpec(id="x", src="a", dst="b", model=TrafficModel.CBR,
                     packet_bytes=0, rate_on_bps=1e6)
        with pytest.raises(ValueError):
            FlowSpec(id="x", src="a", dst="b", model=TrafficModel.POISSON,
                     packet_bytes=100, lambda_pps=0)


class TestBurstSource:
    def test_no_arrivals_during_off(self):
        rng = RngStream(3, "t")
        src = BurstSource(ONOFF, rng)
        while src.on:  # find an Off phase
            src.on_boundary()
        assert src.collect(src.phase_end - 1).size == 0

    def test_deterministic_spacing_during_on(self):
        rng = RngStream(4, "t")
        src = BurstSource(ONOFF, rng)
        while not src.on:
            src.on_boundary()
        start = src.phase_start
        arr = src.collect(start + 10_000)
        expected = [start, start + 3_000, start + 6_000, start + 9_000]
        assert arr.tolist() == expected[: arr.size]
        assert np.all(np.diff(arr) == 3_000)

    def test_collect_is_incremental(self):
        rng = RngStream(5, "t")
        src = BurstSource(ONOFF, rng)
        while not src.on:
            src.on_boundary()
        t0 = src.phase_start
        a = src.collect(t0 + 5_000)
        b = src.collect(t0 + 5_000)
        assert b.size == 0
        c = src.collect(t0 + 8_000)
        assert np.all(c > a.max())

    def test_initial_phase_probability(self):
        on = sum(BurstSource(ONOFF, RngStream(s, "t")).on for s in range(400))
        assert 140 <= on <= 260  # p_on = 0.5

    def test_iter_events_ordered(self):
        events = list(iter_events(ONOFF, RngStream(9, "t"), 50 * NS_PER_MS))
        times = [t for t, _ in events]
        assert times == sorted(times)
        kinds = {k for _, k in events}
        assert "arrival" in kinds


class TestOfferedLoad:
    def test_case_study_long_run_average(self):
        rate = offered_load_bps(ONOFF, RngStream(1, "load"), 60 * NS_PER_S)
        assert rate == pytest.approx(2e9, rel=0.02)

    def test_cbr_exact(self):
        spec = FlowSpec(id="c", src="a", dst="b", model=TrafficModel.CBR,
                        packet_bytes=1250, rate_on_bps=100e6)
        rate = offered_load_bps(spec, RngStream(1, "cbr"), 10 * NS_PER_S)
        assert rate == pytest.approx(100e6, abs=spec.packet_bits / 10.0 + 1)

    def test_poisson_within_three_sigma(self):
        lam = 10_000.0
        spec = FlowSpec(id="p", src="a", dst="b", model=TrafficModel.POISSON,
                        packet_bytes=200, lambda_pps=lam)
        horizon_s = 20
        rate = offered_load_bps(spec, RngStream(1, "poi"), horizon_s * NS_PER_S)
        mean = lam * spec.packet_bits
        sigma = np.sqrt(lam * horizon_s) * spec.packet_bits / horizon_s
        assert abs(rate - mean) <= 3 * sigma

    def test_short_horizon_rejected(self):
        with pytest.raises(ValueError):
            offered_load_bps(ONOFF, RngStream(1, "x"), NS_PER_S)


class TestPhaseDistribution:
    def test_ks_fit_against_exponential(self):
        rng = RngStream(17, "phases")
        src = BurstSource(ONOFF, rng)
        durations = []
        for _ in range(100_000):
            start = src.phase_end
            src.on_boundary()
            durations.append(src.phase_end - start)
        mean = 4_150_000.0
        stat = scipy.stats.kstest(np.asarray(durations, dtype=float), "expon",
                                  args=(0, mean))
        assert stat.pvalue > 0.01

    def test_sequence_numbers_gapless(self):
        # materialized arrival count matches the spacing arithmetic exactly
        rng = RngStream(21, "t")
        src = BurstSource(ONOFF, rng)
        total = 0
        horizon = 200 * NS_PER_MS
        while src.boundary() <= horizon:
            end = src.phase_end
            got = src.collect(end - 1)
            if src.on:
                dur = end - src.phase_start
                expect = (dur - 1) // src.spacing + 1
                assert got.size == expect
            total += got.size
            src.on_boundary()
        assert total > 0
