import numpy as np
import pytest

from uhrsim.engine import Engine, RngStream
from uhrsim.mac import (LinkContender, MacConfig, RtwtCalendar, RtwtSp,
                        build_txop, next_symbol_boundary, packet_bits_sent,
                        resolve_mpdus, split_sent)
from uhrsim.mlo import Chunk, SharedQueue
from uhrsim.phy import DEFAULT_MCS_TABLE, PhyConfig
from uhrsim.traffic import TrafficClass

MAC = MacConfig()
PHY = PhyConfig()
MCS13 = DEFAULT_MCS_TABLE[13]
MCS4 = DEFAULT_MCS_TABLE[4]
BE = TrafficClass.BEST_EFFORT
BYTES = {"f": 1500}


def filled_queue(n, flow="f", cls=BE, cap=20_000):
    q = SharedQueue(cap)
    q.push_arrivals(flow, cls, np.arange(n, dtype=np.int64))
    return q


class FixedRng:
    """Backoff stub yielding a scripted sequence of draws."""

    def __init__(self, draws):
        self.draws = list(draws)

    def integers(self, lo, hi):
        return self.draws.pop(0)


class TestBuildTxop:
    def test_full_aggregate_at_mcs13(self):
        q = filled_queue(2000)
        plan = build_txop(q, MCS13, MAC, PHY, 2, MAC.txop_limit_ns, BYTES)
        assert plan.n_mpdus == 1024
        assert abs(plan.airtime_ns - 4_355_000) < 10_000  # incl. SIFS + BlockAck
        assert plan.airtime_ns <= MAC.txop_limit_ns
        assert len(q) == 2000 - 1024

    def test_txop_limited_at_mcs4(self):
        q = filled_queue(2000)
        plan = build_txop(q, MCS4, MAC, PHY, 2, MAC.txop_limit_ns, BYTES)
        assert plan.n_mpdus == 388  # floor((5484-44-16-32)us x 864.71 Mbps / 12000)
        assert plan.airtime_ns <= MAC.txop_limit_ns

    def test_sp_truncation(self):
        q = filled_queue(2000)
        plan = build_txop(q, MCS13, MAC, PHY, 2, 200_000, BYTES, allow_min_one=False)
        assert plan is not None
        assert plan.airtime_ns <= 200_000

    def test_sp_truncation_nothing_fits(self):
        q = filled_queue(10)
        plan = build_txop(q, MCS13, MAC, PHY, 2, 50_000, BYTES, allow_min_one=False)
        assert plan is None
        assert len(q) == 10

    def test_min_one_overrun(self):
        q = filled_queue(10)
        plan = build_txop(q, MCS13, MAC, PHY, 2, 50_000, BYTES, allow_min_one=True)
        assert plan.n_mpdus == 1
        assert plan.airtime_ns > 50_000

    def test_empty_queue(self):
        q = filled_queue(0)
        assert build_txop(q, MCS13, MAC, PHY, 2, MAC.txop_limit_ns, BYTES) is None

    def test_sounding_charged(self):
        # MCS4 is airtime-limited (388 MPDUs), so sounding overhead must bite
        with_snd = build_txop(filled_queue(2000), MCS4, MAC, PHY, 2,
                              MAC.txop_limit_ns, BYTES, sounding_ns=100_000)
        assert with_snd.airtime_ns <= MAC.txop_limit_ns
        assert with_snd.n_mpdus < 388


class TestResolveMpdus:
    def chunk(self, n, retries=None):
        return Chunk("f", BE, np.arange(n, dtype=np.int64),
                     None if retries is None else np.full(n, retries, dtype=np.int16))

    def test_per_zero_all_delivered(self):
        out = resolve_mpdus([self.chunk(100)], False, 0.0, RngStream(1, "x"), 7)
        assert sum(a.size for _, a in out.delivered) == 100
        assert not out.requeue and not out.dropped_retry

    def test_per_point_one_requeues_in_order(self):
        total_fail = 0
        for s in range(20):
            out = resolve_mpdus([self.chunk(1000)], False, 0.1, RngStream(s, "x"), 7)
            for c in out.requeue:
                assert np.all(np.diff(c.arrivals) > 0)  # original relative order
                assert np.all(c.retries_array() == 1)
                total_fail += len(c)
        assert abs(total_fail / 20_000 - 0.1) < 0.02

    def test_collision_fails_everything(self):
        out = resolve_mpdus([self.chunk(50)], True, 0.1, RngStream(1, "x"), 7)
        assert not out.delivered
        assert sum(len(c) for c in out.requeue) == 50

    def test_retry_limit_drops(self):
        out = resolve_mpdus([self.chunk(40, retries=7)], True, 0.1, RngStream(1, "x"), 7)
        assert out.dropped_retry == {"f": 40}
        assert not out.requeue


class TestPreemptionHelpers:
    def test_symbol_boundary(self):
        assert next_symbol_boundary(1_000, 500, 13_600) == 1_000
        assert next_symbol_boundary(1_000, 1_000, 13_600) == 1_000
        assert next_symbol_boundary(1_000, 2_000, 13_600) == 14_600
        assert next_symbol_boundary(1_000, 14_600, 13_600) == 14_600
        assert next_symbol_boundary(1_000, 14_601, 13_600) == 28_200

    def test_split_sent_conserves(self):
        chunks = [Chunk("f", BE, np.arange(10, dtype=np.int64)),
                  Chunk("f", BE, np.arange(10, 25, dtype=np.int64))]
        head, tail = split_sent(chunks, 13)
        assert sum(len(c) for c in head) == 13
        assert sum(len(c) for c in tail) == 12
        got = np.concatenate([c.arrivals for c in head + tail])
        assert got.tolist() == list(range(25))

    def test_packet_bits_sent(self):
        chunks = [Chunk("f", BE, np.arange(100, dtype=np.int64))]
        # one MCS13 2-stream symbol carries 39200 bits -> 3 whole 12000-bit MPDUs
        assert packet_bits_sent(chunks, BYTES, 13_600, MCS13, PHY, 2) == 3
        assert packet_bits_sent(chunks, BYTES, 0, MCS13, PHY, 2) == 0
        assert packet_bits_sent(chunks, BYTES, 10**9, MCS13, PHY, 2) == 100


class TestContender:
    def make(self, draws, traffic=lambda: True):
        eng = Engine(seed=0)
        grants = []
        c = LinkContender("ap1", 0, MAC, eng, FixedRng(draws), traffic,
                          lambda now: grants.append(now))
        return eng, c, grants

    def test_grant_after_difs_plus_backoff(self):
        eng, c, grants = self.make([5])
        c.traffic_available(0)
        eng.run_until(1_000_000)
        assert grants == [34_000 + 5 * 9_000]  # 79 us

    def test_counter_frozen_while_busy(self):
        eng, c, grants = self.make([5])
        c.traffic_available(0)
        # busy after one full slot elapsed, idle again at 100 us
        eng.schedule(43_001, "busy", "x", lambda ev: c.busy(43_001))
        eng.schedule(100_000, "idle", "x", lambda ev: c.idle(100_000))
        eng.run_until(1_000_000)
        assert grants == [100_000 + 34_000 + 4 * 9_000]

    def test_no_grant_while_medium_busy(self):
        eng, c, grants = self.make([0])
        c.busy(0)
        c.traffic_available(0)
        eng.run_until(500_000)
        assert grants == []
        eng.schedule(600_000, "idle", "x", lambda ev: c.idle(600_000))
        eng.run_until(2_000_000)
        assert grants == [600_000 + 34_000]

    def test_equal_tick_grant_survives_soft_busy(self):
        eng, c, grants = self.make([5])
        eng.schedule(79_000, "rival", "x", lambda ev: c.busy(79_000))
        c.traffic_available(0)
        eng.run_until(1_000_000)
        assert grants == [79_000]  # ties transmit: equal-backoff collision

    def test_equal_tick_grant_cancelled_by_hard_block(self):
        eng, c, grants = self.make([5])
        eng.schedule(79_000, "quiet", "x", lambda ev: c.busy(79_000, hard=True))
        c.traffic_available(0)
        eng.run_until(1_000_000)
        assert grants == []

    def test_cw_doubles_on_collision_resets_on_success(self):
        eng, c, grants = self.make([0, 0, 0, 0])
        assert c.cw == 15
        c.traffic_available(0)
        eng.run_until(34_000)
        c.txop_started()
        c.txop_done(eng.now, "collision")
        assert c.cw == 31
        eng.run_until(eng.now + 34_000)
        c.txop_started()
        c.txop_done(eng.now, "collision")
        assert c.cw == 63
        eng.run_until(eng.now + 34_000)
        c.txop_started()
        c.txop_done(eng.now, "success")
        assert c.cw == 15

    def test_cw_capped_at_max(self):
        eng, c, grants = self.make([0] * 20)
        c.traffic_available(0)
        for _ in range(15):
            eng.run_until(eng.now + 40_000)
            c.txop_started()
            c.txop_done(eng.now, "collision")
        assert c.cw == MAC.cw_max


class TestRtwt:
    def test_sp_validation(self):
        with pytest.raises(ValueError):
            RtwtSp("ap1", 0, 2_000, 1_000, frozenset({"f"}))

    def test_overlapping_sps_rejected(self):
        cal = RtwtCalendar()
        cal.add(RtwtSp("ap1", 0, 1_000, 10_000, frozenset({"a"})), 100_000)
        with pytest.raises(ValueError):
            cal.add(RtwtSp("ap1", 500, 1_000, 10_000, frozenset({"b"})), 100_000)

    def test_non_overlapping_ok(self):
        cal = RtwtCalendar()
        cal.add(RtwtSp("ap1", 0, 1_000, 10_000, frozenset({"a"})), 100_000)
        cal.add(RtwtSp("ap1", 2_000, 1_000, 10_000, frozenset({"b"})), 100_000)
        assert len(cal.windows(25_000)) == 6

    def test_cap_before_next_sp(self):
        cal = RtwtCalendar()
        cal.add(RtwtSp("ap1", 5_000, 1_000, 10_000, frozenset({"a"})), 100_000)
        assert cal.cap_before_next_sp(0) == 5_000
        assert cal.cap_before_next_sp(5_000) == 5_000
        assert cal.cap_before_next_sp(6_500) == 15_000
