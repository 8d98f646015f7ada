import numpy as np
import pytest

from uhrsim.mlo import (Chunk, MldConfig, MloMode, SharedQueue, eligible_links,
                        nstr_start_allowed)
from uhrsim.traffic import TrafficClass

BE = TrafficClass.BEST_EFFORT
TS = TrafficClass.TIME_SENSITIVE


def arr(*vals):
    return np.asarray(vals, dtype=np.int64)


class TestEligibleLinks:
    def test_emlmr_str_all_idle(self):
        cfg = MldConfig(MloMode.EMLMR_STR, (0, 1))
        assert eligible_links(cfg, set(), 0, 0) == {0, 1}

    def test_emlmr_str_excludes_active(self):
        cfg = MldConfig(MloMode.EMLMR_STR, (0, 1))
        assert eligible_links(cfg, {0}, 0, 0) == {1}

    def test_emlsr_suspended_during_own_txop(self):
        cfg = MldConfig(MloMode.EMLSR, (0, 1))
        assert eligible_links(cfg, {0}, 0, 0) == set()

    def test_emlsr_switch_delay_window(self):
        cfg = MldConfig(MloMode.EMLSR, (0, 1), switch_delay_ns=5_000)
        assert eligible_links(cfg, set(), 100, 105) == set()
        assert eligible_links(cfg, set(), 106, 105) == {0, 1}

    def test_mlsr_single_designated_link(self):
        cfg = MldConfig(MloMode.MLSR, (0, 1))
        assert eligible_links(cfg, set(), 0, 0) == {0}

    def test_nstr_alignment_rule(self):
        assert nstr_start_allowed(100_000, None, 9_000)
        assert nstr_start_allowed(100_000, 95_000, 9_000)   # within one slot
        assert not nstr_start_allowed(100_000, 50_000, 9_000)


class TestSharedQueue:
    def test_fifo_within_class(self):
        q = SharedQueue(100)
        q.push_arrivals("f1", BE, arr(10, 20))
        q.push_arrivals("f1", BE, arr(30))
        got = q.pop(3)
        flat = np.concatenate([c.arrivals for c in got])
        assert flat.tolist() == [10, 20, 30]
        assert len(q) == 0

    def test_time_sensitive_first(self):
        q = SharedQueue(100)
        q.push_arrivals("bulk", BE, arr(1, 2))
        q.push_arrivals("urgent", TS, arr(5))
        got = q.pop(2)
        assert got[0].flow_id == "urgent"
        assert got[1].arrivals.tolist() == [1]

    def test_drop_tail_at_capacity(self):
        q = SharedQueue(5)
        dropped = q.push_arrivals("f", BE, arr(*range(8)))
        assert dropped == 3
        assert len(q) == 5
        kept = np.concatenate([c.arrivals for c in q.pop(10)])
        assert kept.tolist() == [0, 1, 2, 3, 4]  # earliest arrivals kept

    def test_push_front_preserves_order_and_retries(self):
        q = SharedQueue(10)
        q.push_arrivals("f", BE, arr(100))
        retry = Chunk("f", BE, arr(40, 50), np.asarray([2, 1], dtype=np.int16))
        q.push_front([retry])
        got = q.pop(10)
        flat = np.concatenate([c.arrivals for c in got])
        assert flat.tolist() == [40, 50, 100]
        assert got[0].retries_array().tolist() == [2, 1]

    def test_retried_packets_exempt_from_capacity(self):
        q = SharedQueue(2)
        q.push_arrivals("f", BE, arr(1, 2))
        q.push_front([Chunk("f", BE, arr(0), np.asarray([1], dtype=np.int16))])
        assert len(q) == 3
        assert q.push_arrivals("f", BE, arr(9)) == 1  # still full for new ones

    def test_pop_split_partial_chunk(self):
        q = SharedQueue(100)
        q.push_arrivals("f", BE, arr(*range(10)))
        first = q.pop(4)
        assert sum(len(c) for c in first) == 4
        rest = q.pop(100)
        assert np.concatenate([c.arrivals for c in rest]).tolist() == list(range(4, 10))

    def test_flow_filter(self):
        q = SharedQueue(100)
        q.push_arrivals("a", BE, arr(1))
        q.push_arrivals("b", BE, arr(2))
        got = q.pop(10, flow_filter=frozenset({"a"}))
        assert [c.flow_id for c in got] == ["a"]
        assert q.peek(frozenset({"b"})).flow_id == "b"
        assert q.has_flows(frozenset({"b"}))

    def test_queued_by_flow(self):
        q = SharedQueue(100)
        q.push_arrivals("a", BE, arr(1, 2))
        q.push_arrivals("b", TS, arr(3))
        assert q.queued_by_flow() == {"a": 2, "b": 1}
