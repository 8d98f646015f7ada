import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uhrsim.engine import NS_PER_MS, Engine, RngStream, SchedulingError


def _noop(ev):
    pass


class TestEventOrdering:
    def test_pops_by_fire_time(self):
        eng = Engine(seed=0)
        fired = []
        eng.schedule(100, "a", "x", lambda ev: fired.append(ev.fire_at))
        eng.schedule(50, "b", "x", lambda ev: fired.append(ev.fire_at))
        eng.run_until(1_000)
        assert fired == [50, 100]

    def test_tie_broken_by_insertion(self):
        eng = Engine(seed=0)
        fired = []
        eng.schedule(100, "first", "x", lambda ev: fired.append(ev.kind))
        eng.schedule(100, "second", "x", lambda ev: fired.append(ev.kind))
        eng.run_until(100)
        assert fired == ["first", "second"]

    def test_scheduling_in_the_past_aborts(self):
        eng = Engine(seed=0)
        eng.schedule(20, "adv", "x", _noop)
        eng.run_until(20)
        with pytest.raises(SchedulingError):
            eng.schedule(10, "late", "x", _noop)

    def test_cancelled_event_never_fires(self):
        eng = Engine(seed=0)
        fired = []
        ev = eng.schedule(10, "a", "x", lambda ev: fired.append("a"))
        ev.cancel()
        summary = eng.run_until(100)
        assert fired == []
        assert summary.events == 0

    @given(st.lists(st.integers(min_value=0, max_value=10_000), min_size=1, max_size=200))
    def test_pop_order_total(self, times):
        eng = Engine(seed=0)
        popped = []
        for t in times:
            eng.schedule(t, "e", "x", lambda ev: popped.append((ev.fire_at, ev.seq)))
        eng.run_until(10_000)
        assert popped == sorted(popped)


class TestRunUntil:
    def test_empty_queue_advances_clock(self):
        eng = Engine(seed=0)
        summary = eng.run_until(1_000_000_000)
        assert summary.events == 0
        assert eng.now == 1_000_000_000

    def test_events_beyond_horizon_left_pending(self):
        eng = Engine(seed=0)
        fired = []
        eng.schedule(5, "in", "x", lambda ev: fired.append(ev.kind))
        eng.schedule(500, "out", "x", lambda ev: fired.append(ev.kind))
        eng.run_until(100)
        assert fired == ["in"]
        assert eng.now == 100
        assert eng.pending() == 1

    def test_clock_never_decreases(self):
        eng = Engine(seed=0)
        seen = []
        def chain(ev):
            seen.append(eng.now)
            if eng.now < 50:
                eng.schedule_in(10, "c", "x", chain)
        eng.schedule(0, "c", "x", chain)
        eng.run_until(200)
        assert seen == sorted(seen)

    def test_trace_lines(self):
        buf = io.StringIO()
        eng = Engine(seed=0, trace=buf)
        eng.schedule(7, "kind1", "tgt1", _noop)
        eng.schedule(9, "kind2", "tgt2", _noop)
        eng.run_until(10)
        assert buf.getvalue() == "7 kind1 tgt1\n9 kind2 tgt2\n"


class TestRngStreams:
    def test_same_seed_label_same_draws(self):
        a = RngStream(1, "traffic.ap0").random(100)
        b = RngStream(1, "traffic.ap0").random(100)
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        a = RngStream(1, "traffic.ap0").random(100)
        b = RngStream(2, "traffic.ap0").random(100)
        assert not np.array_equal(a, b)

    def test_different_labels_differ(self):
        a = RngStream(1, "traffic.ap0").random(100)
        b = RngStream(1, "traffic.ap1").random(100)
        assert not np.array_equal(a, b)

    def test_exponential_mean_within_one_percent(self):
        mean_ns = 4.15 * NS_PER_MS
        draws = RngStream(7, "exp-check").exponential(mean_ns, 1_000_000)
        assert abs(draws.mean() - mean_ns) / mean_ns < 0.01

    def test_engine_substream_determinism(self):
        eng1, eng2 = Engine(seed=5), Engine(seed=5)
        assert np.array_equal(eng1.rng_stream("x").random(10),
                              eng2.rng_stream("x").random(10))
