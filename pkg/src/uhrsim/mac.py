"""Per-link CSMA/CA contention, TXOP planning and outcome resolution, R-TWT
service-period calendar, and TXOP-holder preemption timing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import Engine, RngStream, SimTime
from .mlo import Chunk, SharedQueue
from .phy import McsEntry, PhyConfig, _symbol_bits


@dataclass(frozen=True, slots=True)
class MacConfig:
    slot_ns: SimTime = 9_000
    sifs_ns: SimTime = 16_000
    difs_ns: SimTime = 34_000
    cw_min: int = 15
    cw_max: int = 1023
    retry_limit: int = 7
    blockack_ns: SimTime = 32_000
    txop_limit_ns: SimTime = 5_484_000
    max_ampdu: int = 1024
    buffer_packets: int = 10_240
    preemption: bool = False


@dataclass(slots=True)
class TxopPlan:
    device: str
    link: int
    mcs: McsEntry
    chunks: list[Chunk]
    n_mpdus: int
    total_bits: int
    data_ns: SimTime            # preamble + payload symbols
    airtime_ns: SimTime         # sounding + data + SIFS + BlockAck
    flows: tuple[str, ...]
    receiver: str = ""
    subchannel: int = 0
    data_subcarriers: int | None = None
    tag: str = "data"
    # preemption bookkeeping (set when a time-sensitive frame cuts in)
    trunc_sent: int | None = None
    urgent_chunks: list[Chunk] = field(default_factory=list)
    urgent_bits: int = 0


def airtime_for_bits(bits: int, mcs: McsEntry, phy: PhyConfig, streams: int,
                     data_subcarriers: int | None = None) -> SimTime:
    sc = phy.data_subcarriers if data_subcarriers is None else data_subcarriers
    num, den = _symbol_bits(mcs, sc, streams)
    symbols = -(-bits * den // num)
    return phy.preamble_ns + symbols * phy.symbol_ns


def build_txop(queue: SharedQueue, mcs: McsEntry, mac: MacConfig, phy: PhyConfig,
               streams: int, budget_ns: SimTime, flow_bytes: dict[str, int],
               flow_filter: frozenset | None = None,
               allow_min_one: bool = True,
               sounding_ns: SimTime = 0,
               data_subcarriers: int | None = None) -> TxopPlan | None:
    """Dequeue up to min(max_ampdu, airtime fit) MPDUs into one plan.

    budget_ns caps the whole busy interval (sounding + PPDU + SIFS + BlockAck).
    With allow_min_one a non-empty queue always yields at least one MPDU even
    if it alone overruns the budget; R-TWT truncation passes False instead.
    """
    budget_ns = min(budget_ns, mac.txop_limit_ns)
    sc = phy.data_subcarriers if data_subcarriers is None else data_subcarriers
    num, den = _symbol_bits(mcs, sc, streams)
    payload_budget = budget_ns - sounding_ns - phy.preamble_ns - mac.sifs_ns - mac.blockack_ns
    max_symbols = payload_budget // phy.symbol_ns
    budget_bits = max_symbols * num // den if max_symbols > 0 else 0

    chunks: list[Chunk] = []
    taken = 0
    bits = 0
    while taken < mac.max_ampdu:
        head = queue.peek(flow_filter)
        if head is None:
            break
        pkt_bits = flow_bytes[head.flow_id] * 8
        room_bits = budget_bits - bits
        fit = min(mac.max_ampdu - taken, room_bits // pkt_bits if pkt_bits else 0)
        if fit <= 0:
            break
        got = queue.pop(min(fit, len(head)), flow_filter)
        for c in got:
            chunks.append(c)
            taken += len(c)
            bits += len(c) * flow_bytes[c.flow_id] * 8
    if taken == 0:
        if not allow_min_one:
            return None
        head = queue.peek(flow_filter)
        if head is None:
            return None
        got = queue.pop(1, flow_filter)
        chunks = got
        taken = 1
        bits = flow_bytes[chunks[0].flow_id] * 8
    data_ns = airtime_for_bits(bits, mcs, phy, streams, sc)
    airtime = sounding_ns + data_ns + mac.sifs_ns + mac.blockack_ns
    flows = tuple(dict.fromkeys(c.flow_id for c in chunks))
    return TxopPlan(device="", link=-1, mcs=mcs, chunks=chunks, n_mpdus=taken,
                    total_bits=bits, data_ns=data_ns, airtime_ns=airtime,
                    flows=flows, data_subcarriers=data_subcarriers)


@dataclass(slots=True)
class TxOutcome:
    collision: bool
    delivered: list[tuple[str, np.ndarray]]      # (flow, arrival timestamps)
    requeue: list[Chunk]
    dropped_retry: dict[str, int]


def resolve_mpdus(chunks: list[Chunk], collision: bool, per: float,
                  rng: RngStream, retry_limit: int) -> TxOutcome:
    """Apply the per-MPDU Bernoulli error (or wholesale collision failure) to a
    transmitted burst; failures keep order and go back to the queue head."""
    delivered: list[tuple[str, np.ndarray]] = []
    requeue: list[Chunk] = []
    dropped: dict[str, int] = {}
    for c in chunks:
        n = len(c)
        if collision:
            fail = np.ones(n, dtype=bool)
        else:
            fail = rng.gen.random(n) < per
        ok = ~fail
        if ok.any():
            delivered.append((c.flow_id, c.arrivals[ok]))
        if fail.any():
            retries = c.retries_array()[fail] + 1
            keep = retries <= retry_limit
            n_drop = int((~keep).sum())
            if n_drop:
                dropped[c.flow_id] = dropped.get(c.flow_id, 0) + n_drop
            if keep.any():
                requeue.append(Chunk(c.flow_id, c.cls, c.arrivals[fail][keep],
                                     retries[keep].astype(np.int16)))
    return TxOutcome(collision, delivered, requeue, dropped)


def split_sent(chunks: list[Chunk], sent: int) -> tuple[list[Chunk], list[Chunk]]:
    """First `sent` packets of a burst vs the interrupted remainder."""
    head: list[Chunk] = []
    tail: list[Chunk] = []
    left = sent
    for c in chunks:
        if left >= len(c):
            head.append(c)
            left -= len(c)
        elif left > 0:
            a, b = c.split(left)
            head.append(a)
            tail.append(b)
            left = 0
        else:
            tail.append(c)
    return head, tail


def packet_bits_sent(chunks: list[Chunk], flow_bytes: dict[str, int],
                     elapsed_payload_ns: SimTime, mcs: McsEntry, phy: PhyConfig,
                     streams: int) -> int:
    """How many whole MPDUs of a burst are on air after elapsed payload time."""
    if elapsed_payload_ns <= 0:
        return 0
    num, den = _symbol_bits(mcs, phy.data_subcarriers, streams)
    bits_sent = elapsed_payload_ns * num // (den * phy.symbol_ns)
    n = 0
    for c in chunks:
        pkt = flow_bytes[c.flow_id] * 8
        whole = min(len(c), int(bits_sent // pkt))
        n += whole
        bits_sent -= whole * pkt
        if whole < len(c):
            break
    return n


def next_symbol_boundary(payload_start: SimTime, now: SimTime,
                         symbol_ns: SimTime) -> SimTime:
    if now <= payload_start:
        return payload_start
    k = -(-(now - payload_start) // symbol_ns)
    return payload_start + k * symbol_ns


# ---------------------------------------------------------------------------
# R-TWT service periods

@dataclass(frozen=True, slots=True)
class RtwtSp:
    ap: str
    start_ns: SimTime
    duration_ns: SimTime
    period_ns: SimTime
    member_flows: frozenset

    def __post_init__(self):
        if not 0 < self.duration_ns < self.period_ns:
            raise ValueError("SP duration must sit inside its period")

    def occurrences(self, horizon: SimTime):
        t = self.start_ns
        while t < horizon:
            yield (t, t + self.duration_ns, self.member_flows, self.ap)
            t += self.period_ns


class RtwtCalendar:
    def __init__(self):
        self.sps: list[RtwtSp] = []

    def add(self, sp: RtwtSp, horizon: SimTime) -> None:
        """Register an SP; overlapping SPs on one AP are a configuration error."""
        for other in self.sps:
            if other.ap != sp.ap:
                continue
            for s1, e1, _, _ in sp.occurrences(horizon):
                for s2, e2, _, _ in other.occurrences(horizon):
                    if s1 < e2 and s2 < e1:
                        raise ValueError(
                            f"overlapping R-TWT SPs on {sp.ap}: "
                            f"[{s1}, {e1}) vs [{s2}, {e2})")
        self.sps.append(sp)

    def windows(self, horizon: SimTime) -> list[tuple[SimTime, SimTime, frozenset, str]]:
        out = []
        for sp in self.sps:
            out.extend(sp.occurrences(horizon))
        return sorted(out)

    def cap_before_next_sp(self, now: SimTime) -> SimTime:
        """Latest end time a non-member transmission may have."""
        cap = 1 << 62
        for sp in self.sps:
            k = max(0, (now - sp.start_ns) // sp.period_ns)
            for occ in (k, k + 1):
                s = sp.start_ns + occ * sp.period_ns
                if s >= now:
                    cap = min(cap, s)
                    break
        return cap


# ---------------------------------------------------------------------------
# Per-link contention state machine

class LinkContender:
    """DCF-style backoff for one (device, link): DIFS plus drawn idle slots,
    counter frozen while the medium is busy, CW doubling on collision."""

    def __init__(self, device: str, link: int, mac: MacConfig, engine: Engine,
                 rng: RngStream, has_traffic: Callable[[], bool],
                 on_grant: Callable[[SimTime], None]):
        self.device = device
        self.link = link
        self.mac = mac
        self.engine = engine
        self.rng = rng
        self.has_traffic = has_traffic
        self.on_grant = on_grant
        self.cw = mac.cw_min
        self.slots: int | None = None      # residual backoff slots (None: redraw)
        self.busy_refs = 0
        self.in_txop = False
        self._grant_ev = None
        self._anchor: SimTime = 0

    # -- countdown control

    def _schedule_grant(self, now: SimTime) -> None:
        if self.slots is None:
            self.slots = self.rng.integers(0, self.cw + 1)
        self._anchor = now
        at = now + self.mac.difs_ns + self.slots * self.mac.slot_ns
        self._grant_ev = self.engine.schedule(
            at, "grant", f"{self.device}.l{self.link}", self._fire)

    def _fire(self, ev) -> None:
        self._grant_ev = None
        self.slots = None
        self.on_grant(self.engine.now)

    def _freeze(self, now: SimTime, hard: bool) -> None:
        ev = self._grant_ev
        if ev is None:
            return
        if not hard and ev.fire_at == now:
            return  # equal-tick grant still fires: equal-backoff collision
        ev.cancel()
        self._grant_ev = None
        elapsed = 0
        if now > self._anchor + self.mac.difs_ns:
            elapsed = (now - self._anchor - self.mac.difs_ns) // self.mac.slot_ns
        self.slots = max(0, (self.slots or 0) - int(elapsed))

    # -- notifications from the simulation

    def traffic_available(self, now: SimTime) -> None:
        if self.in_txop or self._grant_ev is not None or self.busy_refs > 0:
            return
        if self.has_traffic():
            self._schedule_grant(now)

    def busy(self, now: SimTime, hard: bool = False) -> None:
        self.busy_refs += 1
        if self.busy_refs == 1 or hard:
            self._freeze(now, hard)

    def idle(self, now: SimTime) -> None:
        self.busy_refs -= 1
        if self.busy_refs < 0:
            raise RuntimeError(f"{self.device}.l{self.link}: idle without busy")
        if self.busy_refs == 0 and not self.in_txop and self._grant_ev is None:
            if self.has_traffic():
                self._schedule_grant(now)

    def txop_started(self) -> None:
        self.in_txop = True

    def txop_done(self, now: SimTime, outcome: str) -> None:
        """outcome: 'success' resets CW, 'collision' doubles it, 'release'
        keeps it; backoff always restarts with a fresh draw."""
        self.in_txop = False
        if outcome == "success":
            self.cw = self.mac.cw_min
        elif outcome == "collision":
            self.cw = min(2 * self.cw + 1, self.mac.cw_max)
        self.slots = None
        if self.busy_refs == 0 and self.has_traffic():
            self._schedule_grant(now)
