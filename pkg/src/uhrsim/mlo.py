"""Multi-link device logic: link-usage policy per MLO mode and the shared
packet buffer that all of a device's links dequeue from."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .engine import SimTime
from .traffic import TrafficClass


class MloMode(enum.Enum):
    MLSR = "mlsr"
    EMLSR = "emlsr"
    EMLMR_STR = "emlmr_str"
    EMLMR_NSTR = "emlmr_nstr"


@dataclass(frozen=True, slots=True)
class MldConfig:
    mode: MloMode
    links: tuple[int, ...]
    radios: int = 2
    switch_delay_ns: SimTime = 0


def eligible_links(cfg: MldConfig, own_txop_links: set[int],
                   now: SimTime, blocked_until: SimTime) -> set[int]:
    """Links this MLD may currently contend on.

    own_txop_links: links where the device itself holds an active TXOP.
    blocked_until: end of any EMLSR post-TXOP switch window.
    """
    if cfg.mode is MloMode.MLSR:
        designated = {cfg.links[0]}
        return designated - own_txop_links
    if cfg.mode is MloMode.EMLSR:
        if own_txop_links or now < blocked_until:
            return set()
        return set(cfg.links)
    # EMLMR: all links; NSTR start-alignment is enforced at grant time.
    return set(cfg.links) - own_txop_links


def nstr_start_allowed(grant_ns: SimTime, paired_tx_start: SimTime | None,
                       slot_ns: SimTime) -> bool:
    """NSTR pairs may only start a transmission while the paired link is busy
    if the two start times align within one slot."""
    if paired_tx_start is None:
        return True
    return abs(grant_ns - paired_tx_start) <= slot_ns


class Chunk:
    """A run of queued packets of one flow: arrival timestamps plus per-packet
    retry counts (None means all zero)."""

    __slots__ = ("flow_id", "cls", "arrivals", "retries")

    def __init__(self, flow_id: str, cls: TrafficClass, arrivals: np.ndarray,
                 retries: np.ndarray | None = None):
        self.flow_id = flow_id
        self.cls = cls
        self.arrivals = arrivals
        self.retries = retries

    def __len__(self) -> int:
        return self.arrivals.size

    def retries_array(self) -> np.ndarray:
        if self.retries is None:
            return np.zeros(self.arrivals.size, dtype=np.int16)
        return self.retries

    def split(self, n: int) -> tuple["Chunk", "Chunk"]:
        head = Chunk(self.flow_id, self.cls, self.arrivals[:n],
                     None if self.retries is None else self.retries[:n])
        tail = Chunk(self.flow_id, self.cls, self.arrivals[n:],
                     None if self.retries is None else self.retries[n:])
        return head, tail


class SharedQueue:
    """Single drop-tail buffer per MLD, dequeued at grant time by whichever
    link wins; time-sensitive packets are served before best-effort ones."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._queues: dict[TrafficClass, deque[Chunk]] = {
            TrafficClass.TIME_SENSITIVE: deque(),
            TrafficClass.BEST_EFFORT: deque(),
        }
        self._len = 0

    def __len__(self) -> int:
        return self._len

    def queued_by_flow(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for q in self._queues.values():
            for c in q:
                out[c.flow_id] = out.get(c.flow_id, 0) + len(c)
        return out

    def has_class(self, cls: TrafficClass) -> bool:
        return bool(self._queues[cls])

    def has_flows(self, flow_ids: frozenset) -> bool:
        return any(c.flow_id in flow_ids for q in self._queues.values() for c in q)

    def push_arrivals(self, flow_id: str, cls: TrafficClass, arrivals: np.ndarray) -> int:
        """Append fresh arrivals; returns how many were dropped at the tail."""
        free = max(0, self.capacity - self._len)
        accept = min(free, int(arrivals.size))
        if accept > 0:
            self._queues[cls].append(Chunk(flow_id, cls, arrivals[:accept]))
            self._len += accept
        return int(arrivals.size - accept)

    def push_front(self, chunks: list[Chunk]) -> None:
        """Re-queue failed packets at the head, preserving their order. Retried
        packets are never dropped for buffer space."""
        for c in reversed(chunks):
            if len(c):
                self._queues[c.cls].appendleft(c)
                self._len += len(c)

    def peek(self, flow_filter: frozenset | None = None) -> Chunk | None:
        """Head chunk that pop() would take next, honoring class order."""
        for cls in (TrafficClass.TIME_SENSITIVE, TrafficClass.BEST_EFFORT):
            q = self._queues[cls]
            if q and (flow_filter is None or q[0].flow_id in flow_filter):
                return q[0]
        return None

    def pop(self, max_n: int, flow_filter: frozenset | None = None) -> list[Chunk]:
        """Dequeue up to max_n packets, time-sensitive class first, FIFO within
        class; optionally restricted to a set of flows."""
        out: list[Chunk] = []
        need = max_n
        for cls in (TrafficClass.TIME_SENSITIVE, TrafficClass.BEST_EFFORT):
            q = self._queues[cls]
            while need > 0 and q:
                if flow_filter is not None and q[0].flow_id not in flow_filter:
                    break
                c = q.popleft()
                if len(c) <= need:
                    out.append(c)
                    need -= len(c)
                    self._len -= len(c)
                else:
                    head, tail = c.split(need)
                    q.appendleft(tail)
                    out.append(head)
                    self._len -= need
                    need = 0
        return out


def blocking_report(ledger, domain, devices: dict, horizon: SimTime) -> dict:
    """Fraction of the horizon each OBSS device spent deferring to a given
    MLD's transmissions, per link: (mld, link, obss_device) -> fraction."""
    report = {}
    for link, per_link in enumerate(ledger.intervals):
        busy_by_dev: dict[str, int] = {}
        for iv in per_link:
            busy_by_dev[iv.device] = busy_by_dev.get(iv.device, 0) + (iv.end - iv.start)
        for mld, busy in busy_by_dev.items():
            mld_bss = devices[mld].bss
            for other_id, other in devices.items():
                if other_id == mld or other.bss == mld_bss:
                    continue
                if domain.hears(link, mld, other_id):
                    report[(mld, link, other_id)] = busy / horizon if horizon else 0.0
                else:
                    report[(mld, link, other_id)] = 0.0
    return report
