"""Packet arrival processes: bursty On/Off (exponential phases, deterministic
in-phase spacing), constant-rate, and Poisson sources."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .engine import NS_PER_S, RngStream, SimTime

FAR_FUTURE = 1 << 62


class TrafficModel(enum.Enum):
    ONOFF = "onoff"
    CBR = "cbr"
    POISSON = "poisson"


class TrafficClass(enum.Enum):
    BEST_EFFORT = "be"
    TIME_SENSITIVE = "ts"


@dataclass(frozen=True, slots=True)
class FlowSpec:
    id: str
    src: str
    dst: str
    model: TrafficModel
    packet_bytes: int
    cls: TrafficClass = TrafficClass.BEST_EFFORT
    mean_on_ns: SimTime = 0          # ONOFF
    mean_off_ns: SimTime = 0         # ONOFF
    rate_on_bps: float = 0.0         # ONOFF peak rate / CBR rate
    lambda_pps: float = 0.0          # POISSON

    def __post_init__(self):
        if self.packet_bytes <= 0:
            raise ValueError(f"flow {self.id}: packet_bytes must be positive")
        if self.model in (TrafficModel.ONOFF, TrafficModel.CBR) and self.rate_on_bps <= 0:
            raise ValueError(f"flow {self.id}: rate must be positive")
        if self.model is TrafficModel.POISSON and self.lambda_pps <= 0:
            raise ValueError(f"flow {self.id}: lambda must be positive")

    @property
    def packet_bits(self) -> int:
        return self.packet_bytes * 8

    @property
    def spacing_ns(self) -> SimTime:
        return round(self.packet_bits * NS_PER_S / self.rate_on_bps)


class BurstSource:
    """On/Off (or always-on CBR) arrivals, materialized lazily in batches.

    Within an On phase packets arrive at exact spacing starting at the phase
    start; collect(t) returns every arrival in (last, min(t, phase end)].
    """

    def __init__(self, spec: FlowSpec, rng: RngStream):
        self.spec = spec
        self.rng = rng
        self.spacing = spec.spacing_ns
        if spec.model is TrafficModel.CBR:
            self.on = True
            self.phase_start = 0
            self.phase_end = FAR_FUTURE
        else:
            p_on = spec.mean_on_ns / (spec.mean_on_ns + spec.mean_off_ns)
            self.on = bool(rng.random() < p_on)
            self.phase_start = 0
            self.phase_end = self._draw_phase()
        self.emitted = 0  # packets materialized in the current On phase

    def _draw_phase(self) -> SimTime:
        mean = self.spec.mean_on_ns if self.on else self.spec.mean_off_ns
        return self.phase_start + max(1, round(self.rng.exponential(mean)))

    def boundary(self) -> SimTime:
        return self.phase_end

    def on_boundary(self) -> None:
        self.phase_start = self.phase_end
        self.on = not self.on
        self.emitted = 0
        self.phase_end = self._draw_phase()

    def collect(self, t: SimTime) -> np.ndarray:
        """Arrival timestamps up to and including t (bounded by the phase end,
        exclusive); advances the materialization cursor."""
        if not self.on:
            return np.empty(0, dtype=np.int64)
        hi = min(t, self.phase_end - 1)
        if hi < self.phase_start:
            return np.empty(0, dtype=np.int64)
        k_max = (hi - self.phase_start) // self.spacing
        if k_max < self.emitted:
            return np.empty(0, dtype=np.int64)
        ks = np.arange(self.emitted, k_max + 1, dtype=np.int64)
        self.emitted = int(k_max) + 1
        return self.phase_start + ks * self.spacing

    def next_arrival_after(self, t: SimTime) -> SimTime:
        """Earliest possible arrival strictly after t; never later than the
        true next arrival (phase flips are resolved by the caller's events)."""
        if self.on:
            k = self.emitted
            if t >= self.phase_start:
                k = max(k, (t - self.phase_start) // self.spacing + 1)
            cand = self.phase_start + k * self.spacing
            return cand if cand < self.phase_end else self.phase_end
        return self.phase_end  # next On phase starts with an arrival


class PoissonSource:
    """Memoryless per-packet arrivals; evented (one boundary per packet)."""

    def __init__(self, spec: FlowSpec, rng: RngStream):
        self.spec = spec
        self.rng = rng
        self.next_at = self._gap(0)

    def _gap(self, t: SimTime) -> SimTime:
        return t + max(1, round(self.rng.exponential(NS_PER_S / self.spec.lambda_pps)))

    def boundary(self) -> SimTime:
        return self.next_at

    def on_boundary(self) -> None:
        self.next_at = self._gap(self.next_at)

    def collect(self, t: SimTime) -> np.ndarray:
        out = []
        while self.next_at <= t:
            out.append(self.next_at)
            self.on_boundary()
        return np.asarray(out, dtype=np.int64)

    def next_arrival_after(self, t: SimTime) -> SimTime:
        return self.next_at if self.next_at > t else t + 1


def make_source(spec: FlowSpec, rng: RngStream):
    if spec.model is TrafficModel.POISSON:
        return PoissonSource(spec, rng)
    return BurstSource(spec, rng)


def iter_events(spec: FlowSpec, rng: RngStream, horizon_ns: SimTime):
    """Yield (time_ns, "arrival" | "phase") events in order up to the horizon."""
    src = make_source(spec, rng)
    now = 0
    while now <= horizon_ns:
        b = src.boundary()
        for t in src.collect(min(b - 1, horizon_ns)):
            yield int(t), "arrival"
        if b > horizon_ns:
            return
        now = b
        src.on_boundary()
        if not isinstance(src, BurstSource):
            yield now, "arrival"


def offered_load_bps(spec: FlowSpec, rng: RngStream, horizon_ns: SimTime) -> float:
    """Measured generated-bit rate over the horizon (no queueing involved)."""
    if horizon_ns < 10 * NS_PER_S:
        raise ValueError("offered-load check needs at least 10 s simulated")
    src = make_source(spec, rng)
    packets = 0
    while True:
        b = src.boundary()
        packets += src.collect(min(b - 1, horizon_ns)).size
        if b > horizon_ns:
            break
        src.on_boundary()
        if isinstance(src, PoissonSource):
            packets += 1
    return packets * spec.packet_bits / (horizon_ns / NS_PER_S)
