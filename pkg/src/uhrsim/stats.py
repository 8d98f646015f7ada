"""Delay recording with bounded-error log histogram, airtime ledger and
auditors, conservation accounting, and result file export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import SimTime

# Geometric bin growth of 0.9% bounds the upper-edge quantile estimate within
# 1% of the true order statistic.
HIST_RATIO = 1.009
HIST_MIN_NS = 1_000            # 1 us
HIST_MAX_NS = 100_000_000_000  # 100 s
EXACT_SAMPLE_CAP = 1_000_000

_N_EDGES = math.ceil(math.log(HIST_MAX_NS / HIST_MIN_NS) / math.log(HIST_RATIO)) + 1
HIST_EDGES_NS = HIST_MIN_NS * HIST_RATIO ** np.arange(_N_EDGES)


class InsufficientSamplesError(ValueError):
    """Too few delivered samples for the requested quantile rank."""


class AuditError(RuntimeError):
    """A run-level invariant (conservation, exclusion, R-TWT, bounds) failed."""


class DelayAccumulator:
    """Per-flow delay samples: an exact list for small runs plus a log-spaced
    histogram whose quantiles stay within 1% of the sort oracle.

    Also carries the flow's conservation counters (generated, delivered,
    dropped_buffer, dropped_retry).
    """

    def __init__(self, flow_id: str = "", exact_cap: int = EXACT_SAMPLE_CAP):
        self.flow_id = flow_id
        self.exact_cap = exact_cap
        self.counts = np.zeros(len(HIST_EDGES_NS) + 1, dtype=np.int64)
        self.exact: list[int] | None = []
        self.delivered = 0
        self.generated = 0
        self.dropped_buffer = 0
        self.dropped_retry = 0
        self.sum_delay_ns = 0

    def record(self, delay_ns: SimTime) -> None:
        if delay_ns < 0:
            raise ValueError("negative delay")
        self.record_many(np.asarray([delay_ns], dtype=np.int64))

    def record_many(self, delays_ns: np.ndarray) -> None:
        if delays_ns.size == 0:
            return
        idx = np.searchsorted(HIST_EDGES_NS, delays_ns, side="left")
        np.add.at(self.counts, idx, 1)
        self.delivered += int(delays_ns.size)
        self.sum_delay_ns += int(delays_ns.sum())
        if self.exact is not None:
            if self.delivered <= self.exact_cap:
                self.exact.extend(delays_ns.tolist())
            else:
                self.exact = None  # histogram-only beyond the memory cap

    def quantile(self, q: float) -> SimTime:
        if not 0.0 < q < 1.0:
            raise ValueError(f"quantile {q} outside (0, 1)")
        n = self.delivered
        if n < math.ceil(1.0 / (1.0 - q)):
            raise InsufficientSamplesError(
                f"flow {self.flow_id}: {n} samples cannot resolve q={q}")
        rank = math.ceil(q * n)
        if self.exact is not None:
            return sorted(self.exact)[rank - 1]
        cum = np.cumsum(self.counts)
        b = int(np.searchsorted(cum, rank, side="left"))
        if b == 0:
            return HIST_MIN_NS
        edge = HIST_EDGES_NS[min(b, len(HIST_EDGES_NS) - 1)]
        return int(math.ceil(edge))

    def mean_ns(self) -> float:
        return self.sum_delay_ns / self.delivered if self.delivered else 0.0

    def ccdf_rows(self) -> list[tuple[float, float]]:
        """(delay_us, P(delay > delay_us)) rows for non-empty bins, ascending."""
        n = self.delivered
        if n == 0:
            return []
        rows = []
        cum = 0
        for b in np.flatnonzero(self.counts):
            cum += int(self.counts[b])
            edge_ns = HIST_MIN_NS if b == 0 else HIST_EDGES_NS[min(b, len(HIST_EDGES_NS) - 1)]
            rows.append((edge_ns / 1_000.0, (n - cum) / n))
        return rows


@dataclass(slots=True)
class TxInterval:
    link: int
    device: str
    start: SimTime
    end: SimTime
    tag: str                 # "data" | "ctdma" | "cofdma" | "urgent"
    subchannel: int = 0
    flows: tuple[str, ...] = ()


class AirtimeLedger:
    """Busy intervals per link tagged by transmitter; feeds the exclusion,
    R-TWT and utilization auditors plus the OBSS blocking report."""

    def __init__(self, n_links: int):
        self.intervals: list[list[TxInterval]] = [[] for _ in range(n_links)]
        self.deferral_ns: dict[str, int] = {}

    def add(self, iv: TxInterval) -> None:
        self.intervals[iv.link].append(iv)

    def clip(self, horizon: SimTime) -> None:
        for per_link in self.intervals:
            for iv in per_link:
                if iv.end > horizon:
                    iv.end = horizon

    def busy_ns(self, link: int, device: str | None = None) -> int:
        return sum(iv.end - iv.start for iv in self.intervals[link]
                   if device is None or iv.device == device)

    def utilization(self, link: int, horizon: SimTime) -> float:
        """Union busy time over the horizon (overlaps counted once)."""
        ivs = sorted((iv.start, iv.end) for iv in self.intervals[link])
        busy = 0
        cur_s, cur_e = None, None
        for s, e in ivs:
            if cur_e is None or s > cur_e:
                if cur_e is not None:
                    busy += cur_e - cur_s
                cur_s, cur_e = s, e
            else:
                cur_e = max(cur_e, e)
        if cur_e is not None:
            busy += cur_e - cur_s
        return busy / horizon if horizon else 0.0

    def audit_bounds(self, horizon: SimTime) -> None:
        for link, per_link in enumerate(self.intervals):
            per_device: dict[str, int] = {}
            for iv in per_link:
                if iv.start < 0 or iv.end > horizon or iv.start > iv.end:
                    raise AuditError(
                        f"link {link}: interval [{iv.start}, {iv.end}] outside [0, {horizon}]")
                if not iv.device:
                    raise AuditError(f"link {link}: untagged busy time")
                per_device[iv.device] = per_device.get(iv.device, 0) + (iv.end - iv.start)
            for dev, total in per_device.items():
                if total > horizon:
                    raise AuditError(f"link {link}: {dev} busy {total} ns > horizon")

    def audit_exclusion(self, hears) -> None:
        """No two transmissions of mutually-sensing devices may overlap unless
        both started on the same tick (equal-backoff collision) or both belong
        to a coordinated TXOP.

        hears: callable (link, device_a, device_b) -> bool.
        """
        for link, per_link in enumerate(self.intervals):
            ivs = sorted(per_link, key=lambda iv: (iv.start, iv.end))
            active: list[TxInterval] = []
            for iv in ivs:
                active = [a for a in active if a.end > iv.start]
                for a in active:
                    if a.device == iv.device:
                        continue
                    if not hears(link, a.device, iv.device):
                        continue
                    coordinated = ("ctdma", "ctdma_member", "cofdma")
                    if a.tag in coordinated and iv.tag in coordinated:
                        continue
                    if a.start == iv.start:
                        continue  # equal-backoff collision
                    raise AuditError(
                        f"link {link}: {iv.device} tx at {iv.start} overlaps "
                        f"{a.device} tx [{a.start}, {a.end}] in the same contention domain")
                active.append(iv)

    def audit_rtwt(self, sp_windows: list[tuple[SimTime, SimTime, frozenset]]) -> None:
        """Zero non-member airtime may intersect any service period window."""
        for link_ivs in self.intervals:
            for iv in link_ivs:
                for start, end, member_flows in sp_windows:
                    if iv.start < end and iv.end > start:
                        if not iv.flows or not set(iv.flows) <= member_flows:
                            raise AuditError(
                                f"non-member tx by {iv.device} [{iv.start}, {iv.end}] "
                                f"intersects R-TWT SP [{start}, {end})")


def conservation_report(flows: dict[str, DelayAccumulator],
                        queued_end: dict[str, int],
                        inflight_end: dict[str, int]) -> dict[str, dict[str, int]]:
    """Per-flow accounting identity; raises AuditError with the diff on imbalance."""
    report = {}
    bad = []
    for fid, acc in flows.items():
        q = queued_end.get(fid, 0)
        f = inflight_end.get(fid, 0)
        accounted = acc.delivered + acc.dropped_buffer + acc.dropped_retry + q + f
        report[fid] = {
            "generated": acc.generated,
            "delivered": acc.delivered,
            "dropped_buffer": acc.dropped_buffer,
            "dropped_retry": acc.dropped_retry,
            "queued_end": q,
            "inflight_end": f,
        }
        if accounted != acc.generated:
            bad.append(f"flow {fid}: generated={acc.generated} accounted={accounted} "
                       f"diff={acc.generated - accounted} ({report[fid]})")
    if bad:
        raise AuditError("conservation imbalance: " + "; ".join(bad))
    return report


QUANTILES = (("p50_us", 0.5), ("p99_us", 0.99), ("p999999_us", 0.999999))


def summary_lines(flows: dict[str, DelayAccumulator],
                  link_util: dict[int, float],
                  mcs_counts: dict[str, dict[int, int]]) -> list[str]:
    lines = []
    for fid in sorted(flows):
        acc = flows[fid]
        parts = [f"flow={fid}", f"delivered={acc.delivered}"]
        for name, q in QUANTILES:
            try:
                parts.append(f"{name}={acc.quantile(q) / 1_000.0:.3f}")
            except InsufficientSamplesError:
                parts.append(f"{name}=na")
        parts.append(f"mean_us={acc.mean_ns() / 1_000.0:.3f}")
        parts.append(f"generated={acc.generated}")
        parts.append(f"dropped_buffer={acc.dropped_buffer}")
        parts.append(f"dropped_retry={acc.dropped_retry}")
        lines.append(" ".join(parts))
    for link in sorted(link_util):
        lines.append(f"link={link} util={link_util[link]:.4f}")
    for dev in sorted(mcs_counts):
        hist = ",".join(f"{idx}:{n}" for idx, n in sorted(mcs_counts[dev].items()))
        lines.append(f"mcs device={dev} counts={hist}")
    return lines


def export(flows: dict[str, DelayAccumulator],
           link_util: dict[int, float],
           mcs_counts: dict[str, dict[int, int]],
           out_dir: str | Path) -> Path:
    """Write summary.txt plus one CCDF csv per flow; byte-stable per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join(summary_lines(flows, link_util, mcs_counts)) + "\n"
    (out / "summary.txt").write_text(text)
    for fid in sorted(flows):
        rows = flows[fid].ccdf_rows()
        body = "delay_us,ccdf\n" + "".join(f"{d:.3f},{c:.9f}\n" for d, c in rows)
        (out / f"ccdf_{fid}.csv").write_text(body)
    return out
