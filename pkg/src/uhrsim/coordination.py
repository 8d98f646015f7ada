"""Multi-AP coordination: set formation with null-budget validation,
contention-domain rewriting, coordinated TDMA slots, coordinated OFDMA splits."""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

from .engine import SimTime
from .phy import VALID_BANDWIDTHS_MHZ


class Scheme(enum.Enum):
    NONE = "none"
    CTDMA = "ctdma"
    COFDMA = "cofdma"
    CBF = "cbf"


class CoordinationError(ValueError):
    """Invalid coordination-set configuration."""


@dataclass(frozen=True, slots=True)
class MemberBudget:
    ap: str
    antennas: int
    served_streams: int
    null_directions: int


@dataclass(frozen=True, slots=True)
class CoordinationSet:
    members: tuple[str, ...]
    scheme: Scheme
    nulling_db: float = 0.0
    sounding_ns: SimTime = 0


def null_budget_check(antennas: int, served_streams: int, null_directions: int) -> bool:
    """An AP can steer nulls only with antennas left over after its own streams."""
    if antennas < 0 or served_streams < 0 or null_directions < 0:
        raise ValueError("antenna/stream/null counts must be non-negative")
    return antennas >= served_streams + null_directions


def form_set(budgets: list[MemberBudget], scheme: Scheme,
             nulling_db: float = 0.0, sounding_ns: SimTime = 0) -> CoordinationSet:
    if scheme is not Scheme.NONE and len(budgets) < 2:
        raise CoordinationError(f"{scheme.value} needs at least 2 member APs")
    if scheme is Scheme.CBF:
        if nulling_db < 0:
            raise CoordinationError("nulling_db must be non-negative")
        for b in budgets:
            if not null_budget_check(b.antennas, b.served_streams, b.null_directions):
                raise CoordinationError(
                    f"AP {b.ap}: {b.antennas} antennas cannot serve "
                    f"{b.served_streams} streams and place {b.null_directions} nulls")
    return CoordinationSet(tuple(b.ap for b in budgets), scheme, nulling_db, sounding_ns)


@dataclass
class ContentionDomain:
    """Per-link mutual-deferral graph plus registered cross-BSS interference
    suppression. Edges are unordered device pairs; suppression is directional
    (transmitter, receiver) -> dB."""

    edges: dict[int, set[frozenset]] = field(default_factory=dict)
    suppression: dict[tuple[str, str], float] = field(default_factory=dict)

    def add_edge(self, link: int, a: str, b: str) -> None:
        self.edges.setdefault(link, set()).add(frozenset((a, b)))

    def hears(self, link: int, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.edges.get(link, set())

    def suppression_db(self, tx: str, rx: str) -> float:
        return self.suppression.get((tx, rx), 0.0)


def rewrite_contention(domain: ContentionDomain, cset: CoordinationSet,
                       bss_of: dict[str, str]) -> ContentionDomain:
    """CBF removes deferral edges between member BSSs and registers the null
    suppression on cross-BSS paths in both directions; other schemes leave the
    domain unchanged.

    bss_of maps every device id to its AP id.
    """
    out = copy.deepcopy(domain)
    if cset.scheme is not Scheme.CBF:
        return out
    members = set(cset.members)
    for link, pairs in out.edges.items():
        drop = set()
        for pair in pairs:
            a, b = tuple(pair)
            ba, bb = bss_of[a], bss_of[b]
            if ba != bb and ba in members and bb in members:
                drop.add(pair)
        pairs -= drop
    for a, bss_a in bss_of.items():
        for b, bss_b in bss_of.items():
            if a == b or bss_a == bss_b:
                continue
            if bss_a in members and bss_b in members:
                out.suppression[(a, b)] = cset.nulling_db
    return out


def ctdma_slots(txop_ns: SimTime, members: tuple[str, ...],
                sifs_ns: SimTime) -> list[tuple[str, SimTime, SimTime]]:
    """Equal slots in member-id order, separated by SIFS: (member, offset, duration)."""
    if len(members) < 2:
        raise CoordinationError("coordinated TDMA needs at least 2 members")
    m = len(members)
    slot = (txop_ns - (m - 1) * sifs_ns) // m
    if slot <= 0:
        raise CoordinationError("TXOP too short for the member count")
    out = []
    offset = 0
    for ap in sorted(members):
        out.append((ap, offset, slot))
        offset += slot + sifs_ns
    return out


def cofdma_split(bandwidth_mhz: float, members: tuple[str, ...],
                 data_subcarriers: int) -> dict[str, tuple[float, int]]:
    """Equal subchannels: member -> (bandwidth_mhz, data_subcarriers)."""
    if len(members) < 2:
        raise CoordinationError("coordinated OFDMA needs at least 2 members")
    m = len(members)
    sub_bw = bandwidth_mhz / m
    if sub_bw not in VALID_BANDWIDTHS_MHZ or data_subcarriers % m:
        raise CoordinationError(
            f"{bandwidth_mhz} MHz does not split into {m} valid subchannels")
    sub_sc = data_subcarriers // m
    return {ap: (sub_bw, sub_sc) for ap in sorted(members)}
