"""SINR-based PHY abstraction: indoor path loss, noise floor, SINR with
imperfect interference nulls, MCS selection, PHY rate and PPDU airtime."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import SimTime

BREAKPOINT_M = 5.0
NOISE_DENSITY_DBM_HZ = -174.0


@dataclass(frozen=True, slots=True)
class Position:
    x: float
    y: float

    def distance_to(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, slots=True)
class McsEntry:
    """One modulation/coding point. coding rate kept as an exact fraction so
    airtime symbol counts never suffer float rounding."""

    index: int
    bits_per_symbol: int      # log2 of the modulation order
    coding_num: int
    coding_den: int
    min_sinr_db: float

    @property
    def coding_rate(self) -> float:
        return self.coding_num / self.coding_den

    @property
    def label(self) -> str:
        names = {1: "BPSK", 2: "QPSK", 4: "16-QAM", 6: "64-QAM",
                 8: "256-QAM", 10: "1024-QAM", 12: "4096-QAM"}
        mod = names.get(self.bits_per_symbol, f"2^{self.bits_per_symbol}")
        return f"{mod} {self.coding_num}/{self.coding_den}"


# Thresholds calibrated so the case-study operating points
# (48.99 / 37.4 / 27.7 / 17.7 dB) map to MCS 13 / 13 / 9 / 4.
DEFAULT_MCS_TABLE: tuple[McsEntry, ...] = (
    McsEntry(0, 1, 1, 2, 2.0),
    McsEntry(1, 2, 1, 2, 5.0),
    McsEntry(2, 2, 3, 4, 8.0),
    McsEntry(3, 4, 1, 2, 11.0),
    McsEntry(4, 4, 3, 4, 14.5),
    McsEntry(5, 6, 2, 3, 18.0),
    McsEntry(6, 6, 3, 4, 19.5),
    McsEntry(7, 6, 5, 6, 21.0),
    McsEntry(8, 8, 3, 4, 24.0),
    McsEntry(9, 8, 5, 6, 27.0),
    McsEntry(10, 10, 3, 4, 30.0),
    McsEntry(11, 10, 5, 6, 33.0),
    McsEntry(12, 12, 3, 4, 35.0),
    McsEntry(13, 12, 5, 6, 37.0),
)

VALID_BANDWIDTHS_MHZ = (20, 40, 80, 160, 320)


@dataclass(frozen=True, slots=True)
class PhyConfig:
    freq_ghz: float = 6.0
    bandwidth_mhz: float = 160.0
    data_subcarriers: int = 1960
    symbol_ns: int = 13_600          # 12.8 us + 0.8 us guard
    preamble_ns: int = 44_000
    noise_figure_db: float = 7.0
    tx_power_dbm: float = 20.0
    per_target: float = 0.10
    mcs_table: tuple[McsEntry, ...] = DEFAULT_MCS_TABLE

    def __post_init__(self):
        if self.bandwidth_mhz not in VALID_BANDWIDTHS_MHZ:
            raise ValueError(f"bandwidth {self.bandwidth_mhz} MHz not in {VALID_BANDWIDTHS_MHZ}")
        if not 0.0 <= self.per_target < 1.0:
            raise ValueError(f"per_target {self.per_target} outside [0, 1)")


def path_loss_db(tx: Position, rx: Position, freq_ghz: float) -> float:
    """TGax-style indoor residential loss with a 5 m breakpoint; floor and
    wall terms are zero (single open space)."""
    if freq_ghz <= 0:
        raise ValueError("carrier frequency must be positive")
    d = tx.distance_to(rx)
    if d <= 0:
        raise ValueError("co-located transmitter and receiver")
    pl = 40.05 + 20.0 * math.log10(freq_ghz / 2.4) + 20.0 * math.log10(min(d, BREAKPOINT_M))
    if d > BREAKPOINT_M:
        pl += 35.0 * math.log10(d / BREAKPOINT_M)
    return pl


def noise_floor_dbm(bandwidth_mhz: float, noise_figure_db: float) -> float:
    if bandwidth_mhz <= 0:
        raise ValueError("bandwidth must be positive")
    return NOISE_DENSITY_DBM_HZ + 10.0 * math.log10(bandwidth_mhz * 1e6) + noise_figure_db


def sinr_db(signal_dbm: float,
            interferers: list[tuple[float, float]],
            noise_dbm: float) -> float:
    """SINR with each interferer attenuated by its nulling suppression.

    interferers: (power_dbm, suppression_db) pairs; suppression must be >= 0.
    """
    denom_mw = 10.0 ** (noise_dbm / 10.0)
    for power_dbm, suppression_db in interferers:
        if suppression_db < 0:
            raise ValueError("suppression must be non-negative")
        denom_mw += 10.0 ** ((power_dbm - suppression_db) / 10.0)
    return signal_dbm - 10.0 * math.log10(denom_mw)


def select_mcs(sinr: float, table: tuple[McsEntry, ...] = DEFAULT_MCS_TABLE) -> McsEntry | None:
    """Highest-index entry whose threshold is met; None means no transmission
    is possible at this SINR."""
    chosen = None
    for entry in table:
        if entry.min_sinr_db <= sinr:
            chosen = entry
        else:
            break
    return chosen


def _symbol_bits(mcs: McsEntry, data_subcarriers: int, streams: int) -> tuple[int, int]:
    # bits carried per OFDM symbol as an exact fraction num/den
    return data_subcarriers * mcs.bits_per_symbol * mcs.coding_num * streams, mcs.coding_den


def phy_rate_bps(mcs: McsEntry, cfg: PhyConfig, streams: int,
                 data_subcarriers: int | None = None) -> float:
    if streams < 1:
        raise ValueError("streams must be >= 1")
    sc = cfg.data_subcarriers if data_subcarriers is None else data_subcarriers
    num, den = _symbol_bits(mcs, sc, streams)
    return num / den / (cfg.symbol_ns * 1e-9)


def ppdu_airtime(n_mpdus: int, mpdu_bytes: int, mcs: McsEntry, cfg: PhyConfig,
                 streams: int, data_subcarriers: int | None = None) -> SimTime:
    """Preamble plus payload rounded up to whole OFDM symbols, in ns."""
    if n_mpdus < 1:
        raise ValueError("a PPDU carries at least one MPDU")
    sc = cfg.data_subcarriers if data_subcarriers is None else data_subcarriers
    num, den = _symbol_bits(mcs, sc, streams)
    bits = n_mpdus * mpdu_bytes * 8
    symbols = -(-bits * den // num)  # ceil division on exact integers
    return cfg.preamble_ns + symbols * cfg.symbol_ns


def mpdus_fitting(budget_ns: SimTime, mpdu_bytes: int, mcs: McsEntry, cfg: PhyConfig,
                  streams: int, data_subcarriers: int | None = None) -> int:
    """Largest MPDU count whose symbol-rounded payload plus preamble fits budget_ns."""
    usable = budget_ns - cfg.preamble_ns
    if usable < cfg.symbol_ns:
        return 0
    sc = cfg.data_subcarriers if data_subcarriers is None else data_subcarriers
    num, den = _symbol_bits(mcs, sc, streams)
    symbols = usable // cfg.symbol_ns
    n = symbols * num // (den * mpdu_bytes * 8)
    # symbol rounding can leave room for one more
    while ppdu_airtime(n + 1, mpdu_bytes, mcs, cfg, streams, sc) <= budget_ns:
        n += 1
    return int(n)


def mpdus_sent_by(elapsed_payload_ns: SimTime, mpdu_bytes: int, mcs: McsEntry,
                  cfg: PhyConfig, streams: int) -> int:
    """MPDUs fully on air after elapsed_payload_ns of payload time (no preamble)."""
    if elapsed_payload_ns <= 0:
        return 0
    num, den = _symbol_bits(mcs, cfg.data_subcarriers, streams)
    bits_sent = elapsed_payload_ns * num // (den * cfg.symbol_ns)
    return int(bits_sent // (mpdu_bytes * 8))


def mpdu_error_trial(per: float, rng) -> bool:
    """Independent Bernoulli(per) loss for one MPDU; True means failed."""
    if not 0.0 <= per < 1.0:
        raise ValueError("per outside [0, 1)")
    return bool(rng.random() < per)
