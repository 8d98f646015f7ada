"""Scenario files: flat sectioned key=value text, validation with line
numbers, canonical serialization, and the canned case-study presets."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace

from .coordination import Scheme
from .engine import NS_PER_US
from .mlo import MloMode
from .phy import McsEntry, Position, VALID_BANDWIDTHS_MHZ
from .traffic import TrafficClass, TrafficModel


class ScenarioError(ValueError):
    """One or more configuration problems; message carries line numbers."""


@dataclass(frozen=True, slots=True)
class RunSection:
    duration_s: float = 120.0
    seed: int = 1


@dataclass(frozen=True, slots=True)
class ApConfig:
    id: str
    pos: Position
    antennas: int = 4


@dataclass(frozen=True, slots=True)
class StaConfig:
    id: str
    ap: str
    pos: Position
    antennas: int = 2


@dataclass(frozen=True, slots=True)
class LinksSection:
    count: int = 2
    freq_ghz: float = 6.0
    bandwidth_mhz: float = 160.0


@dataclass(frozen=True, slots=True)
class PhySection:
    tx_power_dbm: float = 20.0
    noise_figure_db: float = 7.0
    per: float = 0.10
    streams: int = 2
    data_subcarriers: int = 1960
    symbol_us: float = 13.6
    preamble_us: float = 44.0
    mcs_rows: tuple[McsEntry, ...] = ()


@dataclass(frozen=True, slots=True)
class SpConfig:
    ap: str
    start_us: float
    duration_us: float
    period_us: float
    flows: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class MacSection:
    slot_us: float = 9.0
    sifs_us: float = 16.0
    difs_us: float = 34.0
    cw_min: int = 15
    cw_max: int = 1023
    retry_limit: int = 7
    txop_limit_us: float = 5484.0
    max_ampdu: int = 1024
    buffer_packets: int = 10240
    blockack_us: float = 32.0
    preemption: bool = False
    sps: tuple[SpConfig, ...] = ()


@dataclass(frozen=True, slots=True)
class MloDeviceConfig:
    id: str
    mode: MloMode
    switch_delay_us: float = 0.0


@dataclass(frozen=True, slots=True)
class CoordSection:
    scheme: Scheme = Scheme.NONE
    members: tuple[str, ...] = ()
    nulling_db: float = 0.0
    sounding_us: float = 0.0


@dataclass(frozen=True, slots=True)
class FlowConfig:
    id: str
    src: str
    dst: str
    model: TrafficModel
    packet_bytes: int = 1500
    cls: TrafficClass = TrafficClass.BEST_EFFORT
    mean_on_ms: float = 0.0
    mean_off_ms: float = 0.0
    rate_on_gbps: float = 0.0
    lambda_pps: float = 0.0


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    run: RunSection = RunSection()
    aps: tuple[ApConfig, ...] = ()
    stas: tuple[StaConfig, ...] = ()
    links: LinksSection = LinksSection()
    phy: PhySection = PhySection()
    mac: MacSection = MacSection()
    mlo: tuple[MloDeviceConfig, ...] = ()
    coordination: CoordSection = CoordSection()
    flows: tuple[FlowConfig, ...] = ()


SECTIONS = ("run", "topology", "links", "phy", "mac", "mlo", "coordination", "traffic")

_SCALAR_KEYS = {
    "run": {"duration_s": float, "seed": int},
    "links": {"count": int, "freq_ghz": float, "bandwidth_mhz": float},
    "phy": {"tx_power_dbm": float, "noise_figure_db": float, "per": float,
            "streams": int, "data_subcarriers": int, "symbol_us": float,
            "preamble_us": float},
    "mac": {"slot_us": float, "sifs_us": float, "difs_us": float, "cw_min": int,
            "cw_max": int, "retry_limit": int, "txop_limit_us": float,
            "max_ampdu": int, "buffer_packets": int, "blockack_us": float,
            "preemption": bool},
    "coordination": {"scheme": str, "members": str, "nulling_db": float,
                     "sounding_us": float},
}
_ENTRY_KEYS = {
    "topology": ("ap", "sta"),
    "phy": ("mcs",),
    "mac": ("sp",),
    "mlo": ("device",),
    "traffic": ("flow",),
}


def _parse_bool(text: str) -> bool:
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_fields(value: str) -> dict[str, str]:
    out = {}
    for token in value.split():
        if "=" not in token:
            raise ValueError(f"expected key=value token, got {token!r}")
        k, v = token.split("=", 1)
        out[k] = v
    return out


def _pos(text: str) -> Position:
    x, y = text.split(",")
    return Position(float(x), float(y))


def _rate(text: str) -> tuple[int, int]:
    num, den = text.split("/")
    return int(num), int(den)


def parse_scenario(text: str) -> ScenarioConfig:
    errors: list[str] = []
    section = None
    scalars: dict[str, dict] = {s: {} for s in SECTIONS}
    entries: dict[tuple[str, str], list[tuple[int, dict]]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = None
            continue
        if section is None:
            errors.append(f"line {lineno}: content outside any known section")
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _ENTRY_KEYS.get(section, ()):
            try:
                entries.setdefault((section, key), []).append((lineno, _parse_fields(value)))
            except ValueError as e:
                errors.append(f"line {lineno}: {e}")
            continue
        typ = _SCALAR_KEYS.get(section, {}).get(key)
        if typ is None:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        try:
            scalars[section][key] = _parse_bool(value) if typ is bool else typ(value)
        except ValueError:
            errors.append(f"line {lineno}: bad value {value!r} for {key}")

    def take(section_key, kind, builder):
        out = []
        for lineno, fields in entries.get((section_key, kind), []):
            try:
                out.append(builder(fields))
            except (KeyError, ValueError, TypeError) as e:
                tag = e.args[0] if isinstance(e, KeyError) else e
                errors.append(f"line {lineno}: bad {kind} entry: {tag}")
        return tuple(out)

    aps = take("topology", "ap", lambda f: ApConfig(
        id=f["id"], pos=_pos(f["pos"]), antennas=int(f.get("antennas", 4))))
    stas = take("topology", "sta", lambda f: StaConfig(
        id=f["id"], ap=f["ap"], pos=_pos(f["pos"]), antennas=int(f.get("antennas", 2))))
    mcs_rows = take("phy", "mcs", lambda f: McsEntry(
        index=int(f["index"]), bits_per_symbol=int(f["bits"]),
        coding_num=_rate(f["rate"])[0], coding_den=_rate(f["rate"])[1],
        min_sinr_db=float(f["min_sinr_db"])))
    sps = take("mac", "sp", lambda f: SpConfig(
        ap=f["ap"], start_us=float(f["start_us"]), duration_us=float(f["duration_us"]),
        period_us=float(f["period_us"]), flows=tuple(f["flows"].split(","))))
    mlo = take("mlo", "device", lambda f: MloDeviceConfig(
        id=f["id"], mode=MloMode(f["mode"]),
        switch_delay_us=float(f.get("switch_delay_us", 0.0))))
    flows = take("traffic", "flow", lambda f: FlowConfig(
        id=f["id"], src=f["src"], dst=f["dst"], model=TrafficModel(f["model"]),
        packet_bytes=int(f.get("packet_bytes", 1500)),
        cls=TrafficClass(f.get("class", "be")),
        mean_on_ms=float(f.get("mean_on_ms", 0.0)),
        mean_off_ms=float(f.get("mean_off_ms", 0.0)),
        rate_on_gbps=float(f.get("rate_on_gbps", f.get("rate_gbps", 0.0))),
        lambda_pps=float(f.get("lambda_pps", 0.0))))

    coord_kw = dict(scalars["coordination"])
    if "scheme" in coord_kw:
        try:
            coord_kw["scheme"] = Scheme(coord_kw["scheme"])
        except ValueError:
            errors.append(f"unknown coordination scheme {coord_kw['scheme']!r}")
            coord_kw["scheme"] = Scheme.NONE
    if "members" in coord_kw:
        coord_kw["members"] = tuple(m for m in coord_kw["members"].split(",") if m)

    if errors:
        raise ScenarioError("; ".join(errors))

    cfg = ScenarioConfig(
        run=RunSection(**scalars["run"]),
        aps=aps, stas=stas,
        links=LinksSection(**scalars["links"]),
        phy=PhySection(**scalars["phy"], mcs_rows=mcs_rows),
        mac=MacSection(**scalars["mac"], sps=sps),
        mlo=mlo,
        coordination=CoordSection(**coord_kw),
        flows=flows,
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    errors: list[str] = []
    ap_ids = {a.id for a in cfg.aps}
    sta_ids = {s.id for s in cfg.stas}
    if len(ap_ids) != len(cfg.aps) or len(sta_ids) != len(cfg.stas) or ap_ids & sta_ids:
        errors.append("device ids must be unique")
    sta_of = {s.id: s for s in cfg.stas}
    for s in cfg.stas:
        if s.ap not in ap_ids:
            errors.append(f"sta {s.id} references unknown AP {s.ap!r}")
    for dev in (*cfg.aps, *cfg.stas):
        if not (math.isfinite(dev.pos.x) and math.isfinite(dev.pos.y)):
            errors.append(f"device {dev.id} has a non-finite position")
    if cfg.links.count < 1:
        errors.append("links.count must be >= 1")
    if cfg.links.bandwidth_mhz not in VALID_BANDWIDTHS_MHZ:
        errors.append(f"links.bandwidth_mhz must be one of {VALID_BANDWIDTHS_MHZ}")
    if not 0 <= cfg.phy.per < 1:
        errors.append("phy.per outside [0, 1)")
    if cfg.mac.cw_min > cfg.mac.cw_max:
        errors.append("mac.cw_min exceeds cw_max")
    if cfg.mac.buffer_packets < 1 or cfg.mac.max_ampdu < 1:
        errors.append("mac buffer and aggregation limits must be positive")
    rows = cfg.phy.mcs_rows
    for prev, cur in zip(rows, rows[1:]):
        if cur.min_sinr_db <= prev.min_sinr_db:
            errors.append("mcs rows: min_sinr_db must be strictly increasing")
            break
        if (cur.bits_per_symbol * cur.coding_num * prev.coding_den
                <= prev.bits_per_symbol * prev.coding_num * cur.coding_den):
            errors.append("mcs rows: efficiency must be strictly increasing")
            break
    mlo_ids = [m.id for m in cfg.mlo]
    if len(set(mlo_ids)) != len(mlo_ids):
        errors.append("duplicate device in [mlo]")
    for m in cfg.mlo:
        if m.id not in ap_ids and m.id not in sta_ids:
            errors.append(f"mlo entry references unknown device {m.id!r}")
    flow_ids = {f.id for f in cfg.flows}
    if len(flow_ids) != len(cfg.flows):
        errors.append("duplicate flow ids")
    for f in cfg.flows:
        if f.src not in ap_ids:
            errors.append(f"flow {f.id}: src {f.src!r} is not a known AP (downlink only)")
        elif f.dst not in sta_ids or sta_of[f.dst].ap != f.src:
            errors.append(f"flow {f.id}: dst {f.dst!r} is not a STA of {f.src}")
        if f.model is TrafficModel.ONOFF and (f.mean_on_ms <= 0 or f.mean_off_ms <= 0):
            errors.append(f"flow {f.id}: onoff needs positive mean_on_ms/mean_off_ms")
        if f.model in (TrafficModel.ONOFF, TrafficModel.CBR) and f.rate_on_gbps <= 0:
            errors.append(f"flow {f.id}: needs a positive rate")
        if f.model is TrafficModel.POISSON and f.lambda_pps <= 0:
            errors.append(f"flow {f.id}: poisson needs lambda_pps")
        if f.packet_bytes <= 0:
            errors.append(f"flow {f.id}: packet_bytes must be positive")
    coord = cfg.coordination
    if coord.scheme is not Scheme.NONE:
        if len(coord.members) < 2:
            errors.append(f"coordination scheme {coord.scheme.value} needs >= 2 members")
        for m in coord.members:
            if m not in ap_ids:
                errors.append(f"coordination member {m!r} is not a known AP")
    if coord.scheme is Scheme.CBF and coord.nulling_db <= 0:
        errors.append("coordination.scheme=cbf requires nulling_db > 0")
    for sp in cfg.mac.sps:
        if sp.ap not in ap_ids:
            errors.append(f"sp references unknown AP {sp.ap!r}")
        for fl in sp.flows:
            if fl not in flow_ids:
                errors.append(f"sp references unknown flow {fl!r}")
        if not 0 < sp.duration_us < sp.period_us:
            errors.append(f"sp on {sp.ap}: duration must sit inside the period")
    if cfg.run.duration_s <= 0:
        errors.append("run.duration_s must be positive")
    if errors:
        raise ScenarioError("; ".join(errors))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: ScenarioConfig) -> str:
    out = []
    out.append("[run]")
    out.append(f"duration_s = {_fmt(cfg.run.duration_s)}")
    out.append(f"seed = {cfg.run.seed}")
    out.append("")
    out.append("[topology]")
    for a in cfg.aps:
        out.append(f"ap = id={a.id} pos={_fmt(a.pos.x)},{_fmt(a.pos.y)} antennas={a.antennas}")
    for s in cfg.stas:
        out.append(f"sta = id={s.id} ap={s.ap} pos={_fmt(s.pos.x)},{_fmt(s.pos.y)} antennas={s.antennas}")
    out.append("")
    out.append("[links]")
    out.append(f"count = {cfg.links.count}")
    out.append(f"freq_ghz = {_fmt(cfg.links.freq_ghz)}")
    out.append(f"bandwidth_mhz = {_fmt(cfg.links.bandwidth_mhz)}")
    out.append("")
    out.append("[phy]")
    p = cfg.phy
    out.append(f"tx_power_dbm = {_fmt(p.tx_power_dbm)}")
    out.append(f"noise_figure_db = {_fmt(p.noise_figure_db)}")
    out.append(f"per = {_fmt(p.per)}")
    out.append(f"streams = {p.streams}")
    out.append(f"data_subcarriers = {p.data_subcarriers}")
    out.append(f"symbol_us = {_fmt(p.symbol_us)}")
    out.append(f"preamble_us = {_fmt(p.preamble_us)}")
    for r in p.mcs_rows:
        out.append(f"mcs = index={r.index} bits={r.bits_per_symbol} "
                   f"rate={r.coding_num}/{r.coding_den} min_sinr_db={_fmt(r.min_sinr_db)}")
    out.append("")
    out.append("[mac]")
    m = cfg.mac
    out.append(f"slot_us = {_fmt(m.slot_us)}")
    out.append(f"sifs_us = {_fmt(m.sifs_us)}")
    out.append(f"difs_us = {_fmt(m.difs_us)}")
    out.append(f"cw_min = {m.cw_min}")
    out.append(f"cw_max = {m.cw_max}")
    out.append(f"retry_limit = {m.retry_limit}")
    out.append(f"txop_limit_us = {_fmt(m.txop_limit_us)}")
    out.append(f"max_ampdu = {m.max_ampdu}")
    out.append(f"buffer_packets = {m.buffer_packets}")
    out.append(f"blockack_us = {_fmt(m.blockack_us)}")
    out.append(f"preemption = {_fmt(m.preemption)}")
    for sp in m.sps:
        out.append(f"sp = ap={sp.ap} start_us={_fmt(sp.start_us)} "
                   f"duration_us={_fmt(sp.duration_us)} period_us={_fmt(sp.period_us)} "
                   f"flows={','.join(sp.flows)}")
    out.append("")
    out.append("[mlo]")
    for d in cfg.mlo:
        out.append(f"device = id={d.id} mode={d.mode.value} switch_delay_us={_fmt(d.switch_delay_us)}")
    out.append("")
    out.append("[coordination]")
    c = cfg.coordination
    out.append(f"scheme = {c.scheme.value}")
    if c.members:
        out.append(f"members = {','.join(c.members)}")
    out.append(f"nulling_db = {_fmt(c.nulling_db)}")
    out.append(f"sounding_us = {_fmt(c.sounding_us)}")
    out.append("")
    out.append("[traffic]")
    for f in cfg.flows:
        parts = [f"flow = id={f.id} src={f.src} dst={f.dst} model={f.model.value}",
                 f"packet_bytes={f.packet_bytes}", f"class={f.cls.value}"]
        if f.model is TrafficModel.ONOFF:
            parts.append(f"mean_on_ms={_fmt(f.mean_on_ms)} mean_off_ms={_fmt(f.mean_off_ms)} "
                         f"rate_on_gbps={_fmt(f.rate_on_gbps)}")
        elif f.model is TrafficModel.CBR:
            parts.append(f"rate_on_gbps={_fmt(f.rate_on_gbps)}")
        else:
            parts.append(f"lambda_pps={_fmt(f.lambda_pps)}")
        out.append(" ".join(parts))
    out.append("")
    return "\n".join(out)


# sweepable numeric scenario fields: dotted key -> (section attr, field name)
_SWEEP_SECTIONS = {"run": "run", "links": "links", "phy": "phy",
                   "mac": "mac", "coordination": "coordination"}


def set_key(cfg: ScenarioConfig, dotted: str, value: float) -> ScenarioConfig:
    """Return a copy with one numeric field replaced; used by sweeps."""
    try:
        section_name, field_name = dotted.split(".", 1)
        attr = _SWEEP_SECTIONS[section_name]
    except (ValueError, KeyError):
        raise ScenarioError(f"not a sweepable key: {dotted!r}")
    section = getattr(cfg, attr)
    fields = {f.name: f.type for f in dataclasses.fields(section)}
    if field_name not in fields:
        raise ScenarioError(f"not a sweepable key: {dotted!r}")
    current = getattr(section, field_name)
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ScenarioError(f"key {dotted!r} is not numeric")
    new_value = type(current)(value)
    new_cfg = replace(cfg, **{attr: replace(section, **{field_name: new_value})})
    validate(new_cfg)
    return new_cfg


def us_to_ns(us: float) -> int:
    return round(us * NS_PER_US)


# ---------------------------------------------------------------------------
# Canned case-study presets

_CASE_STUDY_BASE = """\
[run]
duration_s = 120.0
seed = 1

[topology]
ap = id=ap1 pos=5.0,10.0 antennas=4
ap = id=ap2 pos=10.0,10.0 antennas=4
sta = id=sta1 ap=ap1 pos=5.0,12.5 antennas=2
sta = id=sta2 ap=ap2 pos=10.0,12.5 antennas=2

[links]
count = 2
freq_ghz = 6.0
bandwidth_mhz = 160.0

[phy]
tx_power_dbm = 20.0
noise_figure_db = 7.0
per = 0.1
streams = 2
data_subcarriers = 1960
symbol_us = 13.6
preamble_us = 44.0

[mac]
slot_us = 9.0
sifs_us = 16.0
difs_us = 34.0
cw_min = 15
cw_max = 1023
retry_limit = 7
txop_limit_us = 5484.0
max_ampdu = 1024
buffer_packets = 10240
blockack_us = 32.0
preemption = off

[mlo]
device = id=ap1 mode=emlmr_str switch_delay_us=0.0
device = id=ap2 mode=emlmr_str switch_delay_us=0.0

[coordination]
{coordination}

[traffic]
flow = id=f1 src=ap1 dst=sta1 model=onoff packet_bytes=1500 class=be mean_on_ms=4.15 mean_off_ms=4.15 rate_on_gbps=4.0
flow = id=f2 src=ap2 dst=sta2 model=onoff packet_bytes=1500 class=be mean_on_ms=4.15 mean_off_ms=4.15 rate_on_gbps=4.0
"""

PRESETS = {
    "case-study-mlo": _CASE_STUDY_BASE.format(
        coordination="scheme = none"),
    "case-study-cbf": _CASE_STUDY_BASE.format(
        coordination="scheme = cbf\nmembers = ap1,ap2\nnulling_db = 30.0\nsounding_us = 0.0"),
}


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
