"""Scenario runtime: builds devices, links and flows from a ScenarioConfig and
drives contention, TXOPs, coordination, R-TWT and preemption on the engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import coordination as coord
from . import mac, mlo, phy, stats
from .engine import NS_PER_S, Engine, SimTime
from .scenario import ScenarioConfig, us_to_ns
from .traffic import (BurstSource, FlowSpec, TrafficClass, TrafficModel,
                      make_source)

FAR_FUTURE = 1 << 62


def _flow_spec_ns(f) -> FlowSpec:
    return FlowSpec(
        id=f.id, src=f.src, dst=f.dst, model=f.model,
        packet_bytes=f.packet_bytes, cls=f.cls,
        mean_on_ns=round(f.mean_on_ms * 1e6), mean_off_ns=round(f.mean_off_ms * 1e6),
        rate_on_bps=f.rate_on_gbps * 1e9, lambda_pps=f.lambda_pps)


class FlowRuntime:
    __slots__ = ("spec", "source", "acc", "evented")

    def __init__(self, spec: FlowSpec, source, evented: bool):
        self.spec = spec
        self.source = source
        self.acc = stats.DelayAccumulator(spec.id)
        self.evented = evented


class Device:
    def __init__(self, dev_id: str, pos: phy.Position, antennas: int,
                 is_ap: bool, bss: str):
        self.id = dev_id
        self.pos = pos
        self.antennas = antennas
        self.is_ap = is_ap
        self.bss = bss
        self.mld: mlo.MldConfig | None = None
        self.queue: mlo.SharedQueue | None = None
        self.flows: list[FlowRuntime] = []
        self.contenders: dict[int, mac.LinkContender] = {}
        self.active_tx: dict[int, "ActiveTx"] = {}
        self.emlsr_blocked_until: SimTime = 0
        self.wake_ev = None
        self.last_sync: SimTime = -1


class ActiveTx:
    __slots__ = ("plan", "device", "link", "receiver", "start", "payload_start",
                 "payload_end", "end", "end_ev", "interferers", "notified",
                 "signal_dbm", "noise_dbm", "preempted", "emlsr_blocked")

    def __init__(self, plan, device, link, receiver, start, payload_start,
                 payload_end, end, signal_dbm, noise_dbm):
        self.plan = plan
        self.device = device
        self.link = link
        self.receiver = receiver
        self.start = start
        self.payload_start = payload_start
        self.payload_end = payload_end
        self.end = end
        self.end_ev = None
        self.interferers: list[ActiveTx] = []
        self.notified: list = []
        self.signal_dbm = signal_dbm
        self.noise_dbm = noise_dbm
        self.preempted = False
        self.emlsr_blocked: list = []

    def spectrum_overlaps(self, other: "ActiveTx") -> bool:
        a, b = self.plan.subchannel, other.plan.subchannel
        return a == b or a == 0 or b == 0


@dataclass
class RunResult:
    seed: int
    horizon_ns: SimTime
    flows: dict[str, stats.DelayAccumulator]
    conservation: dict
    link_util: dict[int, float]
    mcs_counts: dict[str, dict[int, int]]
    ledger: stats.AirtimeLedger
    blocking: dict
    preemption_latencies: list[SimTime]
    events: int
    wall_s: float
    trace_text: str | None = None


class Simulation:
    def __init__(self, cfg: ScenarioConfig, seed: int | None = None, trace=None):
        self.cfg = cfg
        self.seed = cfg.run.seed if seed is None else seed
        self.engine = Engine(self.seed, trace=trace)
        self.horizon = round(cfg.run.duration_s * NS_PER_S)
        self.n_links = cfg.links.count

        mcs_table = cfg.phy.mcs_rows or phy.DEFAULT_MCS_TABLE
        self.phy = phy.PhyConfig(
            freq_ghz=cfg.links.freq_ghz, bandwidth_mhz=cfg.links.bandwidth_mhz,
            data_subcarriers=cfg.phy.data_subcarriers,
            symbol_ns=us_to_ns(cfg.phy.symbol_us), preamble_ns=us_to_ns(cfg.phy.preamble_us),
            noise_figure_db=cfg.phy.noise_figure_db, tx_power_dbm=cfg.phy.tx_power_dbm,
            per_target=cfg.phy.per, mcs_table=tuple(mcs_table))
        self.mac = mac.MacConfig(
            slot_ns=us_to_ns(cfg.mac.slot_us), sifs_ns=us_to_ns(cfg.mac.sifs_us),
            difs_ns=us_to_ns(cfg.mac.difs_us), cw_min=cfg.mac.cw_min, cw_max=cfg.mac.cw_max,
            retry_limit=cfg.mac.retry_limit, blockack_ns=us_to_ns(cfg.mac.blockack_us),
            txop_limit_ns=us_to_ns(cfg.mac.txop_limit_us), max_ampdu=cfg.mac.max_ampdu,
            buffer_packets=cfg.mac.buffer_packets, preemption=cfg.mac.preemption)
        self.streams = cfg.phy.streams
        self.noise_dbm = phy.noise_floor_dbm(cfg.links.bandwidth_mhz, cfg.phy.noise_figure_db)

        self._build_devices()
        self._build_coordination()
        self._build_domain()
        self._build_flows()
        self._build_rtwt()

        self.mcs_counts: dict[str, dict[int, int]] = {d: {} for d in self.aps}
        self.ledger = stats.AirtimeLedger(self.n_links)
        self.preemption_latencies: list[SimTime] = []
        self._pl_cache: dict[tuple[str, str], float] = {}
        self._sel_cache: dict[tuple[str, str], float] = {}

        self.engine.schedule(0, "init", "sim", self._ev_init)

    # ------------------------------------------------------------------ build

    def _build_devices(self):
        self.devices: dict[str, Device] = {}
        self.aps: list[str] = []
        mlo_modes = {m.id: m for m in self.cfg.mlo}
        all_links = tuple(range(self.n_links))
        for a in self.cfg.aps:
            dev = Device(a.id, a.pos, a.antennas, True, a.id)
            m = mlo_modes.get(a.id)
            mode = m.mode if m else mlo.MloMode.EMLMR_STR
            delay = us_to_ns(m.switch_delay_us) if m else 0
            dev.mld = mlo.MldConfig(mode, all_links, radios=a.antennas, switch_delay_ns=delay)
            dev.queue = mlo.SharedQueue(self.mac.buffer_packets)
            self.devices[a.id] = dev
            self.aps.append(a.id)
        for s in self.cfg.stas:
            self.devices[s.id] = Device(s.id, s.pos, s.antennas, False, s.ap)
        self.sta_of_flow: dict[str, str] = {}
        self.flow_bytes: dict[str, int] = {f.id: f.packet_bytes for f in self.cfg.flows}

    def _build_coordination(self):
        c = self.cfg.coordination
        self.scheme = c.scheme
        self.cset = None
        self.ctdma_quotas = None
        self.cofdma = None
        self.sounding_ns = us_to_ns(c.sounding_us)
        if c.scheme is coord.Scheme.NONE:
            return
        budgets = []
        for ap_id in c.members:
            ap = self.devices[ap_id]
            nulls = sum(self.devices[s.id].antennas for s in self.cfg.stas
                        if s.ap in c.members and s.ap != ap_id)
            budgets.append(coord.MemberBudget(ap_id, ap.antennas, self.streams, nulls))
        self.cset = coord.form_set(budgets, c.scheme, c.nulling_db, self.sounding_ns)
        if c.scheme is coord.Scheme.CTDMA:
            self.ctdma_quotas = coord.ctdma_slots(
                self.mac.txop_limit_ns, self.cset.members, self.mac.sifs_ns)
        elif c.scheme is coord.Scheme.COFDMA:
            self.cofdma = coord.cofdma_split(
                self.cfg.links.bandwidth_mhz, self.cset.members, self.phy.data_subcarriers)

    def _build_domain(self):
        base = coord.ContentionDomain()
        ids = list(self.devices)
        for link in range(self.n_links):
            for i, a in enumerate(ids):
                for b in ids[i + 1:]:
                    base.add_edge(link, a, b)
        self.base_domain = base
        if self.cset is not None and self.scheme is coord.Scheme.CBF:
            bss_of = {d.id: d.bss for d in self.devices.values()}
            self.domain = coord.rewrite_contention(base, self.cset, bss_of)
        else:
            self.domain = base

    def _build_flows(self):
        self.flows: dict[str, FlowRuntime] = {}
        for f in self.cfg.flows:
            spec = _flow_spec_ns(f)
            rng = self.engine.rng_stream(f"traffic.{f.id}")
            evented = (spec.model is TrafficModel.POISSON
                       or spec.cls is TrafficClass.TIME_SENSITIVE)
            rt = FlowRuntime(spec, make_source(spec, rng), evented)
            self.flows[f.id] = rt
            self.devices[f.src].flows.append(rt)
            self.sta_of_flow[f.id] = f.dst
        self.flows_to_receiver: dict[tuple[str, str], frozenset] = {}
        for ap_id in self.aps:
            dev = self.devices[ap_id]
            by_dst: dict[str, set] = {}
            for rt in dev.flows:
                by_dst.setdefault(rt.spec.dst, set()).add(rt.spec.id)
            for dst, fset in by_dst.items():
                self.flows_to_receiver[(ap_id, dst)] = frozenset(fset)
        # one contender per (AP, link); rng substream per pair
        for ap_id in self.aps:
            dev = self.devices[ap_id]
            if not dev.flows:
                continue
            for link in range(self.n_links):
                dev.contenders[link] = mac.LinkContender(
                    ap_id, link, self.mac, self.engine,
                    self.engine.rng_stream(f"backoff.{ap_id}.{link}"),
                    has_traffic=(lambda d=dev: len(d.queue) > 0),
                    on_grant=(lambda now, d=dev, l=link: self._on_grant(d, l, now)))
        self.per_rng = {ap_id: self.engine.rng_stream(f"phy.{ap_id}") for ap_id in self.aps}
        self._hearers: dict[tuple[int, str], list] = {}
        for link in range(self.n_links):
            for ap_id in self.aps:
                out = []
                for other_id, other in self.devices.items():
                    if other_id == ap_id or not other.contenders:
                        continue
                    if self.domain.hears(link, ap_id, other_id):
                        out.append(other.contenders[link])
                self._hearers[(link, ap_id)] = out

    def _build_rtwt(self):
        self.rtwt = mac.RtwtCalendar()
        for sp_cfg in self.cfg.mac.sps:
            sp = mac.RtwtSp(sp_cfg.ap, us_to_ns(sp_cfg.start_us), us_to_ns(sp_cfg.duration_us),
                            us_to_ns(sp_cfg.period_us), frozenset(sp_cfg.flows))
            self.rtwt.add(sp, self.horizon)
        self.sp_windows = self.rtwt.windows(self.horizon)
        for s1, e1, _, _ in self.sp_windows:
            for s2, e2, _, _ in self.sp_windows:
                if (s1, e1) < (s2, e2) and s1 < e2 and s2 < e1:
                    raise ValueError("R-TWT service periods of different APs overlap")

    # ------------------------------------------------------------- phy lookup

    def _pl(self, a: Device, b: Device) -> float:
        key = (a.id, b.id)
        got = self._pl_cache.get(key)
        if got is None:
            got = phy.path_loss_db(a.pos, b.pos, self.phy.freq_ghz)
            self._pl_cache[key] = got
        return got

    def _selection_sinr(self, dev: Device, receiver: str) -> float:
        """SINR assumed at MCS selection: isolated for uncoordinated access
        (collisions are punished by re-evaluation), statically suppressed
        member interference under CBF, subchannel noise under C-OFDMA."""
        key = (dev.id, receiver)
        got = self._sel_cache.get(key)
        if got is not None:
            return got
        rx = self.devices[receiver]
        signal = self.phy.tx_power_dbm - self._pl(dev, rx)
        interferers = []
        noise = self.noise_dbm
        if self.cset is not None and dev.id in self.cset.members:
            if self.scheme is coord.Scheme.CBF:
                for other in self.cset.members:
                    if other != dev.id:
                        p = self.phy.tx_power_dbm - self._pl(self.devices[other], rx)
                        interferers.append((p, self.domain.suppression_db(other, receiver)))
            elif self.scheme is coord.Scheme.COFDMA:
                sub_bw, _sc = self.cofdma[dev.id]
                noise = phy.noise_floor_dbm(sub_bw, self.phy.noise_figure_db)
        got = phy.sinr_db(signal, interferers, noise)
        self._sel_cache[key] = got
        return got

    # ----------------------------------------------------------------- events

    def _ev_init(self, ev):
        for ap_id in self.aps:
            dev = self.devices[ap_id]
            for rt in dev.flows:
                if rt.evented:
                    self._schedule_flow_tick(dev, rt)
                elif rt.spec.model is TrafficModel.ONOFF:
                    self.engine.schedule(rt.source.boundary(), "phase", rt.spec.id,
                                         self._ev_phase, payload=(dev, rt))
            self._sync(dev, 0)
            self._notify_traffic(dev, 0)
            self._maybe_wake(dev, 0)
        for start, end, members, ap_id in self.sp_windows:
            self.engine.schedule(start, "sp_start", ap_id, self._ev_sp_start,
                                 payload=(start, end, members, ap_id))
            if end <= self.horizon:
                self.engine.schedule(end, "sp_end", ap_id, self._ev_sp_end,
                                     payload=(start, end, members, ap_id))

    def _ev_phase(self, ev):
        dev, rt = ev.payload
        now = self.engine.now
        self._sync(dev, now, force=True)
        rt.source.on_boundary()
        self._sync(dev, now, force=True)
        nxt = rt.source.boundary()
        if nxt <= self.horizon + rt.spec.spacing_ns:
            self.engine.schedule(nxt, "phase", rt.spec.id, self._ev_phase, payload=(dev, rt))
        self._notify_traffic(dev, now)

    def _schedule_flow_tick(self, dev: Device, rt: FlowRuntime):
        t = min(rt.source.boundary(), rt.source.next_arrival_after(self.engine.now))
        if t <= self.horizon:
            self.engine.schedule(t, "flow_tick", rt.spec.id, self._ev_flow_tick,
                                 payload=(dev, rt))

    def _ev_flow_tick(self, ev):
        dev, rt = ev.payload
        now = self.engine.now
        parts = []
        if isinstance(rt.source, BurstSource) and rt.source.boundary() == now:
            parts.append(rt.source.collect(now))  # tail of the ending phase
            rt.source.on_boundary()
        parts.append(rt.source.collect(now))
        arr = np.concatenate(parts) if len(parts) > 1 else parts[0]
        if arr.size:
            self._push_arrivals(dev, rt, arr)
            if rt.spec.cls is TrafficClass.TIME_SENSITIVE and self.mac.preemption:
                self._try_preempt(dev, now)
            self._notify_traffic(dev, now)
        self._schedule_flow_tick(dev, rt)

    # -------------------------------------------------------------- traffic io

    def _push_arrivals(self, dev: Device, rt: FlowRuntime, arrivals: np.ndarray):
        rt.acc.generated += int(arrivals.size)
        dropped = dev.queue.push_arrivals(rt.spec.id, rt.spec.cls, arrivals)
        rt.acc.dropped_buffer += dropped

    def _sync(self, dev: Device, now: SimTime, force: bool = False):
        if dev.last_sync == now and not force:
            return
        dev.last_sync = now
        for rt in dev.flows:
            if rt.evented:
                continue
            arr = rt.source.collect(now)
            if arr.size:
                self._push_arrivals(dev, rt, arr)

    def _notify_traffic(self, dev: Device, now: SimTime):
        if not dev.contenders or not len(dev.queue):
            return
        eligible = mlo.eligible_links(dev.mld, set(dev.active_tx), now,
                                      dev.emlsr_blocked_until)
        for link in sorted(eligible):
            dev.contenders[link].traffic_available(now)

    def _maybe_wake(self, dev: Device, now: SimTime):
        if not dev.flows or len(dev.queue) or dev.wake_ev is not None:
            return
        nxt = min((rt.source.next_arrival_after(now) for rt in dev.flows
                   if not rt.evented), default=FAR_FUTURE)
        if nxt <= self.horizon:
            dev.wake_ev = self.engine.schedule(nxt, "wake", dev.id, self._ev_wake,
                                               payload=dev)

    def _ev_wake(self, ev):
        dev = ev.payload
        dev.wake_ev = None
        now = self.engine.now
        self._sync(dev, now)
        if len(dev.queue):
            self._notify_traffic(dev, now)
        else:
            self._maybe_wake(dev, now)

    # ------------------------------------------------------------------ grants

    def _on_grant(self, dev: Device, link: int, now: SimTime):
        contender = dev.contenders[link]
        self._sync(dev, now)
        eligible = mlo.eligible_links(dev.mld, set(dev.active_tx), now,
                                      dev.emlsr_blocked_until)
        if link not in eligible or not len(dev.queue):
            contender.txop_done(now, "release")
            self._maybe_wake(dev, now)
            return
        if dev.mld.mode is mlo.MloMode.EMLMR_NSTR:
            paired = [tx for l, tx in sorted(dev.active_tx.items()) if l != link]
            if paired and not mlo.nstr_start_allowed(now, paired[0].start, self.mac.slot_ns):
                contender.txop_started()
                self.engine.schedule(paired[0].end, "nstr_defer", dev.id,
                                     self._ev_nstr_deferred, payload=(dev, link))
                return
        if self.cset is not None and dev.id in self.cset.members:
            if self.scheme is coord.Scheme.CTDMA:
                self._start_ctdma(dev, link, now)
                return
            if self.scheme is coord.Scheme.COFDMA:
                self._start_cofdma(dev, link, now)
                return
        contender.txop_started()
        started = self._start_normal(dev, link, now)
        if started is None:
            contender.txop_done(now, "release")
            self._maybe_wake(dev, now)

    def _ev_nstr_deferred(self, ev):
        dev, link = ev.payload
        now = self.engine.now
        contender = dev.contenders[link]
        self._sync(dev, now)
        if contender.busy_refs > 0 or not len(dev.queue):
            contender.txop_done(now, "release")
            self._maybe_wake(dev, now)
            return
        started = self._start_normal(dev, link, now)
        if started is None:
            contender.txop_done(now, "release")

    def _plan_budget(self, now: SimTime) -> tuple[SimTime, bool]:
        """(budget_ns, sp_capped): non-member airtime may never cross an SP start."""
        cap = self.rtwt.cap_before_next_sp(now) if self.rtwt.sps else FAR_FUTURE
        budget = min(self.mac.txop_limit_ns, cap - now)
        return budget, budget < self.mac.txop_limit_ns

    def _start_normal(self, dev: Device, link: int, now: SimTime,
                      member_window: tuple | None = None) -> ActiveTx | None:
        if member_window is None:
            budget, sp_capped = self._plan_budget(now)
            flow_filter = None
        else:
            start, end, members, _ap = member_window
            budget = min(self.mac.txop_limit_ns, end - now)
            sp_capped = True
            flow_filter = members
        head = dev.queue.peek(flow_filter)
        if head is None or budget <= 0:
            return None
        receiver = self.sta_of_flow[head.flow_id]
        filt = self.flows_to_receiver[(dev.id, receiver)]
        if flow_filter is not None:
            filt = filt & flow_filter
        sel = self._selection_sinr(dev, receiver)
        mcs_sel = phy.select_mcs(sel, self.phy.mcs_table)
        if mcs_sel is None:
            return None
        sounding = self.sounding_ns if (
            self.scheme is coord.Scheme.CBF and self.cset
            and dev.id in self.cset.members) else 0
        plan = mac.build_txop(dev.queue, mcs_sel, self.mac, self.phy, self.streams,
                              budget, self.flow_bytes, flow_filter=filt,
                              allow_min_one=not sp_capped, sounding_ns=sounding)
        if plan is None:
            return None
        plan.device = dev.id
        plan.link = link
        plan.receiver = receiver
        tag = "data" if member_window is None else "rtwt"
        return self._start_tx(dev, link, plan, now, sounding, tag=tag)

    def _start_tx(self, dev: Device, link: int, plan: mac.TxopPlan, now: SimTime,
                  sounding: SimTime = 0, tag: str = "data") -> ActiveTx:
        plan.tag = tag
        rx_dev = self.devices[plan.receiver]
        signal = self.phy.tx_power_dbm - self._pl(dev, rx_dev)
        noise = self.noise_dbm
        if plan.subchannel and self.cofdma is not None:
            noise = phy.noise_floor_dbm(self.cofdma[dev.id][0], self.phy.noise_figure_db)
        payload_start = now + sounding + self.phy.preamble_ns
        payload_end = now + sounding + plan.data_ns
        tx = ActiveTx(plan, dev, link, plan.receiver, now, payload_start,
                      payload_end, now + plan.airtime_ns, signal, noise)
        for other_dev in self.devices.values():
            other_tx = other_dev.active_tx.get(link)
            if other_tx is not None and other_tx.spectrum_overlaps(tx):
                tx.interferers.append(other_tx)
                other_tx.interferers.append(tx)
        dev.active_tx[link] = tx
        for c in self._hearers[(link, dev.id)]:
            c.busy(now)
            tx.notified.append(c)
        if dev.mld.mode is mlo.MloMode.EMLSR:
            for l, c in sorted(dev.contenders.items()):
                if l != link:
                    c.busy(now, hard=True)
                    tx.emlsr_blocked.append(c)
        counts = self.mcs_counts[dev.id]
        counts[plan.mcs.index] = counts.get(plan.mcs.index, 0) + 1
        tx.end_ev = self.engine.schedule(tx.end, "txop_end", dev.id,
                                         self._ev_txop_end, payload=tx)
        return tx

    def _actual_sinr(self, tx: ActiveTx) -> float | None:
        """Worst instantaneous SINR over the data portion, from the interferers
        that actually overlapped it (suppressed by any registered nulls)."""
        changes: list[tuple[SimTime, float]] = []
        rx = self.devices[tx.receiver]
        for itx in tx.interferers:
            s = max(tx.start, itx.start)
            e = min(tx.payload_end, itx.payload_end)
            if e <= s:
                continue
            p_dbm = (self.phy.tx_power_dbm - self._pl(itx.device, rx)
                     - self.domain.suppression_db(itx.device.id, tx.receiver))
            p_mw = 10.0 ** (p_dbm / 10.0)
            changes.append((s, p_mw))
            changes.append((e, -p_mw))
        if not changes:
            return None
        changes.sort()
        peak = level = 0.0
        for _t, delta in changes:
            level += delta
            peak = max(peak, level)
        noise_mw = 10.0 ** (tx.noise_dbm / 10.0)
        return tx.signal_dbm - 10.0 * math.log10(peak + noise_mw)

    def _ev_txop_end(self, ev):
        tx: ActiveTx = ev.payload
        dev = tx.device
        now = self.engine.now
        plan = tx.plan
        sinr = self._actual_sinr(tx) if tx.interferers else None
        collision = sinr is not None and sinr < plan.mcs.min_sinr_db
        rng = self.per_rng[dev.id]
        outcome = mac.resolve_mpdus(plan.chunks, collision, self.phy.per_target,
                                    rng, self.mac.retry_limit)
        urgent_outcome = None
        if plan.urgent_chunks:
            urgent_outcome = mac.resolve_mpdus(plan.urgent_chunks, collision,
                                               self.phy.per_target, rng,
                                               self.mac.retry_limit)
        for out in (outcome, urgent_outcome):
            if out is None:
                continue
            for flow_id, arrivals in out.delivered:
                self.flows[flow_id].acc.record_many(now - arrivals)
            for flow_id, n in out.dropped_retry.items():
                self.flows[flow_id].acc.dropped_retry += n
            dev.queue.push_front(out.requeue)
        flows = plan.flows + tuple(c.flow_id for c in plan.urgent_chunks
                                   if c.flow_id not in plan.flows)
        self.ledger.add(stats.TxInterval(tx.link, dev.id, tx.start, tx.end,
                                         plan.tag, plan.subchannel, flows))
        del dev.active_tx[tx.link]
        for c in tx.notified:
            c.idle(now)
        if tx.emlsr_blocked:
            delay = dev.mld.switch_delay_ns
            dev.emlsr_blocked_until = now + delay
            if delay == 0:
                for c in tx.emlsr_blocked:
                    c.idle(now)
            else:
                self.engine.schedule(now + delay, "emlsr_resume", dev.id,
                                     self._ev_emlsr_resume, payload=(dev, tx.emlsr_blocked))
        if plan.tag == "data":
            contender = dev.contenders.get(tx.link)
            if contender is not None:
                self._sync(dev, now)
                contender.txop_done(now, "collision" if collision else "success")
        self._maybe_wake(dev, now)
        if self.sp_windows:
            window = self._member_window(dev, now)
            if window is not None:
                self.engine.schedule(now + self.mac.sifs_ns, "sp_member", dev.id,
                                     self._ev_sp_member, payload=(dev, window))

    def _ev_emlsr_resume(self, ev):
        dev, blocked = ev.payload
        for c in blocked:
            c.idle(self.engine.now)

    # ------------------------------------------------------------------- R-TWT

    def _all_contenders(self):
        for ap_id in self.aps:
            for _link, c in sorted(self.devices[ap_id].contenders.items()):
                yield c

    def _ev_sp_start(self, ev):
        start, end, members, ap_id = ev.payload
        now = self.engine.now
        for c in self._all_contenders():
            c.busy(now, hard=True)
        self._sp_member_service(self.devices[ap_id], (start, end, members, ap_id))

    def _ev_sp_end(self, ev):
        now = self.engine.now
        for c in self._all_contenders():
            c.idle(now)

    def _member_window(self, dev: Device, now: SimTime):
        for start, end, members, ap_id in self.sp_windows:
            if ap_id == dev.id and start <= now < end:
                return (start, end, members, ap_id)
        return None

    def _ev_sp_member(self, ev):
        self._sp_member_service(*ev.payload)

    def _sp_member_service(self, dev: Device, window):
        """Protected access inside a service period: immediate grants without
        backoff, member flows only, one TXOP per free link at a time."""
        start, end, members, _ap = window
        now = self.engine.now
        if not (start <= now < end):
            return
        self._sync(dev, now)
        if not dev.queue.has_flows(members):
            return
        eligible = mlo.eligible_links(dev.mld, set(dev.active_tx), now,
                                      dev.emlsr_blocked_until)
        for link in sorted(eligible):
            if not dev.queue.has_flows(members):
                break
            self._start_normal(dev, link, now, member_window=window)

    # -------------------------------------------------------------- preemption

    def _try_preempt(self, dev: Device, now: SimTime):
        for link in sorted(dev.active_tx):
            tx = dev.active_tx[link]
            plan = tx.plan
            if (tx.preempted or plan.tag != "data"
                    or any(c.cls is TrafficClass.TIME_SENSITIVE for c in plan.chunks)):
                continue
            ts_flows = frozenset(rt.spec.id for rt in dev.flows
                                 if rt.spec.cls is TrafficClass.TIME_SENSITIVE)
            if dev.queue.peek(ts_flows) is None:
                return
            if now < tx.payload_end:
                trunc = (now if now < tx.payload_start else
                         mac.next_symbol_boundary(tx.payload_start, now, self.phy.symbol_ns))
                sent = mac.packet_bits_sent(plan.chunks, self.flow_bytes,
                                            trunc - tx.payload_start, plan.mcs,
                                            self.phy, self.streams)
                urgent_start = trunc
            elif now < tx.end:
                trunc = None
                sent = plan.n_mpdus
                urgent_start = tx.end + self.mac.sifs_ns
            else:
                continue
            urgent = dev.queue.pop(self.mac.max_ampdu, ts_flows)
            bits = sum(len(c) * self.flow_bytes[c.flow_id] * 8 for c in urgent)
            air = mac.airtime_for_bits(bits, plan.mcs, self.phy, self.streams)
            new_end = urgent_start + air + self.mac.sifs_ns + self.mac.blockack_ns
            if new_end - tx.start > self.mac.txop_limit_ns:
                dev.queue.push_front(urgent)
                return
            if trunc is not None:
                kept, tail = mac.split_sent(plan.chunks, sent)
                plan.chunks = kept
                plan.trunc_sent = sent
                plan.n_mpdus = sent
                dev.queue.push_front(tail)  # interruption is not a failure
                tx.payload_end = trunc
            plan.urgent_chunks = urgent
            plan.urgent_bits = bits
            tx.preempted = True
            tx.end_ev.cancel()
            tx.end = new_end
            tx.end_ev = self.engine.schedule(new_end, "txop_end", dev.id,
                                             self._ev_txop_end, payload=tx)
            latency = (urgent_start - now) + self.phy.preamble_ns if trunc is not None \
                else self.phy.preamble_ns
            self.preemption_latencies.append(latency)
            return

    # ------------------------------------------------------------ coordination

    def _start_ctdma(self, winner: Device, link: int, now: SimTime):
        contender = winner.contenders[link]
        contender.txop_started()
        chain = {"members": list(self.ctdma_quotas), "carry": 0,
                 "coord_start": now, "winner": winner, "link": link, "collision": False}
        self._ctdma_step(chain)

    def _ctdma_step(self, chain):
        now = self.engine.now
        link = chain["link"]
        coord_end = chain["coord_start"] + self.mac.txop_limit_ns
        while chain["members"]:
            ap_id, _offset, quota = chain["members"].pop(0)
            dev = self.devices[ap_id]
            self._sync(dev, now)
            budget = min(quota + chain["carry"], coord_end - now)
            head = dev.queue.peek()
            if head is None or budget <= 0:
                chain["carry"] += quota
                continue
            receiver = self.sta_of_flow[head.flow_id]
            mcs_sel = phy.select_mcs(self._selection_sinr(dev, receiver), self.phy.mcs_table)
            plan = mac.build_txop(dev.queue, mcs_sel, self.mac, self.phy, self.streams,
                                  budget, self.flow_bytes,
                                  flow_filter=self.flows_to_receiver[(dev.id, receiver)],
                                  allow_min_one=False) if mcs_sel else None
            if plan is None:
                chain["carry"] += quota
                continue
            plan.device = dev.id
            plan.link = link
            plan.receiver = receiver
            tag = "ctdma" if dev is chain["winner"] else "ctdma_member"
            tx = self._start_tx(dev, link, plan, now, tag=tag)
            chain["carry"] = max(0, budget - plan.airtime_ns)
            self.engine.schedule(tx.end + self.mac.sifs_ns, "ctdma_next", ap_id,
                                 lambda ev, ch=chain: self._ctdma_step(ch))
            return
        # chain exhausted: the winner's TXOP is over
        winner = chain["winner"]
        self.engine.schedule(now, "ctdma_done", winner.id,
                             lambda ev, ch=chain: self._ctdma_done(ch))

    def _ctdma_done(self, chain):
        winner = chain["winner"]
        now = self.engine.now
        contender = winner.contenders[chain["link"]]
        self._sync(winner, now)
        contender.txop_done(now, "success")
        self._maybe_wake(winner, now)

    def _start_cofdma(self, winner: Device, link: int, now: SimTime):
        contender = winner.contenders[link]
        contender.txop_started()
        started = []
        for idx, ap_id in enumerate(sorted(self.cset.members), start=1):
            dev = self.devices[ap_id]
            self._sync(dev, now)
            head = dev.queue.peek()
            if head is None:
                continue
            _bw, sub_sc = self.cofdma[ap_id]
            receiver = self.sta_of_flow[head.flow_id]
            mcs_sel = phy.select_mcs(self._selection_sinr(dev, receiver), self.phy.mcs_table)
            if mcs_sel is None:
                continue
            plan = mac.build_txop(dev.queue, mcs_sel, self.mac, self.phy, self.streams,
                                  self.mac.txop_limit_ns, self.flow_bytes,
                                  flow_filter=self.flows_to_receiver[(dev.id, receiver)],
                                  data_subcarriers=sub_sc)
            if plan is None:
                continue
            plan.device = dev.id
            plan.link = link
            plan.receiver = receiver
            plan.subchannel = idx
            tx = self._start_tx(dev, link, plan, now, tag="cofdma")
            started.append(tx)
        if not started:
            contender.txop_done(now, "release")
            self._maybe_wake(winner, now)
            return
        last_end = max(tx.end for tx in started)
        self.engine.schedule(last_end, "cofdma_done", winner.id,
                             lambda ev, w=winner, l=link: self._cofdma_done(w, l))

    def _cofdma_done(self, winner: Device, link: int):
        now = self.engine.now
        self._sync(winner, now)
        winner.contenders[link].txop_done(now, "success")
        self._maybe_wake(winner, now)

    # --------------------------------------------------------------- run & end

    def run(self) -> RunResult:
        summary = self.engine.run_until(self.horizon)
        return self._finalize(summary)

    def _finalize(self, summary) -> RunResult:
        horizon = self.horizon
        queued: dict[str, int] = {}
        inflight: dict[str, int] = {}
        for ap_id in self.aps:
            dev = self.devices[ap_id]
            dev.last_sync = -1
            self._sync(dev, horizon)
            for fid, n in dev.queue.queued_by_flow().items():
                queued[fid] = queued.get(fid, 0) + n
            for link, tx in sorted(dev.active_tx.items()):
                for c in tx.plan.chunks + tx.plan.urgent_chunks:
                    inflight[c.flow_id] = inflight.get(c.flow_id, 0) + len(c)
                self.ledger.add(stats.TxInterval(
                    link, ap_id, tx.start, min(tx.end, horizon),
                    tx.plan.tag, tx.plan.subchannel, tx.plan.flows))
        self.ledger.clip(horizon)
        flows = {fid: rt.acc for fid, rt in self.flows.items()}
        conservation = stats.conservation_report(flows, queued, inflight)
        self.ledger.audit_bounds(horizon)
        self.ledger.audit_exclusion(self.domain.hears)
        self.ledger.audit_rtwt([(s, e, m) for s, e, m, _ in self.sp_windows])
        self._audit_emlsr()
        link_util = {link: self.ledger.utilization(link, horizon)
                     for link in range(self.n_links)}
        blocking = mlo.blocking_report(self.ledger, self.domain, self.devices, horizon)
        return RunResult(
            seed=self.seed, horizon_ns=horizon, flows=flows,
            conservation=conservation, link_util=link_util,
            mcs_counts=self.mcs_counts, ledger=self.ledger, blocking=blocking,
            preemption_latencies=self.preemption_latencies,
            events=summary.events, wall_s=summary.wall_s)

    def _audit_emlsr(self):
        for ap_id in self.aps:
            dev = self.devices[ap_id]
            if dev.mld is None or dev.mld.mode is not mlo.MloMode.EMLSR:
                continue
            ivs = sorted((iv.start, iv.end) for per_link in self.ledger.intervals
                         for iv in per_link if iv.device == ap_id)
            for (s1, e1), (s2, e2) in zip(ivs, ivs[1:]):
                if s2 < e1:
                    raise stats.AuditError(
                        f"EMLSR device {ap_id} transmitted concurrently on two links")


def run_scenario(cfg: ScenarioConfig, seed: int | None = None,
                 trace: bool = False) -> RunResult:
    trace_buf = None
    if trace:
        import io
        trace_buf = io.StringIO()
    sim = Simulation(cfg, seed=seed, trace=trace_buf)
    result = sim.run()
    if trace_buf is not None:
        result.trace_text = trace_buf.getvalue()
    return result
