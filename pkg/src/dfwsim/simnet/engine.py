"""Deterministic discrete-event execution of a scenario.

Time is integer nanoseconds on a single heap ordered by (time, insertion
seq), so equal-time events replay in scheduling order and a run is a pure
function of the scenario.  Switches are single-server FIFO queues with a
fixed per-packet service time plus a surcharge for packets that traverse
connection tracking; links serialize per direction and add propagation
delay.  Hosts are tiny reflex machines: receivers answer SYNs, benign
senders complete the handshake and stream their payload, flood sources
follow their script and answer nothing.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, replace
from itertools import count
from typing import Optional

from ..conntrack import CtTable
from ..control_plane import Controller, Nib, aggregate_stats
from ..core_model import Packet, PacketHeader, Protocol, TcpFlag, frame_bytes, ip_str
from ..dfw_agent import DfwAgent
from ..flow_table import FlowMod, FlowTable, MissPolicy
from ..topology import Host, Link, Topology
from .metrics import MetricsReport, PairStats
from .pipeline import PipelineVerdict, execute_pipeline
from .scenario import Scenario
from .traffic import BenignTcp, SynFlood, TableMissFlood, gen_syn_flood, gen_table_miss_flood

__all__ = ["Simulation", "run_scenario", "MSS", "PACKET_EVENT_KINDS"]

NS_PER_S = 1_000_000_000
MSS = 1460
SERVER_ISN = 200
EPHEMERAL_BASE = 49152
BROADCAST_MAC = 0xFFFFFFFFFFFF

# heap event kinds whose payload starts with (pid, ...): used for the
# end-of-run in-flight census
PACKET_EVENT_KINDS = frozenset({"arrive_switch", "switch_emit", "arrive_host"})


@dataclass
class _SwitchSim:
    """Data-plane state for one switch."""

    switch_id: str
    table: FlowTable
    ct: Optional[CtTable]
    agent: Optional[DfwAgent]
    service_ns: int
    ct_cost_ns: int
    queue_capacity: int
    busy_until: int = 0
    backlog: int = 0


class _FlowSend:
    """Sender side of one benign flow."""

    __slots__ = ("dst_ip", "dst_port", "sport", "payload_bytes", "done")

    def __init__(self, dst_ip: int, dst_port: int, sport: int, payload_bytes: int) -> None:
        self.dst_ip = dst_ip
        self.dst_port = dst_port
        self.sport = sport
        self.payload_bytes = payload_bytes
        self.done = False


class _HostSim:
    """Reflex logic for one host; all sends go back through the simulation."""

    def __init__(self, sim: "Simulation", host: Host) -> None:
        self.sim = sim
        self.host = host
        self.flows: dict[tuple[int, int], _FlowSend] = {}  # (peer ip, our sport)

    def start_flow(self, t: int, flow: _FlowSend) -> None:
        self.flows[(flow.dst_ip, flow.sport)] = flow
        self.send(
            t,
            dst_ip=flow.dst_ip,
            sport=flow.sport,
            dport=flow.dst_port,
            flags=frozenset({TcpFlag.SYN}),
            seq=0,
        )

    def on_packet(self, pkt: Packet, t: int) -> None:
        if pkt.protocol is not Protocol.TCP:
            return
        flags = pkt.tcp_flags
        if TcpFlag.SYN in flags and TcpFlag.ACK not in flags:
            # every host answers like a listening service
            self.send(
                t,
                dst_ip=pkt.header.ip_src,
                sport=pkt.header.tp_dst,
                dport=pkt.header.tp_src,
                flags=frozenset({TcpFlag.SYN, TcpFlag.ACK}),
                seq=SERVER_ISN,
                ack=pkt.seq + 1,
            )
            return
        if TcpFlag.SYN in flags and TcpFlag.ACK in flags:
            flow = self.flows.get((pkt.header.ip_src, pkt.header.tp_dst))
            if flow is None or flow.done:
                return  # unsolicited or stale: flood sources simply ignore it
            flow.done = True
            self._stream(t, flow, server_seq=pkt.seq)
        # plain data / FIN / RST arrive silently

    def _stream(self, t: int, flow: _FlowSend, server_seq: int) -> None:
        """Complete the handshake, then emit the payload and a FIN at once.

        The access link serializes the burst, so pacing is the link's job.
        """
        ack = server_seq + 1
        self.send(t, flow.dst_ip, flow.sport, flow.dst_port, frozenset({TcpFlag.ACK}), seq=1, ack=ack)
        seq = 1
        remaining = flow.payload_bytes
        while remaining > 0:
            chunk = min(MSS, remaining)
            self.send(
                t,
                flow.dst_ip,
                flow.sport,
                flow.dst_port,
                frozenset({TcpFlag.ACK}),
                seq=seq,
                ack=ack,
                payload_len=chunk,
            )
            seq += chunk
            remaining -= chunk
        self.send(t, flow.dst_ip, flow.sport, flow.dst_port, frozenset({TcpFlag.FIN}), seq=seq, ack=ack)

    def send(
        self,
        t: int,
        dst_ip: int,
        sport: int,
        dport: int,
        flags: frozenset,
        seq: int = 0,
        ack: int = 0,
        payload_len: int = 0,
    ) -> None:
        peer = self.sim.topology.host_by_ip(dst_ip)
        header = PacketHeader(
            in_port=0,
            eth_src=self.host.mac,
            eth_dst=peer.mac if peer else BROADCAST_MAC,
            ip_src=self.host.ip,
            ip_dst=dst_ip,
            tp_src=sport,
            tp_dst=dport,
        )
        pkt = Packet(header, Protocol.TCP, flags, seq=seq, ack=ack, payload_len=payload_len, ts=t)
        self.sim.inject(self.host.name, pkt, t)


class Simulation:
    """One scenario run. Build, call run(), read the report."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.topology: Topology = scenario.build_topology()
        fabric = scenario.fabric
        for link in self.topology.links:
            link.bandwidth_bps = int(fabric.bandwidth_bps)
            link.latency_s = fabric.latency_s

        self.now = 0
        self.end_ns = int(scenario.duration_s * NS_PER_S)
        self._heap: list = []
        self._seq = count()
        self._pid = count(1)
        self._live: set[int] = set()
        self.injected = 0
        self.dispositions: dict[str, int] = {}
        self.pair_stats: dict[tuple[int, int], PairStats] = {}
        self.packet_in_total = 0
        self.packet_in_by_source: dict[int, int] = {}
        # per-link per-direction serialization: (link id, from node) -> free time
        self._link_free: dict[tuple[int, str], int] = {}

        self.nib = Nib()
        self.controller = Controller(self.topology, self.nib)
        policies = scenario.policies
        if not scenario.sdfw_enabled:
            policies = [replace(p, stateful=False) for p in policies]
        self.conflicts = self.controller.load_policies(policies)

        self.switches: dict[str, _SwitchSim] = {}
        self._nib_decisions: dict[str, list] = {}
        for sw in self.topology.switches:
            table = FlowTable(miss_policy=MissPolicy.PACKET_IN)
            ct = CtTable(scenario.ct) if scenario.sdfw_enabled else None
            agent = None
            if scenario.sdfw_enabled:
                agent = DfwAgent(sw, table, ct, scenario.detection, publisher=self._publisher(sw))
            self.switches[sw] = _SwitchSim(
                sw,
                table,
                ct,
                agent,
                service_ns=fabric.service_ns,
                ct_cost_ns=fabric.ct_cost_ns,
                queue_capacity=fabric.queue_capacity,
            )
            self.nib.watch(f"/rules/{sw}", self._rule_applier(sw))
        self.controller.publish()

        self.hosts: dict[str, _HostSim] = {
            name: _HostSim(self, host) for name, host in self.topology.hosts.items()
        }
        self._schedule_traffic()
        self._schedule_ticks()

    # -- wiring ----------------------------------------------------------

    def _publisher(self, switch_id: str):
        def publish(kind: str, payload: dict) -> None:
            entries = self._nib_decisions.setdefault(switch_id, [])
            entries.append({"kind": kind, **payload})
            self.nib.put_json(f"/decisions/{switch_id}", entries)

        return publish

    def _rule_applier(self, switch_id: str):
        def apply(record) -> None:
            sws = self.switches[switch_id]
            for data in json.loads(record.value.decode("utf-8")):
                sws.table.apply_flow_mod(FlowMod.from_dict(data), now=self.now)

        return apply

    # -- scheduling --------------------------------------------------------

    def schedule(self, t: int, kind: str, payload: tuple) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), kind, payload))

    def _schedule_traffic(self) -> None:
        for spec in self.scenario.traffic:
            if isinstance(spec, BenignTcp):
                host = self.topology.host_by_ip(spec.src_ip)
                if host is None:
                    raise ValueError(f"benign_tcp src {ip_str(spec.src_ip)} is not a host")
                if self.topology.host_by_ip(spec.dst_ip) is None:
                    raise ValueError(f"benign_tcp dst {ip_str(spec.dst_ip)} is not a host")
                start = int(spec.start_s * NS_PER_S)
                for i in range(spec.flows):
                    flow = _FlowSend(spec.dst_ip, spec.dst_port, EPHEMERAL_BASE + i, spec.bytes_per_flow)
                    self.schedule(start, "flow_start", (host.name, flow))
            elif isinstance(spec, SynFlood):
                src = self.topology.host_by_ip(spec.src_ip)
                if src is None:
                    raise ValueError(f"syn_flood src {ip_str(spec.src_ip)} is not a host")
                dst = self.topology.host_by_ip(spec.dst_ip)
                eth_dst = dst.mac if dst else BROADCAST_MAC
                for ts, pkt in gen_syn_flood(spec, eth_src=src.mac, eth_dst=eth_dst):
                    if ts <= self.end_ns:
                        self.schedule(ts, "host_send", (src.name, pkt))
            elif isinstance(spec, TableMissFlood):
                src = self.topology.host_by_ip(spec.src_ip)
                if src is None:
                    raise ValueError(f"table_miss_flood src {ip_str(spec.src_ip)} is not a host")
                for ts, pkt in gen_table_miss_flood(spec, seed=self.scenario.seed, eth_src=src.mac):
                    if ts <= self.end_ns:
                        self.schedule(ts, "host_send", (src.name, pkt))

    def _schedule_ticks(self) -> None:
        if not self.scenario.sdfw_enabled:
            return
        interval = int(self.scenario.detection.eval_interval_s * NS_PER_S)
        t = interval
        while t <= self.end_ns:
            self.schedule(t, "tick", ())
            t += interval

    # -- packet bookkeeping -------------------------------------------------

    def _pair(self, src: int, dst: int) -> PairStats:
        stats = self.pair_stats.get((src, dst))
        if stats is None:
            stats = self.pair_stats[(src, dst)] = PairStats(src, dst)
        return stats

    def inject(self, host_name: str, pkt: Packet, t: int) -> int:
        """A host hands a fresh packet to its access link."""
        pid = next(self._pid)
        self._live.add(pid)
        self.injected += 1
        self._pair(pkt.header.ip_src, pkt.header.ip_dst).record_send(t)
        host = self.topology.hosts[host_name]
        link = self.topology.link_between(host_name, host.switch)
        self._transmit(link, host_name, pid, pkt, t)
        return pid

    def dispose(self, pid: int, category: str) -> None:
        self._live.discard(pid)
        self.dispositions[category] = self.dispositions.get(category, 0) + 1

    def _transmit(self, link: Link, from_node: str, pid: int, pkt: Packet, t: int) -> None:
        if not link.up:
            self.dispose(pid, "link_down")
            return
        key = (id(link), from_node)
        start = max(t, self._link_free.get(key, 0))
        tx_ns = frame_bytes(pkt) * 8 * NS_PER_S // int(link.bandwidth_bps)
        self._link_free[key] = start + tx_ns
        arrive = start + tx_ns + int(link.latency_s * NS_PER_S)
        peer = link.other(from_node)
        if self.topology.is_switch(peer):
            port = self.topology.port_to(peer, from_node)
            self.schedule(arrive, "arrive_switch", (pid, peer, pkt, port))
        else:
            self.schedule(arrive, "arrive_host", (pid, peer, pkt))

    # -- event handlers ------------------------------------------------------

    def _ev_flow_start(self, t: int, host_name: str, flow: _FlowSend) -> None:
        self.hosts[host_name].start_flow(t, flow)

    def _ev_host_send(self, t: int, host_name: str, pkt: Packet) -> None:
        self.inject(host_name, replace(pkt, ts=t), t)

    def _ev_arrive_switch(self, t: int, pid: int, switch_id: str, pkt: Packet, port: int) -> None:
        sws = self.switches[switch_id]
        if sws.backlog >= sws.queue_capacity:
            self.dispose(pid, "queue_overflow")
            return
        sws.backlog += 1
        pkt = replace(pkt, header=pkt.header.with_in_port(port))
        start = max(t, sws.busy_until)
        outcome = execute_pipeline(sws.table, sws.ct, pkt, now=start)
        busy = sws.service_ns + (sws.ct_cost_ns if outcome.ct_used else 0)
        sws.busy_until = start + busy
        self.schedule(start + busy, "switch_emit", (pid, switch_id, pkt, outcome))

    def _ev_switch_emit(self, t: int, pid: int, switch_id: str, pkt: Packet, outcome) -> None:
        sws = self.switches[switch_id]
        sws.backlog -= 1
        verdict = outcome.verdict
        if verdict is PipelineVerdict.FORWARD:
            peer = self.topology.ports(switch_id).get(outcome.out_port)
            if peer is None:
                self.dispose(pid, "forward_error")
                return
            link = self.topology.link_between(switch_id, peer)
            self._transmit(link, switch_id, pid, pkt, t)
            return
        if verdict is PipelineVerdict.DROP:
            rule_id = outcome.rule_id or ""
            if rule_id.startswith("mit/"):
                self.dispose(pid, "dropped_by_mitigation")
            else:
                self.dispose(pid, "dropped_by_rule")
            return
        # table miss, or an explicit punt rule: packet leaves the data plane
        src = pkt.header.ip_src
        if sws.agent is not None:
            if sws.agent.packet_in_guard(src, t):
                self._count_packet_in(src)
                self.dispose(pid, "packet_in")
            else:
                self.dispose(pid, "throttled_miss")
            return
        if sws.table.miss_policy is MissPolicy.PACKET_IN:
            self._count_packet_in(src)
            self.dispose(pid, "packet_in")
        else:
            self.dispose(pid, "dropped_by_rule")

    def _count_packet_in(self, src: int) -> None:
        self.packet_in_total += 1
        self.packet_in_by_source[src] = self.packet_in_by_source.get(src, 0) + 1

    def _ev_arrive_host(self, t: int, pid: int, host_name: str, pkt: Packet) -> None:
        host = self.topology.hosts[host_name]
        if pkt.header.ip_dst != host.ip:
            self.dispose(pid, "forward_error")
            return
        self._pair(pkt.header.ip_src, pkt.header.ip_dst).record_delivery(pkt.ts, t, pkt.payload_len)
        self.dispose(pid, "delivered")
        self.hosts[host_name].on_packet(pkt, t)

    def _ev_tick(self, t: int) -> None:
        for sw in sorted(self.switches):
            sws = self.switches[sw]
            if sws.ct is not None:
                sws.ct.expire(t)
            if sws.agent is not None:
                sws.agent.on_tick(t)

    # -- run -------------------------------------------------------------

    def run(self) -> MetricsReport:
        handlers = {
            "flow_start": self._ev_flow_start,
            "host_send": self._ev_host_send,
            "arrive_switch": self._ev_arrive_switch,
            "switch_emit": self._ev_switch_emit,
            "arrive_host": self._ev_arrive_host,
            "tick": self._ev_tick,
        }
        while self._heap:
            if self._heap[0][0] > self.end_ns:
                break
            t, _, kind, payload = heapq.heappop(self._heap)
            self.now = t
            handlers[kind](t, *payload)
        return self._report()

    def in_flight_pids(self) -> set[int]:
        """Packets still in the fabric, censused from the remaining events."""
        return {payload[0] for _, _, kind, payload in self._heap if kind in PACKET_EVENT_KINDS}

    def _report(self) -> MetricsReport:
        rep = MetricsReport()
        rep.scenario = self.scenario.describe()

        for key in sorted(self.pair_stats):
            stats = self.pair_stats[key]
            rep.pairs[f"{ip_str(key[0])}->{ip_str(key[1])}"] = stats.to_dict()

        flood_starts = [
            int(s.start_s * NS_PER_S) for s in self.scenario.traffic if isinstance(s, SynFlood)
        ]
        mitigations = []
        decisions = []
        for sw in sorted(self.switches):
            agent = self.switches[sw].agent
            if agent is None:
                continue
            for mit in list(agent.active_mitigations.values()) + agent.withdrawn:
                mitigations.append((mit.installed_at, sw, mit.to_dict()))
            for dec in agent.decisions:
                decisions.append((dec.ts, sw, dec.to_dict()))
        mitigations.sort(key=lambda item: (item[0], item[1]))
        decisions.sort(key=lambda item: (item[0], item[1]))
        detection_time = None
        if flood_starts and mitigations:
            detection_time = (mitigations[0][0] - min(flood_starts)) / NS_PER_S
        rep.flood = {
            "detection_time_s": detection_time,
            "mitigations": [m for _, _, m in mitigations],
            "decisions": [d for _, _, d in decisions],
        }

        rep.controller = {
            "packet_in_total": self.packet_in_total,
            "packet_in_by_source": {
                ip_str(src): n for src, n in sorted(self.packet_in_by_source.items())
            },
        }

        reports = []
        for sw in sorted(self.switches):
            sws = self.switches[sw]
            base = {
                "switch": sw,
                "rules": len(sws.table),
                "lookups": sws.table.lookup_count,
                "misses": sws.table.miss_count,
                "matched_packets": sws.table.total_matched_packets(),
            }
            if sws.agent is not None:
                base.update(sws.agent.report())
            reports.append(base)
        rep.per_switch = aggregate_stats(reports)

        rep.dispositions = {"injected": self.injected}
        for cat in sorted(self.dispositions):
            rep.dispositions[cat] = self.dispositions[cat]
        rep.dispositions["in_flight"] = len(self.in_flight_pids())
        return rep


def run_scenario(scenario: Scenario) -> MetricsReport:
    return Simulation(scenario).run()
