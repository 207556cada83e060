"""Traffic workload descriptions and the generators for the scripted kinds."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Union

from ..core_model import Packet, PacketHeader, Protocol, TcpFlag, parse_ip

__all__ = [
    "BenignTcp",
    "SynFlood",
    "TableMissFlood",
    "TrafficSpec",
    "TrafficError",
    "traffic_from_dict",
    "gen_syn_flood",
    "gen_table_miss_flood",
]

NS_PER_S = 1_000_000_000

# table-miss flood targets are drawn from here: disjoint from fabric hosts,
# so no compiled rule can ever match them
MISS_NET_BASE = parse_ip("172.16.0.1")
MISS_NET_SIZE = 1 << 16

FLOOD_SPORT = 1024
FLOOD_SEQ_BASE = 100


class TrafficError(ValueError):
    """A traffic spec that fails validation."""


@dataclass(frozen=True)
class BenignTcp:
    """Well-behaved flows: handshake, fixed payload, FIN; receiver answers."""

    src_ip: int
    dst_ip: int
    dst_port: int = 5001
    flows: int = 1
    bytes_per_flow: int = 100_000
    start_s: float = 0.0

    def __post_init__(self) -> None:
        if self.flows < 1 or self.bytes_per_flow < 1:
            raise TrafficError("benign_tcp needs flows >= 1 and bytes_per_flow >= 1")


@dataclass(frozen=True)
class SynFlood:
    """count SYNs on one fixed 4-tuple at a fixed rate; never completes."""

    src_ip: int
    dst_ip: int
    dport: int = 80
    count: int = 199
    rate_pps: float = 1000.0
    start_s: float = 0.0

    def __post_init__(self) -> None:
        if self.count < 1 or self.rate_pps <= 0:
            raise TrafficError("syn_flood needs count >= 1 and rate_pps > 0")


@dataclass(frozen=True)
class TableMissFlood:
    """Forged headers drawn to miss every installed rule, for a duration."""

    src_ip: int
    rate_pps: float = 500.0
    duration_s: float = 1.0
    start_s: float = 0.0

    def __post_init__(self) -> None:
        if self.rate_pps <= 0 or self.duration_s <= 0:
            raise TrafficError("table_miss_flood needs rate_pps > 0 and duration_s > 0")


TrafficSpec = Union[BenignTcp, SynFlood, TableMissFlood]


def traffic_from_dict(data: dict) -> TrafficSpec:
    kind = data.get("kind")
    try:
        if kind == "benign_tcp":
            return BenignTcp(
                src_ip=parse_ip(data["src"]),
                dst_ip=parse_ip(data["dst"]),
                dst_port=int(data.get("dst_port", 5001)),
                flows=int(data.get("flows", 1)),
                bytes_per_flow=int(data.get("bytes_per_flow", 100_000)),
                start_s=float(data.get("start", 0.0)),
            )
        if kind == "syn_flood":
            return SynFlood(
                src_ip=parse_ip(data["src"]),
                dst_ip=parse_ip(data["dst"]),
                dport=int(data.get("dport", 80)),
                count=int(data.get("count", 199)),
                rate_pps=float(data.get("rate", 1000.0)),
                start_s=float(data.get("start", 0.0)),
            )
        if kind == "table_miss_flood":
            stop = data.get("stop")
            start = float(data.get("start", 0.0))
            duration = float(data["duration"]) if "duration" in data else float(stop) - start
            return TableMissFlood(
                src_ip=parse_ip(data["src"]),
                rate_pps=float(data.get("rate", 500.0)),
                duration_s=duration,
                start_s=start,
            )
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, TrafficError):
            raise
        raise TrafficError(f"malformed {kind or 'traffic'} entry: {exc}") from exc
    raise TrafficError(f"unknown traffic kind {kind!r}")


def traffic_to_dict(spec: TrafficSpec) -> dict:
    from ..core_model import ip_str

    if isinstance(spec, BenignTcp):
        return {
            "kind": "benign_tcp",
            "src": ip_str(spec.src_ip),
            "dst": ip_str(spec.dst_ip),
            "dst_port": spec.dst_port,
            "flows": spec.flows,
            "bytes_per_flow": spec.bytes_per_flow,
            "start": spec.start_s,
        }
    if isinstance(spec, SynFlood):
        return {
            "kind": "syn_flood",
            "src": ip_str(spec.src_ip),
            "dst": ip_str(spec.dst_ip),
            "dport": spec.dport,
            "count": spec.count,
            "rate": spec.rate_pps,
            "start": spec.start_s,
        }
    return {
        "kind": "table_miss_flood",
        "src": ip_str(spec.src_ip),
        "rate": spec.rate_pps,
        "duration": spec.duration_s,
        "start": spec.start_s,
    }


def gen_syn_flood(spec: SynFlood, eth_src: int = 0, eth_dst: int = 0) -> list[tuple[int, Packet]]:
    """(send time, packet) list: sequential seq numbers on one constant 4-tuple.

    Nothing here ever acknowledges, so every connection stays half-open.
    """
    start_ns = int(spec.start_s * NS_PER_S)
    gap = int(NS_PER_S / spec.rate_pps)
    out = []
    for i in range(spec.count):
        ts = start_ns + i * gap
        header = PacketHeader(
            in_port=0,
            eth_src=eth_src,
            eth_dst=eth_dst,
            ip_src=spec.src_ip,
            ip_dst=spec.dst_ip,
            tp_src=FLOOD_SPORT,
            tp_dst=spec.dport,
        )
        out.append(
            (ts, Packet(header, Protocol.TCP, frozenset({TcpFlag.SYN}), seq=FLOOD_SEQ_BASE + i, ts=ts))
        )
    return out


def gen_table_miss_flood(spec: TableMissFlood, seed: int, eth_src: int = 0) -> list[tuple[int, Packet]]:
    """Seeded forged packets whose destinations lie outside the fabric.

    Addresses come from a reserved range no policy can cover, so every
    packet is guaranteed to miss any compiled table.
    """
    rng = random.Random(seed)
    start_ns = int(spec.start_s * NS_PER_S)
    gap = int(NS_PER_S / spec.rate_pps)
    count = int(spec.duration_s * spec.rate_pps)
    out = []
    for i in range(count):
        ts = start_ns + i * gap
        header = PacketHeader(
            in_port=0,
            eth_src=eth_src,
            eth_dst=0xFFFFFFFFFFFF,
            ip_src=spec.src_ip,
            ip_dst=MISS_NET_BASE + rng.randrange(MISS_NET_SIZE),
            tp_src=rng.randrange(1024, 65536),
            tp_dst=rng.randrange(1, 65536),
        )
        out.append((ts, Packet(header, Protocol.TCP, frozenset({TcpFlag.SYN}), seq=rng.randrange(1 << 31), ts=ts)))
    return out
