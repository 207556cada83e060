"""Value types shared by the data plane: packets, match specs, actions, rules.

Everything here is a plain value. Matching and overlap checks are pure
functions so they can be replayed against oracles; nothing in this module
keeps state or touches a clock.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

__all__ = [
    "Protocol",
    "TcpFlag",
    "CtFlag",
    "CtState",
    "PacketHeader",
    "Packet",
    "MatchSpec",
    "ActionKind",
    "Action",
    "RuleStats",
    "FlowRule",
    "ReservedActionError",
    "header_matches",
    "specs_overlap",
    "frame_bytes",
    "ip_str",
    "parse_ip",
    "UNTRACKED",
]

# Frame overhead: 14 ethernet + 20 IPv4 + 20 TCP/UDP-padded transport header.
# A zero-payload SYN therefore costs 54 bytes on the wire.
FRAME_OVERHEAD = 54


class Protocol(Enum):
    TCP = "tcp"
    UDP = "udp"


class TcpFlag(Enum):
    SYN = "syn"
    ACK = "ack"
    FIN = "fin"
    RST = "rst"


class CtFlag(Enum):
    """Connection-tracking state bits a classified packet can carry."""

    TRK = "trk"
    NEW = "new"
    EST = "est"
    REL = "rel"  # reserved: related-flow tracking is not implemented


# Render order for ct_state text, mirroring ovs dumps.
_CT_RENDER_ORDER = (CtFlag.TRK, CtFlag.NEW, CtFlag.EST, CtFlag.REL)


@dataclass(frozen=True)
class CtState:
    """Classification result attached to a packet after a conntrack pass.

    Invariants: classification always sets trk, and new/est are mutually
    exclusive.  An untracked packet is represented by the absence of a
    CtState (None), not by an empty flag set.
    """

    flags: frozenset[CtFlag]

    def __post_init__(self) -> None:
        if CtFlag.TRK not in self.flags:
            raise ValueError("classified state must include trk")
        if CtFlag.NEW in self.flags and CtFlag.EST in self.flags:
            raise ValueError("new and est are mutually exclusive")

    def has(self, flag: CtFlag) -> bool:
        return flag in self.flags

    def render(self) -> str:
        return "+" + "+".join(f.value for f in _CT_RENDER_ORDER if f in self.flags)


UNTRACKED: None = None  # alias used in call sites for readability


# The ct states a classification can actually produce.  Used to decide
# whether a pair of ct requirements is jointly satisfiable.
_CT_UNIVERSE: tuple[frozenset[CtFlag], ...] = (
    frozenset(),  # untracked
    frozenset({CtFlag.TRK}),
    frozenset({CtFlag.TRK, CtFlag.NEW}),
    frozenset({CtFlag.TRK, CtFlag.EST}),
)


def ip_str(ip: int) -> str:
    return str(ipaddress.IPv4Address(ip))


def parse_ip(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def mac_str(mac: int) -> str:
    return ":".join(f"{(mac >> s) & 0xFF:02x}" for s in range(40, -8, -8))


@dataclass(frozen=True)
class PacketHeader:
    """Parsed header fields a flow table can match on."""

    in_port: int
    eth_src: int
    eth_dst: int
    ip_src: int
    ip_dst: int
    tp_src: int
    tp_dst: int

    def with_in_port(self, port: int) -> "PacketHeader":
        return replace(self, in_port=port)


@dataclass(frozen=True)
class Packet:
    """A single simulated frame.

    seq/ack model just enough of TCP for handshake tracking; payload_len
    stands in for the segment body.  ts is the injection time in integer
    nanoseconds of simulation time.
    """

    header: PacketHeader
    protocol: Protocol
    tcp_flags: frozenset[TcpFlag] = frozenset()
    seq: int = 0
    ack: int = 0
    payload_len: int = 0
    ts: int = 0

    def __post_init__(self) -> None:
        if self.protocol is not Protocol.TCP and self.tcp_flags:
            raise ValueError("tcp flags only make sense on tcp packets")
        if self.payload_len < 0:
            raise ValueError("payload_len must be >= 0")


def frame_bytes(pkt: Packet) -> int:
    """Wire size of a packet: fixed header overhead plus payload."""
    return FRAME_OVERHEAD + pkt.payload_len


# Header fields a MatchSpec can constrain, as (spec attr, header attr) pairs.
_MATCH_FIELDS = ("in_port", "eth_src", "eth_dst", "ip_src", "ip_dst", "tp_src", "tp_dst")


@dataclass(frozen=True)
class MatchSpec:
    """Exact-or-wildcard match over header fields plus a ct requirement.

    None means wildcard.  ct_set lists flags that must be present on the
    packet's classification, ct_unset flags that must be absent.  Untracked
    packets carry no flags at all, so they satisfy only specs whose ct
    requirement is empty or purely negative (e.g. -trk).
    """

    in_port: int | None = None
    eth_src: int | None = None
    eth_dst: int | None = None
    ip_src: int | None = None
    ip_dst: int | None = None
    tp_src: int | None = None
    tp_dst: int | None = None
    protocol: Protocol | None = None
    ct_set: frozenset[CtFlag] = frozenset()
    ct_unset: frozenset[CtFlag] = frozenset()

    def __post_init__(self) -> None:
        if self.ct_set & self.ct_unset:
            raise ValueError("a ct flag cannot be both required and forbidden")
        if not any(_ct_requirement_ok(self, flags) for flags in _CT_UNIVERSE):
            raise ValueError("ct requirement is not satisfiable by any classification")

    def render_fields(self) -> list[str]:
        """Match portion in dump order; empty for a match-all spec."""
        parts: list[str] = []
        if self.ct_set or self.ct_unset:
            text = "".join(f"+{f.value}" for f in _CT_RENDER_ORDER if f in self.ct_set)
            text += "".join(f"-{f.value}" for f in _CT_RENDER_ORDER if f in self.ct_unset)
            parts.append(f"ct_state={text}")
        if self.protocol is not None:
            parts.append(self.protocol.value)
        if self.ip_src is not None:
            parts.append(f"nw_src={ip_str(self.ip_src)}")
        if self.ip_dst is not None:
            parts.append(f"nw_dst={ip_str(self.ip_dst)}")
        if self.tp_src is not None:
            parts.append(f"tp_src={self.tp_src}")
        if self.tp_dst is not None:
            parts.append(f"tp_dst={self.tp_dst}")
        if self.eth_src is not None:
            parts.append(f"dl_src={mac_str(self.eth_src)}")
        if self.eth_dst is not None:
            parts.append(f"dl_dst={mac_str(self.eth_dst)}")
        if self.in_port is not None:
            parts.append(f"in_port={self.in_port}")
        return parts

    def to_dict(self) -> dict:
        out: dict = {}
        for name in ("in_port", "tp_src", "tp_dst"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        for name in ("eth_src", "eth_dst"):
            value = getattr(self, name)
            if value is not None:
                out[name] = mac_str(value)
        for name in ("ip_src", "ip_dst"):
            value = getattr(self, name)
            if value is not None:
                out[name] = ip_str(value)
        if self.protocol is not None:
            out["protocol"] = self.protocol.value
        if self.ct_set:
            out["ct_set"] = sorted(f.value for f in self.ct_set)
        if self.ct_unset:
            out["ct_unset"] = sorted(f.value for f in self.ct_unset)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MatchSpec":
        def _mac(v: str | int) -> int:
            return v if isinstance(v, int) else int(v.replace(":", ""), 16)

        def _ip(v: str | int) -> int:
            return v if isinstance(v, int) else parse_ip(v)

        return cls(
            in_port=data.get("in_port"),
            eth_src=_mac(data["eth_src"]) if "eth_src" in data else None,
            eth_dst=_mac(data["eth_dst"]) if "eth_dst" in data else None,
            ip_src=_ip(data["ip_src"]) if "ip_src" in data else None,
            ip_dst=_ip(data["ip_dst"]) if "ip_dst" in data else None,
            tp_src=data.get("tp_src"),
            tp_dst=data.get("tp_dst"),
            protocol=Protocol(data["protocol"]) if "protocol" in data else None,
            ct_set=frozenset(CtFlag(f) for f in data.get("ct_set", ())),
            ct_unset=frozenset(CtFlag(f) for f in data.get("ct_unset", ())),
        )


def _ct_requirement_ok(spec: MatchSpec, flags: frozenset[CtFlag]) -> bool:
    return spec.ct_set <= flags and not (spec.ct_unset & flags)


def header_matches(spec: MatchSpec, pkt: Packet, ct: CtState | None) -> bool:
    """True iff the packet (with the given classification) satisfies the match spec.

    Total and pure: any spec/packet/state combination yields a bool.
    """
    header = pkt.header
    for name in _MATCH_FIELDS:
        want = getattr(spec, name)
        if want is not None and want != getattr(header, name):
            return False
    if spec.protocol is not None and spec.protocol is not pkt.protocol:
        return False
    flags = ct.flags if ct is not None else frozenset()
    return _ct_requirement_ok(spec, flags)


def specs_overlap(a: MatchSpec, b: MatchSpec) -> bool:
    """True iff some packet could match both specs.

    Field-wise: two exact values only overlap when equal; a wildcard is
    compatible with anything.  The ct requirements must be jointly
    satisfiable by at least one achievable classification.
    """
    for name in _MATCH_FIELDS:
        va, vb = getattr(a, name), getattr(b, name)
        if va is not None and vb is not None and va != vb:
            return False
    if a.protocol is not None and b.protocol is not None and a.protocol is not b.protocol:
        return False
    return any(
        _ct_requirement_ok(a, flags) and _ct_requirement_ok(b, flags)
        for flags in _CT_UNIVERSE
    )


def spec_contains(outer: MatchSpec, inner: MatchSpec) -> bool:
    """True iff every packet matching inner also matches outer."""
    for name in _MATCH_FIELDS:
        vo, vi = getattr(outer, name), getattr(inner, name)
        if vo is not None and vo != vi:
            return False
    if outer.protocol is not None and outer.protocol is not inner.protocol:
        return False
    # outer's ct constraints must be implied by inner's.
    return outer.ct_set <= inner.ct_set and outer.ct_unset <= inner.ct_unset


class ActionKind(Enum):
    OUTPUT = "output"
    DROP = "drop"
    SEND_TO_CONNTRACK = "ct"
    COMMIT_AND_OUTPUT = "ct_commit_output"
    PACKET_IN = "packet_in"
    RATE_LIMIT = "rate_limit"  # reserved
    REDIRECT_HONEYPOT = "redirect_honeypot"  # reserved

_RESERVED_KINDS = frozenset({ActionKind.RATE_LIMIT, ActionKind.REDIRECT_HONEYPOT})


class ReservedActionError(NotImplementedError):
    """Raised when a reserved action reaches an execution path."""


@dataclass(frozen=True)
class Action:
    """One forwarding-pipeline action.

    Reserved kinds can be constructed and serialized so configurations
    round-trip, but executing them raises ReservedActionError.
    """

    kind: ActionKind
    port: int | None = None
    zone: int = 0
    recirculate_table: int = 0
    pps: int | None = None

    @classmethod
    def output(cls, port: int) -> "Action":
        return cls(ActionKind.OUTPUT, port=port)

    @classmethod
    def drop(cls) -> "Action":
        return cls(ActionKind.DROP)

    @classmethod
    def send_to_conntrack(cls, zone: int = 0, recirculate_table: int = 0) -> "Action":
        return cls(ActionKind.SEND_TO_CONNTRACK, zone=zone, recirculate_table=recirculate_table)

    @classmethod
    def commit_and_output(cls, port: int, zone: int = 0) -> "Action":
        return cls(ActionKind.COMMIT_AND_OUTPUT, port=port, zone=zone)

    @classmethod
    def packet_in(cls) -> "Action":
        return cls(ActionKind.PACKET_IN)

    @classmethod
    def rate_limit(cls, pps: int) -> "Action":
        return cls(ActionKind.RATE_LIMIT, pps=pps)

    @classmethod
    def redirect_honeypot(cls) -> "Action":
        return cls(ActionKind.REDIRECT_HONEYPOT)

    def assert_executable(self) -> None:
        if self.kind in _RESERVED_KINDS:
            raise ReservedActionError(f"action {self.kind.value} is reserved and cannot execute")

    def render(self) -> str:
        if self.kind is ActionKind.OUTPUT:
            return f"output:{self.port}"
        if self.kind is ActionKind.DROP:
            return "drop"
        if self.kind is ActionKind.SEND_TO_CONNTRACK:
            if self.zone:
                return f"ct(zone={self.zone},table={self.recirculate_table})"
            return f"ct(table={self.recirculate_table})"
        if self.kind is ActionKind.COMMIT_AND_OUTPUT:
            return f"ct(commit),output:{self.port}"
        if self.kind is ActionKind.PACKET_IN:
            return "controller"
        if self.kind is ActionKind.RATE_LIMIT:
            return f"rate_limit:{self.pps}"
        return "honeypot"

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.port is not None:
            out["port"] = self.port
        if self.zone:
            out["zone"] = self.zone
        if self.recirculate_table:
            out["recirculate_table"] = self.recirculate_table
        if self.pps is not None:
            out["pps"] = self.pps
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Action":
        return cls(
            kind=ActionKind(data["kind"]),
            port=data.get("port"),
            zone=data.get("zone", 0),
            recirculate_table=data.get("recirculate_table", 0),
            pps=data.get("pps"),
        )


@dataclass
class RuleStats:
    """Per-rule counters. Counters only ever grow; duration derives from age."""

    n_packets: int = 0
    n_bytes: int = 0
    created_at: int = 0

    def account(self, pkt: Packet) -> None:
        self.n_packets += 1
        self.n_bytes += frame_bytes(pkt)

    def duration_s(self, now: int) -> float:
        return max(0, now - self.created_at) / 1e9

    def snapshot(self) -> "RuleStats":
        return RuleStats(self.n_packets, self.n_bytes, self.created_at)


@dataclass
class FlowRule:
    """A prioritized match/action entry.

    rule_id must be unique within its table; install_seq is assigned by the
    table and breaks priority ties in favor of the earlier install.
    """

    rule_id: str
    priority: int
    match: MatchSpec
    actions: tuple[Action, ...]
    stats: RuleStats = field(default_factory=RuleStats)
    install_seq: int = 0

    def __post_init__(self) -> None:
        if self.priority < 0:
            raise ValueError("priority must be >= 0")
        if not self.actions:
            raise ValueError("a rule needs at least one action")
        self.actions = tuple(self.actions)

    def render(self, with_stats: bool = False) -> str:
        parts = [f"priority={self.priority}"] + self.match.render_fields()
        text = ",".join(parts) + " actions=" + ",".join(a.render() for a in self.actions)
        if with_stats:
            return f"n_packets={self.stats.n_packets}, n_bytes={self.stats.n_bytes}, {text}"
        return text

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "priority": self.priority,
            "match": self.match.to_dict(),
            "actions": [a.to_dict() for a in self.actions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FlowRule":
        return cls(
            rule_id=data["rule_id"],
            priority=data["priority"],
            match=MatchSpec.from_dict(data["match"]),
            actions=tuple(Action.from_dict(a) for a in data["actions"]),
        )


def iter_match_fields() -> Iterator[str]:
    """Names of the exact-or-wildcard header fields, in match order."""
    return iter(_MATCH_FIELDS)
