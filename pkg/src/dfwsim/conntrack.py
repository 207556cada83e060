"""Per-switch connection tracking: keys, TCP state machine, classification.

Each switch owns one CtTable.  A packet sent through the tracker resolves to
a direction-normalized ConnKey, advances the entry's TCP state, and comes
back classified +trk+new or +trk+est.  "est" follows the usual conntrack
convention: the connection has been answered.  Every packet of an unanswered
connection, including retransmitted SYNs on a committed half-open entry,
classifies +new and will keep hitting a +new rule; that asymmetry is what a
ratio detector reads.

Entries created during classification are tentative.  They survive only
until end_pass() unless a commit action promotes them, so a flow that never
traverses a commit rule leaves no residue.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .core_model import CtFlag, CtState, Packet, Protocol, TcpFlag, ip_str

__all__ = [
    "Direction",
    "TcpState",
    "ConnKey",
    "ConnEntry",
    "CtEventKind",
    "CtEvent",
    "CtConfig",
    "CtTable",
    "HalfOpenStats",
    "UnknownConnError",
]

NS_PER_S = 1_000_000_000


class Direction(Enum):
    ORIG = "orig"
    REPLY = "reply"


class TcpState(Enum):
    SYN_SENT = "SYN_SENT"
    SYN_RECV = "SYN_RECV"
    ESTABLISHED = "ESTABLISHED"
    CLOSING = "CLOSING"
    CLOSED = "CLOSED"


class UnknownConnError(KeyError):
    """An operation referenced a connection the table does not hold."""


@dataclass(frozen=True)
class ConnKey:
    """Connection identity in originator orientation within a zone."""

    zone: int
    protocol: Protocol
    ip_src: int
    ip_dst: int
    tp_src: int
    tp_dst: int

    def reversed(self) -> "ConnKey":
        return ConnKey(self.zone, self.protocol, self.ip_dst, self.ip_src, self.tp_dst, self.tp_src)


@dataclass
class ConnEntry:
    key: ConnKey
    tcp_state: TcpState = TcpState.CLOSED
    committed: bool = False
    created_at: int = 0
    last_seen: int = 0
    orig_packets: int = 0
    reply_packets: int = 0
    last_seq_seen: int = 0


class CtEventKind(Enum):
    NEW_CONN = "new_conn"
    STATE_CHANGE = "state_change"
    EXPIRED = "expired"
    COMMITTED = "committed"


@dataclass(frozen=True)
class CtEvent:
    kind: CtEventKind
    key: ConnKey
    ts: int
    old_state: TcpState | None = None
    new_state: TcpState | None = None


@dataclass(frozen=True)
class CtConfig:
    """Idle timeouts per state class, in seconds."""

    syn_timeout_s: float = 30.0
    established_timeout_s: float = 600.0
    closing_timeout_s: float = 10.0
    udp_timeout_s: float = 60.0


@dataclass(frozen=True)
class HalfOpenStats:
    half_open: int
    established: int


# After a packet advances the entry, these post-transition states classify
# as answered (+est).  A reply-direction packet proves the connection was
# answered as soon as it moves the state past SYN_SENT; an originator-side
# packet only rides +est once the handshake completed.
_EST_STATES_REPLY = frozenset({TcpState.SYN_RECV, TcpState.ESTABLISHED, TcpState.CLOSING})
_EST_STATES_ORIG = frozenset({TcpState.ESTABLISHED, TcpState.CLOSING})

_CT_NEW = CtState(frozenset({CtFlag.TRK, CtFlag.NEW}))
_CT_EST = CtState(frozenset({CtFlag.TRK, CtFlag.EST}))


def tcp_transition(state: TcpState, flags: frozenset[TcpFlag], direction: Direction) -> TcpState:
    """Single-step TCP tracking transition; unknown combinations are no-ops.

    Flag precedence: RST, then SYN / SYN+ACK, then FIN, then bare ACK.
    """
    if TcpFlag.RST in flags:
        return TcpState.CLOSED
    if TcpFlag.SYN in flags and TcpFlag.ACK not in flags:
        # simultaneous open is not modeled; a reply-side SYN changes nothing
        return TcpState.SYN_SENT if direction is Direction.ORIG else state
    if TcpFlag.SYN in flags and TcpFlag.ACK in flags:
        if state is TcpState.SYN_SENT and direction is Direction.REPLY:
            return TcpState.SYN_RECV
        return state
    if TcpFlag.FIN in flags:
        return TcpState.CLOSING if state is TcpState.ESTABLISHED else state
    if TcpFlag.ACK in flags:
        if state is TcpState.SYN_RECV and direction is Direction.ORIG:
            return TcpState.ESTABLISHED
        return state
    return state


class CtTable:
    """Connection table for one switch; zones partition the key space."""

    def __init__(self, config: CtConfig | None = None) -> None:
        self.config = config or CtConfig()
        self._entries: dict[ConnKey, ConnEntry] = {}
        self._pending: dict[ConnKey, ConnEntry] = {}
        self._listeners: list[Callable[[CtEvent], None]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def subscribe(self, listener: Callable[[CtEvent], None]) -> None:
        self._listeners.append(listener)

    def _emit(self, event: CtEvent) -> None:
        for listener in self._listeners:
            listener(event)

    # -- key resolution ---------------------------------------------------

    def conn_key(self, pkt: Packet, zone: int = 0) -> tuple[ConnKey, Direction]:
        """Resolve a packet to its connection key and travel direction.

        An unknown 4-tuple makes the packet's sender the originator; both
        orientations of a known connection resolve to the same key.
        """
        h = pkt.header
        fwd = ConnKey(zone, pkt.protocol, h.ip_src, h.ip_dst, h.tp_src, h.tp_dst)
        if fwd in self._entries or fwd in self._pending:
            return fwd, Direction.ORIG
        rev = fwd.reversed()
        if rev in self._entries or rev in self._pending:
            return rev, Direction.REPLY
        return fwd, Direction.ORIG

    def get(self, key: ConnKey) -> ConnEntry | None:
        entry = self._entries.get(key)
        if entry is None:
            entry = self._pending.get(key)
        return entry

    # -- classification ---------------------------------------------------

    def classify(self, pkt: Packet, zone: int = 0, now: int | None = None) -> CtState:
        """Send a packet through the tracker and return its ct flags.

        A packet with no committed entry records a tentative one and comes
        back +trk+new.  On a committed entry the packet first advances the
        TCP state, then classifies +est when the post-transition state shows
        the connection was answered (for the packet's direction), +new
        otherwise.
        """
        if not isinstance(pkt.protocol, Protocol):
            raise ValueError(f"cannot classify non-IP protocol {pkt.protocol!r}")
        ts = pkt.ts if now is None else now
        key, direction = self.conn_key(pkt, zone)
        entry = self.get(key)
        if entry is None:
            entry = ConnEntry(key=key, created_at=ts, last_seen=ts)
            self._pending[key] = entry
            self._emit(CtEvent(CtEventKind.NEW_CONN, key, ts))
            self._advance(entry, pkt, direction, ts)
            return _CT_NEW
        self._advance(entry, pkt, direction, ts)
        if not entry.committed:
            return _CT_NEW
        est_states = _EST_STATES_REPLY if direction is Direction.REPLY else _EST_STATES_ORIG
        if pkt.protocol is Protocol.UDP:
            est_states = frozenset({TcpState.ESTABLISHED})
        return _CT_EST if entry.tcp_state in est_states else _CT_NEW

    # -- state machine -----------------------------------------------------

    def advance_state(
        self, key: ConnKey, pkt: Packet, direction: Direction, now: int | None = None
    ) -> tuple[TcpState, TcpState]:
        """Apply one packet's transition to a known entry; returns (old, new)."""
        entry = self.get(key)
        if entry is None:
            raise UnknownConnError(key)
        ts = pkt.ts if now is None else now
        return self._advance(entry, pkt, direction, ts)

    def _advance(
        self, entry: ConnEntry, pkt: Packet, direction: Direction, ts: int
    ) -> tuple[TcpState, TcpState]:
        old = entry.tcp_state
        if pkt.protocol is Protocol.TCP:
            new = tcp_transition(old, pkt.tcp_flags, direction)
        else:
            # two-state UDP tracking: any reply answers the flow
            new = TcpState.ESTABLISHED if direction is Direction.REPLY else old
            if old is TcpState.CLOSED and direction is Direction.ORIG:
                new = TcpState.SYN_SENT  # stands for "unanswered" on UDP
        if direction is Direction.ORIG:
            entry.orig_packets += 1
        else:
            entry.reply_packets += 1
        entry.last_seen = max(entry.last_seen, ts)
        entry.last_seq_seen = pkt.seq
        if new is not old:
            entry.tcp_state = new
            self._emit(CtEvent(CtEventKind.STATE_CHANGE, entry.key, ts, old_state=old, new_state=new))
        return old, new

    # -- commit -------------------------------------------------------------

    def commit(self, key: ConnKey, now: int = 0) -> CtEvent | None:
        """Promote a tentative entry to committed; idempotent on re-commit."""
        resolved = self._resolve_key(key)
        if resolved is None:
            raise UnknownConnError(key)
        if resolved in self._entries:
            return None
        entry = self._pending.pop(resolved)
        entry.committed = True
        self._entries[resolved] = entry
        event = CtEvent(CtEventKind.COMMITTED, resolved, now)
        self._emit(event)
        return event

    def commit_packet(self, pkt: Packet, zone: int = 0, now: int | None = None) -> CtEvent | None:
        key, _ = self.conn_key(pkt, zone)
        return self.commit(key, pkt.ts if now is None else now)

    def _resolve_key(self, key: ConnKey) -> ConnKey | None:
        if key in self._entries or key in self._pending:
            return key
        rev = key.reversed()
        if rev in self._entries or rev in self._pending:
            return rev
        return None

    def end_pass(self) -> None:
        """Discard tentative entries once the pipeline pass that made them ends."""
        self._pending.clear()

    # -- aging ---------------------------------------------------------------

    def _timeout_ns(self, entry: ConnEntry) -> int:
        cfg = self.config
        if entry.key.protocol is Protocol.UDP:
            seconds = cfg.udp_timeout_s
        elif entry.tcp_state in (TcpState.SYN_SENT, TcpState.SYN_RECV):
            seconds = cfg.syn_timeout_s
        elif entry.tcp_state is TcpState.ESTABLISHED:
            seconds = cfg.established_timeout_s
        else:
            seconds = cfg.closing_timeout_s
        return int(seconds * NS_PER_S)

    def expire(self, now: int) -> list[CtEvent]:
        """Drop entries idle past their state's timeout; returns the events."""
        events: list[CtEvent] = []
        for key in [k for k, e in self._entries.items() if now - e.last_seen > self._timeout_ns(e)]:
            entry = self._entries.pop(key)
            event = CtEvent(CtEventKind.EXPIRED, key, now, old_state=entry.tcp_state)
            events.append(event)
            self._emit(event)
        return events

    # -- reporting -------------------------------------------------------------

    def half_open_stats(self, dst_ip: int, window_ns: int, now: int) -> HalfOpenStats:
        """Handshake completion picture for one destination over a window.

        Counts committed connections created within the window whose
        originator targets dst_ip: still half-open vs fully established.
        """
        half_open = established = 0
        for entry in self._entries.values():
            if entry.key.ip_dst != dst_ip or entry.created_at < now - window_ns:
                continue
            if entry.tcp_state in (TcpState.SYN_SENT, TcpState.SYN_RECV):
                half_open += 1
            elif entry.tcp_state is TcpState.ESTABLISHED:
                established += 1
        return HalfOpenStats(half_open, established)

    def entries(self) -> list[ConnEntry]:
        return [self._entries[k] for k in sorted(self._entries, key=_key_sort)]

    def dump(self, now: int) -> str:
        lines = []
        for entry in self.entries():
            k = entry.key
            age = (now - entry.created_at) / NS_PER_S
            lines.append(
                f"zone={k.zone} proto={k.protocol.value}"
                f" src={ip_str(k.ip_src)}:{k.tp_src} dst={ip_str(k.ip_dst)}:{k.tp_dst}"
                f" state={entry.tcp_state.value} committed={int(entry.committed)} age={age:.3f}s"
            )
        return "\n".join(lines)


def _key_sort(key: ConnKey) -> tuple:
    return (key.zone, key.protocol.value, key.ip_src, key.ip_dst, key.tp_src, key.tp_dst)
