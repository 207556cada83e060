"""Priority-ordered flow table with OpenFlow-style modification ops.

A table holds FlowRules sorted by (priority desc, install order asc); lookup
returns the first rule whose match accepts the packet and charges that rule's
counters.  Misses are counted so offered traffic can be reconciled against
per-rule stats exactly.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum

from .core_model import Action, CtState, FlowRule, MatchSpec, Packet, header_matches, ip_str

__all__ = [
    "MissPolicy",
    "LookupResult",
    "FlowModOp",
    "FlowMod",
    "FlowModResult",
    "FlowModError",
    "StatsEntry",
    "FlowTable",
]


class MissPolicy(Enum):
    PACKET_IN = "packet_in"
    DROP = "drop"


class FlowModError(ValueError):
    """A flow modification that cannot be applied as given."""


@dataclass(frozen=True)
class LookupResult:
    """Either a matched rule (id + its actions) or a table miss."""

    rule_id: str | None
    actions: tuple[Action, ...]

    @property
    def is_miss(self) -> bool:
        return self.rule_id is None

    @classmethod
    def miss(cls) -> "LookupResult":
        return cls(None, ())


class FlowModOp(Enum):
    ADD = "add"
    MODIFY = "modify"
    DELETE = "delete"


@dataclass(frozen=True)
class FlowMod:
    """One table modification: a rule to add/modify, or a delete selector."""

    op: FlowModOp
    rule: FlowRule | None = None
    selector: MatchSpec | None = None
    priority: int | None = None
    table: int = 0

    def __post_init__(self) -> None:
        if self.op in (FlowModOp.ADD, FlowModOp.MODIFY) and self.rule is None:
            raise FlowModError(f"{self.op.value} requires a rule")
        if self.op is FlowModOp.DELETE and self.selector is None:
            raise FlowModError("delete requires a selector")

    def render(self) -> str:
        """ovs add-flow style text, e.g. for mitigation log lines."""
        if self.op is FlowModOp.DELETE:
            fields = _mod_fields(self.selector)
            prio = f"priority={self.priority}, " if self.priority is not None else ""
            return f"delete table={self.table}, {prio}" + ",".join(fields)
        assert self.rule is not None
        fields = _mod_fields(self.rule.match)
        actions = ",".join(a.render() for a in self.rule.actions)
        head = f"table={self.table}, priority={self.rule.priority}, "
        verb = "" if self.op is FlowModOp.ADD else "modify "
        return verb + head + ",".join(fields) + f" actions={actions}"

    def to_dict(self) -> dict:
        out: dict = {"op": self.op.value, "table": self.table}
        if self.rule is not None:
            out["rule"] = self.rule.to_dict()
        if self.selector is not None:
            out["selector"] = self.selector.to_dict()
        if self.priority is not None:
            out["priority"] = self.priority
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FlowMod":
        return cls(
            op=FlowModOp(data["op"]),
            rule=FlowRule.from_dict(data["rule"]) if "rule" in data else None,
            selector=MatchSpec.from_dict(data["selector"]) if "selector" in data else None,
            priority=data.get("priority"),
            table=data.get("table", 0),
        )


def _mod_fields(match: MatchSpec | None) -> list[str]:
    """Match fields in add-flow order: addresses first, then protocol."""
    if match is None:
        return []
    parts: list[str] = []
    if match.ip_src is not None:
        parts.append(f"nw_src={ip_str(match.ip_src)}")
    if match.ip_dst is not None:
        parts.append(f"nw_dst={ip_str(match.ip_dst)}")
    if match.protocol is not None:
        parts.append(match.protocol.value)
    if match.tp_src is not None:
        parts.append(f"tp_src={match.tp_src}")
    if match.tp_dst is not None:
        parts.append(f"tp_dst={match.tp_dst}")
    if match.in_port is not None:
        parts.append(f"in_port={match.in_port}")
    if match.ct_set or match.ct_unset:
        text = "".join(f"+{f.value}" for f in sorted(match.ct_set, key=lambda f: f.value))
        text += "".join(f"-{f.value}" for f in sorted(match.ct_unset, key=lambda f: f.value))
        parts.append(f"ct_state={text}")
    return parts


@dataclass(frozen=True)
class FlowModResult:
    op: FlowModOp
    affected: tuple[str, ...]


@dataclass(frozen=True)
class StatsEntry:
    """One row of a stats snapshot; stats are copies, reading never mutates."""

    rule_id: str
    priority: int
    match: MatchSpec
    n_packets: int
    n_bytes: int
    created_at: int


@dataclass
class FlowTable:
    """A single-table pipeline stage with deterministic lookup order."""

    table_id: int = 0
    miss_policy: MissPolicy = MissPolicy.PACKET_IN
    _rules: list[FlowRule] = field(default_factory=list)
    _by_id: dict = field(default_factory=dict)
    # rules bucketed by exact ip_dst (None bucket holds ip_dst wildcards);
    # every bucket stays sorted by (-priority, install_seq)
    _buckets: dict = field(default_factory=dict)
    _next_seq: int = 0
    lookup_count: int = 0
    miss_count: int = 0

    def __len__(self) -> int:
        return len(self._rules)

    def rules(self) -> list[FlowRule]:
        """Rules in lookup order."""
        return sorted(self._rules, key=_sort_key)

    def get(self, rule_id: str) -> FlowRule | None:
        return self._by_id.get(rule_id)

    # -- lookup ---------------------------------------------------------

    def lookup(self, pkt: Packet, ct: CtState | None = None) -> LookupResult:
        """Match a packet against the table and charge the winning rule.

        Highest priority wins; equal priorities go to the earlier install.
        A miss increments the miss counter and returns a TableMiss result.
        """
        self.lookup_count += 1
        rule = self._find(pkt, ct)
        if rule is None:
            self.miss_count += 1
            return LookupResult.miss()
        rule.stats.account(pkt)
        return LookupResult(rule.rule_id, rule.actions)

    def peek(self, pkt: Packet, ct: CtState | None = None) -> FlowRule | None:
        """Like lookup but without touching any counter."""
        return self._find(pkt, ct)

    def _find(self, pkt: Packet, ct: CtState | None) -> FlowRule | None:
        exact = self._buckets.get(pkt.header.ip_dst, _EMPTY)
        wild = self._buckets.get(None, _EMPTY)
        # merge the two sorted candidate lists in lookup order
        i = j = 0
        while i < len(exact) or j < len(wild):
            if j >= len(wild) or (i < len(exact) and _sort_key(exact[i]) < _sort_key(wild[j])):
                cand = exact[i]
                i += 1
            else:
                cand = wild[j]
                j += 1
            if header_matches(cand.match, pkt, ct):
                return cand
        return None

    # -- modification ---------------------------------------------------

    def apply_flow_mod(self, mod: FlowMod, now: int = 0) -> FlowModResult:
        """Apply one Add/Modify/Delete; returns the affected rule ids.

        Add replaces an existing rule with identical (priority, match); the
        replacement installs fresh (new counters, new tie-break position).
        Modify rewrites actions in place and keeps counters.  Delete removes
        every rule whose match equals the selector.  Modify/Delete matching
        nothing is a no-op, not an error.
        """
        if mod.op is FlowModOp.ADD:
            return self._apply_add(mod, now)
        if mod.op is FlowModOp.MODIFY:
            return self._apply_modify(mod)
        return self._apply_delete(mod)

    def _apply_add(self, mod: FlowMod, now: int) -> FlowModResult:
        assert mod.rule is not None
        incoming = mod.rule
        affected: list[str] = []
        dup = self._find_equal(incoming.priority, incoming.match)
        if dup is not None:
            self._remove(dup)
            affected.append(dup.rule_id)
        elif incoming.rule_id in self._by_id:
            raise FlowModError(f"rule_id {incoming.rule_id!r} already present with a different match")
        rule = FlowRule(
            rule_id=incoming.rule_id,
            priority=incoming.priority,
            match=incoming.match,
            actions=incoming.actions,
        )
        rule.stats.created_at = now
        rule.install_seq = self._next_seq
        self._next_seq += 1
        self._insert(rule)
        affected.append(rule.rule_id)
        return FlowModResult(FlowModOp.ADD, tuple(affected))

    def _apply_modify(self, mod: FlowMod) -> FlowModResult:
        assert mod.rule is not None
        target = self._find_equal(mod.rule.priority, mod.rule.match)
        if target is None:
            return FlowModResult(FlowModOp.MODIFY, ())
        target.actions = tuple(mod.rule.actions)
        return FlowModResult(FlowModOp.MODIFY, (target.rule_id,))

    def _apply_delete(self, mod: FlowMod) -> FlowModResult:
        assert mod.selector is not None
        victims = [
            r
            for r in self.rules()
            if r.match == mod.selector
            and (mod.priority is None or r.priority == mod.priority)
        ]
        for rule in victims:
            self._remove(rule)
        return FlowModResult(FlowModOp.DELETE, tuple(r.rule_id for r in victims))

    # -- stats ------------------------------------------------------------

    def read_stats(self, selector: MatchSpec | None = None) -> list[StatsEntry]:
        """Snapshot counters for all rules (or those whose match equals selector)."""
        out = []
        for rule in self.rules():
            if selector is not None and rule.match != selector:
                continue
            s = rule.stats
            out.append(
                StatsEntry(rule.rule_id, rule.priority, rule.match, s.n_packets, s.n_bytes, s.created_at)
            )
        return out

    def total_matched_packets(self) -> int:
        return sum(r.stats.n_packets for r in self._rules)

    def dump(self) -> str:
        """Rule listing with counters, one line per rule in lookup order."""
        return "\n".join(r.render(with_stats=True) for r in self.rules())

    # -- internals -------------------------------------------------------

    def _bucket_key(self, rule: FlowRule) -> int | None:
        return rule.match.ip_dst

    def _insert(self, rule: FlowRule) -> None:
        bucket = self._buckets.setdefault(self._bucket_key(rule), [])
        bisect.insort(bucket, rule, key=_sort_key)
        self._rules.append(rule)
        self._by_id[rule.rule_id] = rule

    def _remove(self, rule: FlowRule) -> None:
        self._buckets[self._bucket_key(rule)].remove(rule)
        self._rules.remove(rule)
        del self._by_id[rule.rule_id]

    def _find_equal(self, priority: int, match: MatchSpec) -> FlowRule | None:
        for rule in self._buckets.get(match.ip_dst, _EMPTY):
            if rule.priority == priority and rule.match == match:
                return rule
        return None


_EMPTY: list = []


def _sort_key(rule: FlowRule) -> tuple[int, int]:
    return (-rule.priority, rule.install_seq)
