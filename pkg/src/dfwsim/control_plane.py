"""Control plane: policy model, conflict analysis, compiler, and the NIB.

Policies name literal host groups.  Compilation expands each policy to
per-host-pair rules placed along deterministic shortest paths: a stateful
allow becomes the three-rule conntrack pipeline on every path switch, a
deny becomes a single drop at the source's ingress switch.  The network
information base (NIB) is an in-process versioned key/value store with
prefix watches; switches receive their rule sets through it.

Conflict handling is split: detect_conflicts reports the classical
taxonomy (shadowing, correlation, generalization, redundancy) for humans,
while build_policy_graph resolves overlaps mechanically with higher
priority winning and deny winning ties, so the graph never maps one packet
class to both actions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

from .core_model import (
    Action,
    CtFlag,
    FlowRule,
    MatchSpec,
    Protocol,
    ip_str,
    parse_ip,
    spec_contains,
    specs_overlap,
)
from .flow_table import FlowMod, FlowModOp
from .topology import Host, Topology, TopologyError

__all__ = [
    "PolicyAction",
    "Policy",
    "PolicyError",
    "CompileError",
    "UnreachablePairError",
    "ConflictKind",
    "Conflict",
    "detect_conflicts",
    "policy_match_spec",
    "PathHop",
    "PolicyEdge",
    "PolicyGraph",
    "build_policy_graph",
    "compile_to_flow_rules",
    "NibRecord",
    "NibKeyError",
    "Nib",
    "TopologyEventKind",
    "TopologyEvent",
    "TopologyEventError",
    "Controller",
    "aggregate_stats",
]


class PolicyAction(Enum):
    ALLOW = "allow"
    DENY = "deny"


class PolicyError(ValueError):
    """A policy that fails validation."""


class CompileError(Exception):
    """Policy set cannot be realized on the given topology."""


class UnreachablePairError(CompileError):
    """An allow policy names a host pair with no usable path."""


@dataclass(frozen=True)
class Policy:
    """One intent: src hosts may (or may not) reach dst hosts on proto/port.

    proto None means any protocol, dst_port None any port.  stateful only
    affects how an allow compiles; denies are stateless by nature.
    """

    policy_id: str
    src_group: frozenset[int]
    dst_group: frozenset[int]
    proto: Protocol | None
    dst_port: int | None
    action: PolicyAction
    priority: int
    stateful: bool = True

    def __post_init__(self) -> None:
        if not self.src_group or not self.dst_group:
            raise PolicyError(f"policy {self.policy_id!r}: groups must be non-empty")
        if self.priority < 0:
            raise PolicyError(f"policy {self.policy_id!r}: priority must be >= 0")
        if self.dst_port is not None and not 0 < self.dst_port < 65536:
            raise PolicyError(f"policy {self.policy_id!r}: dst_port out of range")

    def to_dict(self) -> dict:
        return {
            "id": self.policy_id,
            "src": sorted(ip_str(ip) for ip in self.src_group),
            "dst": sorted(ip_str(ip) for ip in self.dst_group),
            "proto": self.proto.value if self.proto else "any",
            "dst_port": self.dst_port if self.dst_port is not None else "any",
            "action": self.action.value,
            "priority": self.priority,
            "stateful": self.stateful,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        try:
            proto = data.get("proto", "any")
            port = data.get("dst_port", "any")
            return cls(
                policy_id=str(data["id"]),
                src_group=frozenset(parse_ip(ip) for ip in data["src"]),
                dst_group=frozenset(parse_ip(ip) for ip in data["dst"]),
                proto=None if proto == "any" else Protocol(proto),
                dst_port=None if port == "any" else int(port),
                action=PolicyAction(data["action"]),
                priority=int(data["priority"]),
                stateful=bool(data.get("stateful", True)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, PolicyError):
                raise
            raise PolicyError(f"malformed policy entry: {exc}") from exc


def policy_match_spec(policy: Policy, src_ip: int, dst_ip: int) -> MatchSpec:
    """The match a policy induces for one concrete host pair."""
    return MatchSpec(ip_src=src_ip, ip_dst=dst_ip, protocol=policy.proto, tp_dst=policy.dst_port)


# -- conflict taxonomy ------------------------------------------------------


class ConflictKind(Enum):
    SHADOWING = "shadowing"
    CORRELATION = "correlation"
    GENERALIZATION = "generalization"
    REDUNDANCY = "redundancy"


@dataclass(frozen=True)
class Conflict:
    """first is the higher-priority party (list order breaks ties)."""

    kind: ConflictKind
    first: str
    second: str
    witness: MatchSpec

    def render(self) -> str:
        return f"{self.kind.value}: {self.first} vs {self.second} witness[{','.join(self.witness.render_fields()) or '*'}]"


def _class_overlaps(a_proto, a_port, b_proto, b_port) -> bool:
    if a_proto is not None and b_proto is not None and a_proto is not b_proto:
        return False
    if a_port is not None and b_port is not None and a_port != b_port:
        return False
    return True


def _class_covers(a_proto, a_port, b_proto, b_port) -> bool:
    """(a_proto, a_port) describes a superset of (b_proto, b_port)."""
    if a_proto is not None and (b_proto is None or a_proto is not b_proto):
        return False
    if a_port is not None and (b_port is None or a_port != b_port):
        return False
    return True


def _policies_overlap(p: Policy, q: Policy) -> bool:
    return bool(p.src_group & q.src_group) and bool(p.dst_group & q.dst_group) and _class_overlaps(
        p.proto, p.dst_port, q.proto, q.dst_port
    )


def _policy_contains(outer: Policy, inner: Policy) -> bool:
    return (
        inner.src_group <= outer.src_group
        and inner.dst_group <= outer.dst_group
        and _class_covers(outer.proto, outer.dst_port, inner.proto, inner.dst_port)
    )


def _policy_witness(p: Policy, q: Policy) -> MatchSpec:
    src = min(p.src_group & q.src_group)
    dst = min(p.dst_group & q.dst_group)
    return MatchSpec(
        ip_src=src,
        ip_dst=dst,
        protocol=p.proto if p.proto is not None else q.proto,
        tp_dst=p.dst_port if p.dst_port is not None else q.dst_port,
    )


def _spec_witness(a: MatchSpec, b: MatchSpec) -> MatchSpec:
    fields = {}
    for name in ("in_port", "eth_src", "eth_dst", "ip_src", "ip_dst", "tp_src", "tp_dst", "protocol"):
        va, vb = getattr(a, name), getattr(b, name)
        fields[name] = va if va is not None else vb
    return MatchSpec(ct_set=a.ct_set | b.ct_set, ct_unset=a.ct_unset | b.ct_unset, **fields)


def detect_conflicts(items: Sequence) -> list[Conflict]:
    """Pairwise conflict report over policies or flow rules.

    For each ordered overlapping pair the higher-priority party comes first.
    Different actions classify as shadowing (first contains second),
    generalization (second contains first) or correlation (partial overlap);
    equal actions with containment either way report redundancy.
    """
    if not items:
        return []
    if isinstance(items[0], Policy):
        return _detect_policy_conflicts(items)
    return _detect_rule_conflicts(items)


def _ordered(p, q, prio_p: int, prio_q: int):
    return (p, q) if prio_p >= prio_q else (q, p)


def _detect_policy_conflicts(policies: Sequence[Policy]) -> list[Conflict]:
    out: list[Conflict] = []
    for i in range(len(policies)):
        for j in range(i + 1, len(policies)):
            p, q = policies[i], policies[j]
            if not _policies_overlap(p, q):
                continue
            hi, lo = _ordered(p, q, p.priority, q.priority)
            witness = _policy_witness(hi, lo)
            if p.action is q.action:
                if _policy_contains(hi, lo) or _policy_contains(lo, hi):
                    out.append(Conflict(ConflictKind.REDUNDANCY, hi.policy_id, lo.policy_id, witness))
                continue
            if _policy_contains(hi, lo):
                kind = ConflictKind.SHADOWING
            elif _policy_contains(lo, hi):
                kind = ConflictKind.GENERALIZATION
            else:
                kind = ConflictKind.CORRELATION
            out.append(Conflict(kind, hi.policy_id, lo.policy_id, witness))
    return out


def _action_heads_equal(a: tuple[Action, ...], b: tuple[Action, ...]) -> bool:
    return a[0] == b[0]


def _detect_rule_conflicts(rules: Sequence[FlowRule]) -> list[Conflict]:
    out: list[Conflict] = []
    for i in range(len(rules)):
        for j in range(i + 1, len(rules)):
            r, s = rules[i], rules[j]
            if not specs_overlap(r.match, s.match):
                continue
            hi, lo = _ordered(r, s, r.priority, s.priority)
            witness = _spec_witness(hi.match, lo.match)
            if _action_heads_equal(r.actions, s.actions):
                if spec_contains(hi.match, lo.match) or spec_contains(lo.match, hi.match):
                    out.append(Conflict(ConflictKind.REDUNDANCY, hi.rule_id, lo.rule_id, witness))
                continue
            if spec_contains(hi.match, lo.match):
                kind = ConflictKind.SHADOWING
            elif spec_contains(lo.match, hi.match):
                kind = ConflictKind.GENERALIZATION
            else:
                kind = ConflictKind.CORRELATION
            out.append(Conflict(kind, hi.rule_id, lo.rule_id, witness))
    return out


# -- policy graph -------------------------------------------------------------


@dataclass(frozen=True)
class PathHop:
    switch: str
    in_port: int
    out_port: int


@dataclass
class PolicyEdge:
    """One policy's surviving intent, annotated per concrete host pair."""

    policy_id: str
    action: PolicyAction
    priority: int
    proto: Protocol | None
    dst_port: int | None
    stateful: bool
    src_group: frozenset[int]
    dst_group: frozenset[int]
    pair_paths: dict[tuple[int, int], tuple[PathHop, ...]] = field(default_factory=dict)
    pair_ingress: dict[tuple[int, int], str] = field(default_factory=dict)

    def covers(self, src: int, dst: int, proto: Protocol, port: int) -> bool:
        return (
            (src, dst) in self.pair_paths
            or (src, dst) in self.pair_ingress
        ) and (self.proto is None or self.proto is proto) and (
            self.dst_port is None or self.dst_port == port
        )


@dataclass
class PolicyGraph:
    """Host groups as nodes, resolved policy intents as edges."""

    nodes: list[frozenset[int]]
    edges: list[PolicyEdge]

    def effective_action(
        self, src: int, dst: int, proto: Protocol, port: int
    ) -> tuple[PolicyAction, str] | None:
        """Winner for one packet class: highest priority, deny over allow."""
        best: tuple[int, int, PolicyEdge] | None = None
        for edge in self.edges:
            if not edge.covers(src, dst, proto, port):
                continue
            rank = (edge.priority, 1 if edge.action is PolicyAction.DENY else 0)
            if best is None or rank > (best[0], best[1]):
                best = (rank[0], rank[1], edge)
        if best is None:
            return None
        return best[2].action, best[2].policy_id


def _resolve_pair_intents(intents: list[Policy]) -> list[Policy]:
    """Suppress intents that lose the whole pair under deny-wins resolution.

    A lower-priority intent fully covered by a differing higher-priority one
    can never take effect; at equal priority with overlap, deny wins and the
    allow is conservatively suppressed for the pair.
    """
    survivors: list[Policy] = []
    for p in intents:
        dead = False
        for q in intents:
            if q is p or p.action is q.action:
                continue
            if not _class_overlaps(p.proto, p.dst_port, q.proto, q.dst_port):
                continue
            if q.priority > p.priority and _class_covers(q.proto, q.dst_port, p.proto, p.dst_port):
                dead = True
                break
            if q.priority == p.priority and p.action is PolicyAction.ALLOW:
                dead = True
                break
        if not dead:
            survivors.append(p)
    return survivors


def build_policy_graph(policies: Sequence[Policy], topology: Topology) -> PolicyGraph:
    """Resolve policies against a topology into a conflict-free graph.

    Every allow edge is annotated with the shortest switch path (with port
    orientation) for each host pair it covers; deny edges record only the
    pair's ingress switch.  An allow pair with no path raises
    UnreachablePairError naming the pair.
    """
    # group intents by concrete ordered host pair for resolution
    by_pair: dict[tuple[int, int], list[Policy]] = {}
    for policy in policies:
        for src in sorted(policy.src_group):
            for dst in sorted(policy.dst_group):
                if src == dst:
                    continue
                by_pair.setdefault((src, dst), []).append(policy)
    surviving: dict[tuple[str, tuple[int, int]], Policy] = {}
    for pair, intents in by_pair.items():
        for policy in _resolve_pair_intents(intents):
            surviving[(policy.policy_id, pair)] = policy

    nodes: list[frozenset[int]] = []
    edges: list[PolicyEdge] = []
    for policy in policies:
        for group in (policy.src_group, policy.dst_group):
            if group not in nodes:
                nodes.append(group)
        edge = PolicyEdge(
            policy_id=policy.policy_id,
            action=policy.action,
            priority=policy.priority,
            proto=policy.proto,
            dst_port=policy.dst_port,
            stateful=policy.stateful,
            src_group=policy.src_group,
            dst_group=policy.dst_group,
        )
        for src in sorted(policy.src_group):
            for dst in sorted(policy.dst_group):
                pair = (src, dst)
                if surviving.get((policy.policy_id, pair)) is not policy:
                    continue
                src_host = topology.host_by_ip(src)
                dst_host = topology.host_by_ip(dst)
                if src_host is None or dst_host is None:
                    missing = ip_str(src if src_host is None else dst)
                    raise CompileError(
                        f"policy {policy.policy_id!r} references {missing}, not a fabric host"
                    )
                if policy.action is PolicyAction.DENY:
                    edge.pair_ingress[pair] = src_host.switch
                    continue
                path = topology.shortest_switch_path(src_host.switch, dst_host.switch)
                if path is None:
                    raise UnreachablePairError(
                        f"policy {policy.policy_id!r}: no path for pair "
                        f"{ip_str(src)} -> {ip_str(dst)}"
                    )
                edge.pair_paths[pair] = _orient(path, src_host, dst_host, topology)
        if edge.pair_paths or edge.pair_ingress:
            edges.append(edge)
    return PolicyGraph(nodes, edges)


def _orient(path: list[str], src_host: Host, dst_host: Host, topology: Topology) -> tuple[PathHop, ...]:
    hops = []
    for k, sw in enumerate(path):
        prev = path[k - 1] if k > 0 else src_host.name
        nxt = path[k + 1] if k + 1 < len(path) else dst_host.name
        hops.append(PathHop(sw, topology.port_to(sw, prev), topology.port_to(sw, nxt)))
    return tuple(hops)


# -- rule compilation ---------------------------------------------------------


def compile_to_flow_rules(graph: PolicyGraph) -> dict[str, list[FlowMod]]:
    """Per-switch FlowMod batches realizing the graph.

    Stateful allows emit the conntrack pipeline (untracked -> tracker,
    +new -> commit and forward, +est -> forward) on every path switch;
    stateless allows emit one forwarding rule per hop; denies emit one drop
    at the ingress.  Tables default to a packet-in miss policy, so no
    explicit fallback rule is compiled.

    A stateless allow whose class overlaps a stateful allow on the same pair
    is promoted to stateful: compiling both literally would leave a tracker
    rule and a direct forward competing for the same packets, an ambiguity
    the rule-level conflict check rejects.  Promotion forwards the same
    packets, just through the tracker.
    """
    stateful_classes: dict[tuple[int, int], list[tuple]] = {}
    for edge in graph.edges:
        if edge.stateful:
            for pair in edge.pair_paths:
                stateful_classes.setdefault(pair, []).append((edge.proto, edge.dst_port))

    def _compiles_stateful(edge: PolicyEdge, pair: tuple[int, int]) -> bool:
        if edge.stateful:
            return True
        return any(
            _class_overlaps(proto, port, edge.proto, edge.dst_port)
            for proto, port in stateful_classes.get(pair, ())
        )

    mods: dict[str, list[FlowMod]] = {}
    for edge in graph.edges:
        for pair in sorted(edge.pair_paths):
            src, dst = pair
            tag = f"{edge.policy_id}/{ip_str(src)}->{ip_str(dst)}"
            for hop in edge.pair_paths[pair]:
                common = dict(
                    ip_src=src,
                    ip_dst=dst,
                    protocol=edge.proto,
                    tp_dst=edge.dst_port,
                    in_port=hop.in_port,
                )
                if _compiles_stateful(edge, pair):
                    rules = [
                        FlowRule(
                            rule_id=f"{tag}/{hop.switch}/trk",
                            priority=edge.priority,
                            match=MatchSpec(ct_unset=frozenset({CtFlag.TRK}), **common),
                            actions=(Action.send_to_conntrack(),),
                        ),
                        FlowRule(
                            rule_id=f"{tag}/{hop.switch}/new",
                            priority=edge.priority,
                            match=MatchSpec(ct_set=frozenset({CtFlag.NEW}), **common),
                            actions=(Action.commit_and_output(hop.out_port),),
                        ),
                        FlowRule(
                            rule_id=f"{tag}/{hop.switch}/est",
                            priority=edge.priority,
                            match=MatchSpec(ct_set=frozenset({CtFlag.EST}), **common),
                            actions=(Action.output(hop.out_port),),
                        ),
                    ]
                else:
                    rules = [
                        FlowRule(
                            rule_id=f"{tag}/{hop.switch}/fwd",
                            priority=edge.priority,
                            match=MatchSpec(**common),
                            actions=(Action.output(hop.out_port),),
                        )
                    ]
                mods.setdefault(hop.switch, []).extend(FlowMod(FlowModOp.ADD, rule=r) for r in rules)
        for pair in sorted(edge.pair_ingress):
            src, dst = pair
            ingress = edge.pair_ingress[pair]
            rule = FlowRule(
                rule_id=f"{edge.policy_id}/{ip_str(src)}->{ip_str(dst)}/{ingress}/deny",
                priority=edge.priority,
                match=MatchSpec(ip_src=src, ip_dst=dst, protocol=edge.proto, tp_dst=edge.dst_port),
                actions=(Action.drop(),),
            )
            mods.setdefault(ingress, []).append(FlowMod(FlowModOp.ADD, rule=rule))
    return mods


# -- NIB -----------------------------------------------------------------------


class NibKeyError(KeyError):
    """Lookup of an absent NIB key."""


@dataclass(frozen=True)
class NibRecord:
    key: str
    value: bytes
    version: int


@dataclass
class Subscription:
    prefix: str
    callback: Callable[[NibRecord], None]
    active: bool = True

    def cancel(self) -> None:
        self.active = False


class Nib:
    """In-process key/value store with per-key versions and prefix watches.

    Single replica, synchronous notification: each put invokes every live
    watcher whose prefix matches, exactly once, in subscription order, so
    watchers observe per-key versions in strictly increasing order.
    """

    def __init__(self) -> None:
        self._records: dict[str, NibRecord] = {}
        self._subs: list[Subscription] = []

    def put(self, key: str, value: bytes) -> NibRecord:
        old = self._records.get(key)
        record = NibRecord(key, value, 1 if old is None else old.version + 1)
        self._records[key] = record
        for sub in list(self._subs):
            if sub.active and key.startswith(sub.prefix):
                sub.callback(record)
        return record

    def get(self, key: str) -> NibRecord:
        try:
            return self._records[key]
        except KeyError:
            raise NibKeyError(key) from None

    def watch(self, prefix: str, callback: Callable[[NibRecord], None]) -> Subscription:
        sub = Subscription(prefix, callback)
        self._subs.append(sub)
        return sub

    def keys(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self._records if k.startswith(prefix))

    def put_json(self, key: str, obj) -> NibRecord:
        return self.put(key, json.dumps(obj, sort_keys=True).encode())

    def get_json(self, key: str):
        return json.loads(self.get(key).value.decode())


# -- topology events -----------------------------------------------------------


class TopologyEventKind(Enum):
    PORT_UP = "port_up"
    PORT_DOWN = "port_down"
    SWITCH_JOIN = "switch_join"
    SWITCH_LEAVE = "switch_leave"
    HOST_ATTACH = "host_attach"


class TopologyEventError(ValueError):
    """An event referencing an element the topology does not have."""


@dataclass(frozen=True)
class TopologyEvent:
    kind: TopologyEventKind
    switch: str | None = None
    port: int | None = None
    host_name: str | None = None
    host_ip: int | None = None


class Controller:
    """Single logical controller: owns policies, compiles, publishes via NIB."""

    def __init__(self, topology: Topology, nib: Nib | None = None) -> None:
        self.topology = topology
        self.nib = nib or Nib()
        self.policies: list[Policy] = []
        self.graph: PolicyGraph | None = None
        self._published_rules: dict[str, str] = {}  # switch -> serialized rules

    def load_policies(self, policies: Iterable[Policy]) -> list[Conflict]:
        self.policies = list(policies)
        return detect_conflicts(self.policies)

    def compile(self) -> dict[str, list[FlowMod]]:
        self.graph = build_policy_graph(self.policies, self.topology)
        return compile_to_flow_rules(self.graph)

    def publish(self) -> list[str]:
        """Compile and push state into the NIB; returns switches whose rules changed."""
        compiled = self.compile()
        self.nib.put_json("/topology", self.topology.to_dict())
        for policy in self.policies:
            self.nib.put_json(f"/policies/{policy.policy_id}", policy.to_dict())
        changed: list[str] = []
        for switch in self.topology.switches:
            payload = [mod.to_dict() for mod in compiled.get(switch, [])]
            serialized = json.dumps(payload, sort_keys=True)
            if self._published_rules.get(switch) != serialized:
                self.nib.put_json(f"/rules/{switch}", payload)
                self._published_rules[switch] = serialized
                changed.append(switch)
        return changed

    def handle_topology_event(self, event: TopologyEvent) -> list[str]:
        """Apply one fabric change, then recompile and republish.

        Returns the switches whose rule sets changed.  Unknown elements are
        rejected with a diagnostic naming the element.
        """
        topo = self.topology
        kind = event.kind
        if kind in (TopologyEventKind.PORT_UP, TopologyEventKind.PORT_DOWN):
            if event.switch is None or event.port is None:
                raise TopologyEventError(f"{kind.value} requires switch and port")
            try:
                link = topo.link_at(event.switch, event.port)
            except TopologyError as exc:
                raise TopologyEventError(str(exc)) from None
            link.up = kind is TopologyEventKind.PORT_UP
        elif kind is TopologyEventKind.SWITCH_JOIN:
            if not event.switch:
                raise TopologyEventError("switch_join requires a switch id")
            try:
                topo.add_switch(event.switch)
            except TopologyError as exc:
                raise TopologyEventError(str(exc)) from None
        elif kind is TopologyEventKind.SWITCH_LEAVE:
            if not event.switch:
                raise TopologyEventError("switch_leave requires a switch id")
            try:
                topo.remove_switch(event.switch)
            except TopologyError as exc:
                raise TopologyEventError(str(exc)) from None
            self._published_rules.pop(event.switch, None)
        elif kind is TopologyEventKind.HOST_ATTACH:
            if not (event.host_name and event.switch and event.host_ip is not None):
                raise TopologyEventError("host_attach requires host name, ip and switch")
            try:
                topo.add_host(event.host_name, event.host_ip, event.switch)
            except TopologyError as exc:
                raise TopologyEventError(str(exc)) from None
        else:  # pragma: no cover - enum is closed
            raise TopologyEventError(f"unknown event kind {kind!r}")
        return self.publish()


def aggregate_stats(switch_reports: Sequence[dict]) -> dict:
    """Merge per-switch agent reports into one fabric snapshot keyed by switch."""
    switches = {}
    totals = {
        "decisions": 0,
        "mitigations": 0,
        "packet_in_allowed": 0,
        "packet_in_throttled": 0,
    }
    for report in switch_reports:
        switches[report["switch"]] = report
        totals["decisions"] += len(report.get("decisions", ()))
        totals["mitigations"] += len(report.get("mitigations", ()))
        totals["packet_in_allowed"] += report.get("packet_in_allowed", 0)
        totals["packet_in_throttled"] += report.get("packet_in_throttled", 0)
    return {"switches": dict(sorted(switches.items())), "totals": totals}
