"""Switch-embedded firewall agent: detection, mitigation, packet-in guard.

The agent owns no packets.  It reads the ct-discriminated permit rules of
its switch's flow table on a fixed tick, window-scopes the counters per
(src, dst) pair, and compares fresh-connection volume against answered
traffic.  A pair whose +new count clears the floor while +est stays silent
(or the ratio clears the threshold) gets a drop rule one priority level
above its permit rules.  A per-source token bucket guards the switch's
packet-in channel against table-miss floods independently of the detector.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .conntrack import CtEvent, CtTable
from .core_model import Action, FlowRule, MatchSpec, Protocol, CtFlag, ip_str
from .flow_table import FlowMod, FlowModOp, FlowTable

__all__ = [
    "DetectionConfig",
    "Verdict",
    "Decision",
    "MitigationKind",
    "Mitigation",
    "DfwAgent",
    "evaluate_ratio",
]

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class DetectionConfig:
    """Detector and guard tuning.

    delta_threshold is the new:est ratio at which a pair is flagged, subject
    to min_new_packets as an absolute floor so quiet pairs never trip on a
    division artifact.
    """

    delta_threshold: float = 10.0
    min_new_packets: int = 100
    eval_interval_s: float = 1.0
    window_s: float = 5.0
    packet_in_rate_limit: float = 50.0
    packet_in_burst: float | None = None  # defaults to one second of rate
    cool_down_s: float = 30.0

    def __post_init__(self) -> None:
        if self.delta_threshold <= 0:
            raise ValueError("delta_threshold must be > 0")
        if self.min_new_packets < 1:
            raise ValueError("min_new_packets must be >= 1")
        if self.eval_interval_s <= 0 or self.window_s <= 0:
            raise ValueError("eval_interval_s and window_s must be > 0")
        if self.packet_in_rate_limit <= 0:
            raise ValueError("packet_in_rate_limit must be > 0")

    @property
    def burst(self) -> float:
        return self.packet_in_rate_limit if self.packet_in_burst is None else self.packet_in_burst


class Verdict(Enum):
    BENIGN = "BENIGN"
    SYN_FLOOD = "SYN_FLOOD"
    SATURATION_FLOOD = "SATURATION_FLOOD"


def evaluate_ratio(new_packets: int, est_packets: int, config: DetectionConfig) -> Verdict:
    """Classify one pair's windowed counters.

    Requires new_packets to clear the floor; beyond that, zero answered
    packets or new/est >= delta_threshold (boundary inclusive) is a flood.
    """
    if new_packets < config.min_new_packets:
        return Verdict.BENIGN
    if est_packets == 0:
        return Verdict.SYN_FLOOD
    if new_packets / est_packets >= config.delta_threshold:
        return Verdict.SYN_FLOOD
    return Verdict.BENIGN


@dataclass(frozen=True)
class Decision:
    """One detector outcome with the evidence that produced it."""

    ts: int
    switch_id: str
    verdict: Verdict
    src: int
    dst: int | None
    new_packets: int
    est_packets: int
    ratio: float

    def render(self) -> str:
        dst = ip_str(self.dst) if self.dst is not None else "*"
        ratio = "inf" if math.isinf(self.ratio) else f"{self.ratio:.2f}"
        return (
            f"ts={self.ts / NS_PER_S:.6f} switch={self.switch_id} verdict={self.verdict.value}"
            f" src={ip_str(self.src)} dst={dst}"
            f" new={self.new_packets} est={self.est_packets} ratio={ratio}"
        )

    def to_dict(self) -> dict:
        return {
            "ts_s": round(self.ts / NS_PER_S, 9),
            "switch": self.switch_id,
            "verdict": self.verdict.value,
            "src": ip_str(self.src),
            "dst": ip_str(self.dst) if self.dst is not None else None,
            "new_packets": self.new_packets,
            "est_packets": self.est_packets,
            "ratio": "inf" if math.isinf(self.ratio) else round(self.ratio, 4),
        }


class MitigationKind(Enum):
    DROP = "drop"
    RATE_LIMIT = "rate_limit"  # reserved
    HONEYPOT_REDIRECT = "honeypot_redirect"  # reserved


@dataclass(frozen=True)
class Mitigation:
    kind: MitigationKind
    switch_id: str
    src: int
    dst: int
    flow_mod: FlowMod
    installed_at: int
    rule_id: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "switch": self.switch_id,
            "src": ip_str(self.src),
            "dst": ip_str(self.dst),
            "rule_id": self.rule_id,
            "installed_at_s": round(self.installed_at / NS_PER_S, 9),
            "flow_mod": self.flow_mod.render(),
        }


MITIGATION_RULE_PREFIX = "mit/"


@dataclass
class _PairCounters:
    new_packets: int = 0
    est_packets: int = 0
    permit_priority: int = 0


class DfwAgent:
    """One switch's firewall brain. Single-threaded, driven by on_tick."""

    def __init__(
        self,
        switch_id: str,
        flow_table: FlowTable,
        ct_table: CtTable | None = None,
        config: DetectionConfig | None = None,
        publisher: Callable[[str, dict], None] | None = None,
    ) -> None:
        self.switch_id = switch_id
        self.flow_table = flow_table
        self.ct_table = ct_table
        self.config = config or DetectionConfig()
        self.publisher = publisher
        if ct_table is not None:
            ct_table.subscribe(self.on_ct_event)
        self.ct_event_counts: Counter = Counter()
        self.decisions: list[Decision] = []
        self.decision_log: list[str] = []
        self.active_mitigations: dict[tuple[int, int], Mitigation] = {}
        self.withdrawn: list[Mitigation] = []
        self._history: dict[tuple[int, int], deque] = {}
        self._last_flood: dict[tuple[int, int], int] = {}
        # packet-in guard state: per-source (tokens, last refill time)
        self._buckets: dict[int, list] = {}
        self._throttling: set[int] = set()
        self.packet_in_allowed: Counter = Counter()
        self.packet_in_throttled: Counter = Counter()

    # -- ct listener -----------------------------------------------------

    def on_ct_event(self, event: CtEvent) -> None:
        self.ct_event_counts[event.kind] += 1

    # -- stats scan ------------------------------------------------------

    def pair_counters(self) -> dict[tuple[int, int], _PairCounters]:
        """Cumulative +new/+est packet counts per fully-specified (src, dst) pair.

        Only ct-discriminated permit rules with exact endpoints participate;
        mitigation drop rules carry no ct requirement and stay invisible here.
        """
        pairs: dict[tuple[int, int], _PairCounters] = {}
        for entry in self.flow_table.read_stats():
            match = entry.match
            if match.ip_src is None or match.ip_dst is None:
                continue
            if CtFlag.NEW in match.ct_set:
                slot = pairs.setdefault((match.ip_src, match.ip_dst), _PairCounters())
                slot.new_packets += entry.n_packets
                slot.permit_priority = max(slot.permit_priority, entry.priority)
            elif CtFlag.EST in match.ct_set:
                slot = pairs.setdefault((match.ip_src, match.ip_dst), _PairCounters())
                slot.est_packets += entry.n_packets
                slot.permit_priority = max(slot.permit_priority, entry.priority)
        return pairs

    def _windowed(self, pair: tuple[int, int], now: int, new_cum: int, est_cum: int) -> tuple[int, int]:
        """Counter growth over the detection window ending at now."""
        window_ns = int(self.config.window_s * NS_PER_S)
        hist = self._history.setdefault(pair, deque())
        base_new = base_est = 0
        for ts, n, e in hist:
            if ts <= now - window_ns:
                base_new, base_est = n, e
            else:
                break
        hist.append((now, new_cum, est_cum))
        while len(hist) >= 2 and hist[1][0] <= now - window_ns:
            hist.popleft()
        return new_cum - base_new, est_cum - base_est

    # -- detection tick ----------------------------------------------------

    def on_tick(self, now: int) -> list[Mitigation]:
        """Evaluate every tracked pair; install drops for flooding pairs.

        Idempotent per pair: while a mitigation is active the pair is only
        watched for cool-down, so an ongoing flood yields exactly one
        Decision and one installed rule.
        """
        installed: list[Mitigation] = []
        counters = self.pair_counters()
        for pair in sorted(counters):
            slot = counters[pair]
            w_new, w_est = self._windowed(pair, now, slot.new_packets, slot.est_packets)
            verdict = evaluate_ratio(w_new, w_est, self.config)
            if pair in self.active_mitigations:
                if verdict is Verdict.SYN_FLOOD:
                    self._last_flood[pair] = now
                else:
                    self.withdraw_mitigation(self.active_mitigations[pair], now)
                continue
            if verdict is Verdict.SYN_FLOOD:
                installed.append(self._install_drop(pair, now, w_new, w_est, slot.permit_priority))
        return installed

    def _install_drop(
        self, pair: tuple[int, int], now: int, w_new: int, w_est: int, permit_priority: int
    ) -> Mitigation:
        src, dst = pair
        ratio = math.inf if w_est == 0 else w_new / w_est
        decision = Decision(now, self.switch_id, Verdict.SYN_FLOOD, src, dst, w_new, w_est, ratio)
        self._record_decision(decision)
        rule = FlowRule(
            rule_id=f"{MITIGATION_RULE_PREFIX}{ip_str(src)}->{ip_str(dst)}",
            priority=permit_priority + 1,
            match=MatchSpec(ip_src=src, ip_dst=dst, protocol=Protocol.TCP),
            actions=(Action.drop(),),
        )
        mod = FlowMod(FlowModOp.ADD, rule=rule)
        self.flow_table.apply_flow_mod(mod, now)
        mitigation = Mitigation(MitigationKind.DROP, self.switch_id, src, dst, mod, now, rule.rule_id)
        self.active_mitigations[pair] = mitigation
        self._last_flood[pair] = now
        if self.publisher is not None:
            self.publisher("mitigation", mitigation.to_dict())
        return mitigation

    def withdraw_mitigation(self, mitigation: Mitigation, now: int) -> FlowMod | None:
        """Remove an active mitigation after its pair stayed benign through cool-down.

        Returns the Delete that was applied, or None when the mitigation is
        not active or the cool-down has not elapsed (both no-ops).
        """
        pair = (mitigation.src, mitigation.dst)
        if self.active_mitigations.get(pair) is not mitigation:
            return None
        cool_down_ns = int(self.config.cool_down_s * NS_PER_S)
        if now - self._last_flood.get(pair, mitigation.installed_at) < cool_down_ns:
            return None
        assert mitigation.flow_mod.rule is not None
        mod = FlowMod(
            FlowModOp.DELETE,
            selector=mitigation.flow_mod.rule.match,
            priority=mitigation.flow_mod.rule.priority,
        )
        self.flow_table.apply_flow_mod(mod, now)
        del self.active_mitigations[pair]
        self.withdrawn.append(mitigation)
        return mod

    def mitigation_rule_ids(self) -> set[str]:
        return {m.rule_id for m in self.active_mitigations.values()}

    # -- packet-in guard -----------------------------------------------------

    def packet_in_guard(self, src: int, now: int) -> bool:
        """Token-bucket admission for one table-miss packet_in from src.

        True lets the miss through to the controller; False means the switch
        drops it locally.  The first throttle of an episode records a
        SaturationFlood decision for the source; the episode ends only once
        the bucket refills completely, so a sustained flood whose trickle of
        refilled tokens lets the odd packet through still counts as one.
        """
        cfg = self.config
        bucket = self._buckets.get(src)
        if bucket is None:
            bucket = self._buckets[src] = [cfg.burst, now]
        tokens, last = bucket
        tokens = min(cfg.burst, tokens + (now - last) / NS_PER_S * cfg.packet_in_rate_limit)
        if tokens >= 1.0:
            bucket[0] = tokens - 1.0
            bucket[1] = now
            self.packet_in_allowed[src] += 1
            if tokens >= cfg.burst:
                self._throttling.discard(src)
            return True
        bucket[0] = tokens
        bucket[1] = now
        self.packet_in_throttled[src] += 1
        if src not in self._throttling:
            self._throttling.add(src)
            seen = self.packet_in_allowed[src] + self.packet_in_throttled[src]
            decision = Decision(now, self.switch_id, Verdict.SATURATION_FLOOD, src, None, seen, 0, math.inf)
            self._record_decision(decision)
        return False

    def _record_decision(self, decision: Decision) -> None:
        self.decisions.append(decision)
        self.decision_log.append(decision.render())
        if self.publisher is not None:
            self.publisher("decision", decision.to_dict())

    # -- report ----------------------------------------------------------------

    def report(self) -> dict:
        """Everything the control plane aggregates for this switch."""
        return {
            "switch": self.switch_id,
            "decisions": [d.to_dict() for d in self.decisions],
            "mitigations": [m.to_dict() for m in self.active_mitigations.values()]
            + [m.to_dict() for m in self.withdrawn],
            "packet_in_allowed": sum(self.packet_in_allowed.values()),
            "packet_in_throttled": sum(self.packet_in_throttled.values()),
        }
