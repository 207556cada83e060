"""Run report: per-pair delivery metrics, detection timeline, disposition census."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from ..core_model import ip_str

__all__ = ["PairStats", "MetricsReport", "NS_PER_S"]

NS_PER_S = 1_000_000_000


@dataclass
class PairStats:
    """Delivery accounting for one (src, dst) address pair."""

    src_ip: int
    dst_ip: int
    packets_sent: int = 0
    packets_delivered: int = 0
    payload_bytes: int = 0
    first_send_ns: Optional[int] = None
    last_delivery_ns: Optional[int] = None
    latency_sum_ns: int = 0

    def record_send(self, ts_ns: int) -> None:
        self.packets_sent += 1
        if self.first_send_ns is None or ts_ns < self.first_send_ns:
            self.first_send_ns = ts_ns

    def record_delivery(self, sent_ns: int, delivered_ns: int, payload: int) -> None:
        self.packets_delivered += 1
        self.payload_bytes += payload
        self.latency_sum_ns += delivered_ns - sent_ns
        if self.last_delivery_ns is None or delivered_ns > self.last_delivery_ns:
            self.last_delivery_ns = delivered_ns

    @property
    def goodput_bps(self) -> float:
        """Delivered payload bits over the active interval of the pair."""
        if (
            self.payload_bytes == 0
            or self.first_send_ns is None
            or self.last_delivery_ns is None
            or self.last_delivery_ns <= self.first_send_ns
        ):
            return 0.0
        return self.payload_bytes * 8 * NS_PER_S / (self.last_delivery_ns - self.first_send_ns)

    @property
    def latency_mean_s(self) -> float:
        if self.packets_delivered == 0:
            return 0.0
        return self.latency_sum_ns / self.packets_delivered / NS_PER_S

    def to_dict(self) -> dict:
        return {
            "src": ip_str(self.src_ip),
            "dst": ip_str(self.dst_ip),
            "packets_sent": self.packets_sent,
            "packets_delivered": self.packets_delivered,
            "payload_bytes": self.payload_bytes,
            "goodput_bps": self.goodput_bps,
            "latency_mean_s": self.latency_mean_s,
            "first_send_s": None if self.first_send_ns is None else self.first_send_ns / NS_PER_S,
            "last_delivery_s": None if self.last_delivery_ns is None else self.last_delivery_ns / NS_PER_S,
        }


@dataclass
class MetricsReport:
    """Everything a finished run reports, JSON-serializable and deterministic."""

    scenario: dict = field(default_factory=dict)
    pairs: dict[str, dict] = field(default_factory=dict)
    flood: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    dispositions: dict[str, int] = field(default_factory=dict)
    per_switch: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "pairs": self.pairs,
            "flood": self.flood,
            "controller": self.controller,
            "dispositions": self.dispositions,
            "per_switch": self.per_switch,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def mean_goodput_bps(self) -> float:
        """Mean over pairs that actually delivered payload (the benign set)."""
        vals = [p["goodput_bps"] for p in self.pairs.values() if p["goodput_bps"] > 0]
        if not vals:
            return 0.0
        return sum(vals) / len(vals)

    @property
    def mean_latency_s(self) -> float:
        vals = [p["latency_mean_s"] for p in self.pairs.values() if p["packets_delivered"] > 0]
        if not vals:
            return 0.0
        return sum(vals) / len(vals)
