"""Scenario files: topology + policies + traffic + knobs, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..conntrack import CtConfig
from ..control_plane import Policy, PolicyError
from ..dfw_agent import DetectionConfig
from ..topology import Topology, build_flat, build_tree
from .traffic import TrafficError, TrafficSpec, traffic_from_dict, traffic_to_dict

__all__ = ["FabricParams", "Scenario", "ScenarioError", "load_scenario"]


class ScenarioError(ValueError):
    """A scenario file that cannot be run, with a human-readable reason."""


@dataclass(frozen=True)
class FabricParams:
    """Data-plane cost model shared by every switch and link."""

    proc_rate_pps: float = 1_000_000.0
    ct_cost_ns: int = 200
    queue_capacity: int = 10_000
    bandwidth_bps: float = 1e9
    latency_s: float = 0.0001

    def __post_init__(self) -> None:
        if self.proc_rate_pps <= 0 or self.bandwidth_bps <= 0:
            raise ScenarioError("proc_rate_pps and bandwidth_bps must be positive")
        if self.ct_cost_ns < 0 or self.latency_s < 0:
            raise ScenarioError("ct_cost_ns and latency_s must be non-negative")
        if self.queue_capacity < 1:
            raise ScenarioError("queue_capacity must be >= 1")

    @property
    def service_ns(self) -> int:
        return int(1_000_000_000 / self.proc_rate_pps)


@dataclass
class Scenario:
    name: str
    topology_kind: str
    topology_params: dict
    policies: list[Policy]
    traffic: list[TrafficSpec]
    sdfw_enabled: bool = True
    seed: int = 0
    duration_s: float = 5.0
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    ct: CtConfig = field(default_factory=CtConfig)
    fabric: FabricParams = field(default_factory=FabricParams)

    def build_topology(self) -> Topology:
        if self.topology_kind == "flat":
            return build_flat(self.topology_params["hosts"])
        return build_tree(self.topology_params["depth"], self.topology_params["fanout"])

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "Scenario":
        if not isinstance(data, dict):
            raise ScenarioError("scenario root must be a JSON object")
        missing = [k for k in ("topology", "policies", "traffic") if k not in data]
        if missing:
            raise ScenarioError(f"scenario missing keys: {', '.join(missing)}")

        topo = data["topology"]
        if not isinstance(topo, dict) or "kind" not in topo:
            raise ScenarioError("topology must be an object with a 'kind'")
        kind = topo["kind"]
        if kind == "flat":
            if "hosts" not in topo:
                raise ScenarioError("flat topology needs 'hosts'")
            params = {"hosts": int(topo["hosts"])}
        elif kind == "tree":
            if "depth" not in topo or "fanout" not in topo:
                raise ScenarioError("tree topology needs 'depth' and 'fanout'")
            params = {"depth": int(topo["depth"]), "fanout": int(topo["fanout"])}
        else:
            raise ScenarioError(f"unknown topology kind {kind!r}")

        try:
            policies = [Policy.from_dict(p) for p in data["policies"]]
        except (PolicyError, KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"bad policy entry: {exc}") from exc
        seen_ids = set()
        for policy in policies:
            if policy.policy_id in seen_ids:
                raise ScenarioError(f"duplicate policy id {policy.policy_id!r}")
            seen_ids.add(policy.policy_id)

        try:
            traffic = [traffic_from_dict(t) for t in data["traffic"]]
        except TrafficError as exc:
            raise ScenarioError(str(exc)) from exc

        duration = float(data.get("duration_s", 5.0))
        if duration <= 0:
            raise ScenarioError("duration_s must be positive")

        try:
            detection = DetectionConfig(**data.get("detection", {}))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"bad detection config: {exc}") from exc
        try:
            ct = CtConfig(**data.get("conntrack", {}))
        except TypeError as exc:
            raise ScenarioError(f"bad conntrack config: {exc}") from exc
        try:
            fabric = FabricParams(**data.get("fabric", {}))
        except (TypeError, ScenarioError) as exc:
            raise ScenarioError(f"bad fabric config: {exc}") from exc

        return cls(
            name=data.get("name", name),
            topology_kind=kind,
            topology_params=params,
            policies=policies,
            traffic=traffic,
            sdfw_enabled=bool(data.get("sdfw_enabled", True)),
            seed=int(data.get("seed", 0)),
            duration_s=duration,
            detection=detection,
            ct=ct,
            fabric=fabric,
        )

    def describe(self) -> dict:
        """The scenario block embedded at the head of every report."""
        return {
            "name": self.name,
            "topology": {"kind": self.topology_kind, **self.topology_params},
            "sdfw_enabled": self.sdfw_enabled,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "policies": len(self.policies),
            "traffic": [traffic_to_dict(t) for t in self.traffic],
        }


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    return Scenario.from_dict(data, name=path.stem)
