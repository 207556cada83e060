"""Distributed-firewall fabric simulator.

A deterministic model of an OpenFlow-style network in which every switch
runs connection tracking and a local firewall agent: policies compile to
ct-aware flow rules, agents watch per-pair new/established ratios and
install drop rules against SYN floods, and a small NIB carries state
between the controller and the switches.
"""

from .conntrack import ConnEntry, ConnKey, CtConfig, CtEvent, CtTable, Direction, TcpState
from .control_plane import (
    Conflict,
    ConflictKind,
    Controller,
    Nib,
    Policy,
    PolicyAction,
    PolicyGraph,
    TopologyEvent,
    TopologyEventKind,
    aggregate_stats,
    build_policy_graph,
    compile_to_flow_rules,
    detect_conflicts,
)
from .core_model import (
    Action,
    ActionKind,
    CtFlag,
    CtState,
    FlowRule,
    MatchSpec,
    Packet,
    PacketHeader,
    Protocol,
    TcpFlag,
    frame_bytes,
    ip_str,
    parse_ip,
)
from .dfw_agent import Decision, DetectionConfig, DfwAgent, Mitigation, Verdict, evaluate_ratio
from .flow_table import FlowMod, FlowModOp, FlowTable, LookupResult, MissPolicy
from .topology import Host, Link, Topology, build_flat, build_tree

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Action",
    "ActionKind",
    "CtFlag",
    "CtState",
    "FlowRule",
    "MatchSpec",
    "Packet",
    "PacketHeader",
    "Protocol",
    "TcpFlag",
    "frame_bytes",
    "ip_str",
    "parse_ip",
    "FlowMod",
    "FlowModOp",
    "FlowTable",
    "LookupResult",
    "MissPolicy",
    "ConnEntry",
    "ConnKey",
    "CtConfig",
    "CtEvent",
    "CtTable",
    "Direction",
    "TcpState",
    "Decision",
    "DetectionConfig",
    "DfwAgent",
    "Mitigation",
    "Verdict",
    "evaluate_ratio",
    "Conflict",
    "ConflictKind",
    "Controller",
    "Nib",
    "Policy",
    "PolicyAction",
    "PolicyGraph",
    "TopologyEvent",
    "TopologyEventKind",
    "aggregate_stats",
    "build_policy_graph",
    "compile_to_flow_rules",
    "detect_conflicts",
    "Host",
    "Link",
    "Topology",
    "build_flat",
    "build_tree",
]
