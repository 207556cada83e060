"""Scenario-driven fabric simulation: traffic, switches, links, reports."""

from ..topology import Topology, build_flat, build_tree
from .engine import Simulation, run_scenario
from .metrics import MetricsReport, PairStats
from .pipeline import PipelineResult, PipelineVerdict, execute_pipeline
from .scenario import FabricParams, Scenario, ScenarioError, load_scenario
from .traffic import (
    BenignTcp,
    SynFlood,
    TableMissFlood,
    TrafficError,
    gen_syn_flood,
    gen_table_miss_flood,
)

__all__ = [
    "Topology",
    "build_flat",
    "build_tree",
    "Simulation",
    "run_scenario",
    "MetricsReport",
    "PairStats",
    "PipelineResult",
    "PipelineVerdict",
    "execute_pipeline",
    "FabricParams",
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "BenignTcp",
    "SynFlood",
    "TableMissFlood",
    "TrafficError",
    "gen_syn_flood",
    "gen_table_miss_flood",
]
