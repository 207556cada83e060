"""Command line entry points: run scenarios, lint policies, dump compiled rules."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .control_plane import CompileError, Controller, detect_conflicts
from .report import render_comparison, render_table, save_figures
from .simnet.engine import run_scenario
from .simnet.scenario import Scenario, ScenarioError, load_scenario
from .topology import build_flat, build_tree

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_COMPILE = 3
EXIT_RUNTIME = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfwsim",
        description="Simulate an SDN fabric whose switches run distributed stateful firewalls.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario and report metrics")
    run_p.add_argument("--scenario", required=True, help="scenario JSON file")
    run_p.add_argument("--out", help="write the JSON report here")
    run_p.add_argument("--format", choices=("table", "json"), default="table", help="stdout format")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--figures", action="store_true", help="render PNG figures next to --out")
    run_p.add_argument(
        "--compare",
        action="store_true",
        help="run the scenario twice, firewall on and off, and compare",
    )

    chk_p = sub.add_parser("check-policies", help="detect conflicts in a scenario's policy set")
    chk_p.add_argument("--scenario", required=True, help="scenario JSON file")

    comp_p = sub.add_parser("compile", help="compile policies and dump per-switch rules")
    comp_p.add_argument("--scenario", required=True, help="scenario JSON file")
    comp_p.add_argument(
        "--topology",
        help="override the scenario topology: flat:<hosts> or tree:<depth>,<fanout>",
    )
    comp_p.add_argument("--switch", help="only dump this switch")
    return parser


def _load(path: str) -> Scenario:
    return load_scenario(path)


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)

    report = run_scenario(scenario)
    baseline = None
    if args.compare:
        flipped = dataclasses.replace(scenario, sdfw_enabled=not scenario.sdfw_enabled)
        other = run_scenario(flipped)
        baseline = other if scenario.sdfw_enabled else report
        if not scenario.sdfw_enabled:
            report, baseline = other, report

    payload = report.to_dict()
    if baseline is not None:
        payload = {"sdfw_on": report.to_dict(), "sdfw_off": baseline.to_dict()}

    out_path = Path(args.out) if args.out else None
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(render_table(report))
        if baseline is not None:
            print()
            print(render_comparison(report, baseline))

    if args.figures:
        fig_dir = out_path.parent if out_path is not None else Path.cwd()
        stem = out_path.stem if out_path is not None else (scenario.name or "report")
        written = save_figures(report, fig_dir, stem, baseline=baseline)
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_check_policies(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    conflicts = detect_conflicts(scenario.policies)
    if not conflicts:
        print(f"{len(scenario.policies)} policies, no conflicts")
        return EXIT_OK
    for conflict in conflicts:
        print(conflict.render())
    print(f"{len(conflicts)} conflicts")
    return EXIT_COMPILE


def _parse_topology_arg(arg: str):
    kind, _, rest = arg.partition(":")
    try:
        if kind == "flat":
            return build_flat(int(rest))
        if kind == "tree":
            depth, fanout = rest.split(",")
            return build_tree(int(depth), int(fanout))
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"bad --topology {arg!r}: {exc}") from exc
    raise ScenarioError(f"bad --topology {arg!r}: expected flat:<hosts> or tree:<depth>,<fanout>")


def _cmd_compile(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    topology = _parse_topology_arg(args.topology) if args.topology else scenario.build_topology()
    controller = Controller(topology)
    controller.load_policies(scenario.policies)
    compiled = controller.compile()
    switches = [args.switch] if args.switch else topology.switches
    for sw in switches:
        if sw not in topology.switches:
            raise ScenarioError(f"unknown switch {sw!r}")
        mods = compiled.get(sw, [])
        print(f"switch {sw}: {len(mods)} rules")
        for mod in mods:
            print(f"  {mod.render()}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "check-policies":
            return _cmd_check_policies(args)
        return _cmd_compile(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CompileError as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_COMPILE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
