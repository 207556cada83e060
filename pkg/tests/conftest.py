"""Shared builders for packets and specs used across the suite."""

from __future__ import annotations

import random

import pytest

from dfwsim.core_model import (
    Action,
    CtFlag,
    CtState,
    FlowRule,
    MatchSpec,
    Packet,
    PacketHeader,
    Protocol,
    TcpFlag,
    parse_ip,
)
from dfwsim.flow_table import FlowMod, FlowModOp, FlowTable

A = parse_ip("10.0.3.102")
B = parse_ip("10.0.3.103")
C = parse_ip("10.0.3.104")

# Scoreboard lines collected by the acceptance tests; printed after the run
# because pytest captures fd-level output while each test executes.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria", sep="-")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

FLAGS = {
    "SYN": frozenset({TcpFlag.SYN}),
    "SYNACK": frozenset({TcpFlag.SYN, TcpFlag.ACK}),
    "ACK": frozenset({TcpFlag.ACK}),
    "FIN": frozenset({TcpFlag.FIN}),
    "RST": frozenset({TcpFlag.RST}),
}


def mk_pkt(
    src: int = A,
    dst: int = B,
    sport: int = 1024,
    dport: int = 80,
    flags: str = "SYN",
    proto: Protocol = Protocol.TCP,
    seq: int = 0,
    ack: int = 0,
    payload: int = 0,
    in_port: int = 1,
    eth_src: int = 1,
    eth_dst: int = 2,
    ts: int = 0,
) -> Packet:
    header = PacketHeader(in_port, eth_src, eth_dst, src, dst, sport, dport)
    tcp_flags = FLAGS[flags] if proto is Protocol.TCP else frozenset()
    return Packet(header, proto, tcp_flags, seq=seq, ack=ack, payload_len=payload, ts=ts)


@pytest.fixture
def pkt():
    return mk_pkt


# -- randomized flow-table trial ---------------------------------------------
#
# One trial builds the real table and the reference linear-scan table from
# the same random rule set, replays the same packets through both, and
# requires identical match results, counters, and final stats.

_TRIAL_IPS = (A, B, C, parse_ip("10.0.3.200"))
_TRIAL_PORTS = (80, 81, 82, 5001)
_TRIAL_IN_PORTS = (1, 2, 3)
_TRIAL_CT = (
    None,
    CtState(frozenset({CtFlag.TRK})),
    CtState(frozenset({CtFlag.TRK, CtFlag.NEW})),
    CtState(frozenset({CtFlag.TRK, CtFlag.EST})),
)
_TRIAL_CT_REQS = (
    (frozenset(), frozenset()),
    (frozenset(), frozenset({CtFlag.TRK})),
    (frozenset({CtFlag.TRK}), frozenset()),
    (frozenset({CtFlag.NEW}), frozenset()),
    (frozenset({CtFlag.EST}), frozenset()),
)


def random_spec(rng: random.Random) -> MatchSpec:
    def maybe(pool):
        return rng.choice(pool) if rng.random() < 0.5 else None

    ct_set, ct_unset = rng.choice(_TRIAL_CT_REQS)
    return MatchSpec(
        in_port=maybe(_TRIAL_IN_PORTS),
        ip_src=maybe(_TRIAL_IPS[:3]),
        ip_dst=maybe(_TRIAL_IPS[:3]),
        tp_src=maybe(_TRIAL_PORTS[:3]),
        tp_dst=maybe(_TRIAL_PORTS[:3]),
        protocol=maybe((Protocol.TCP, Protocol.UDP)),
        ct_set=ct_set,
        ct_unset=ct_unset,
    )


def random_packet(rng: random.Random) -> Packet:
    proto = rng.choice((Protocol.TCP, Protocol.UDP))
    return mk_pkt(
        src=rng.choice(_TRIAL_IPS),
        dst=rng.choice(_TRIAL_IPS),
        sport=rng.choice(_TRIAL_PORTS),
        dport=rng.choice(_TRIAL_PORTS),
        proto=proto,
        flags=rng.choice(("SYN", "ACK", "FIN")) if proto is Protocol.TCP else "SYN",
        payload=rng.choice((0, 100, 1460)),
        in_port=rng.choice(_TRIAL_IN_PORTS),
    )


def run_table_trial(rng: random.Random, with_mods: bool = False) -> None:
    """One randomized equivalence trial; raises AssertionError on divergence."""
    from tests.oracles import BruteForceTable

    table = FlowTable()
    oracle = BruteForceTable()
    installed: list[FlowRule] = []
    for i in range(rng.randint(1, 20)):
        # reuse an earlier (priority, match) sometimes to exercise replacement
        if installed and rng.random() < 0.15:
            donor = rng.choice(installed)
            priority, match = donor.priority, donor.match
        else:
            priority, match = rng.randint(0, 5), random_spec(rng)
        actions = (Action.drop(),) if rng.random() < 0.3 else (Action.output(rng.randint(1, 4)),)
        rule = FlowRule(rule_id=f"r{i}", priority=priority, match=match, actions=actions)
        table.apply_flow_mod(FlowMod(FlowModOp.ADD, rule=rule))
        oracle.add(f"r{i}", priority, match, actions)
        installed.append(rule)
    for _ in range(rng.randint(1, 200)):
        if with_mods and installed and rng.random() < 0.05:
            donor = rng.choice(installed)
            if rng.random() < 0.5:
                new_actions = (Action.output(rng.randint(5, 9)),)
                mod_rule = FlowRule(
                    rule_id="ignored", priority=donor.priority,
                    match=donor.match, actions=new_actions,
                )
                table.apply_flow_mod(FlowMod(FlowModOp.MODIFY, rule=mod_rule))
                oracle.modify(donor.priority, donor.match, new_actions)
            else:
                table.apply_flow_mod(FlowMod(FlowModOp.DELETE, selector=donor.match))
                oracle.delete(donor.match)
        packet = random_packet(rng)
        ct = rng.choice(_TRIAL_CT)
        got = table.lookup(packet, ct)
        expected = oracle.lookup(packet, ct)
        assert got.rule_id == expected, (packet, ct, got.rule_id, expected)
    got_stats = {e.rule_id: (e.n_packets, e.n_bytes) for e in table.read_stats()}
    assert got_stats == oracle.stats()
    assert table.lookup_count == oracle.lookup_count
    assert table.miss_count == oracle.miss_count
