"""Flow table semantics: priority order, stats accounting, mod handling."""

from __future__ import annotations

import random

import pytest

from dfwsim.core_model import (
    Action,
    CtFlag,
    CtState,
    FlowRule,
    MatchSpec,
    Protocol,
)
from dfwsim.flow_table import (
    FlowMod,
    FlowModError,
    FlowModOp,
    FlowTable,
    MissPolicy,
)
from tests.conftest import A, B, mk_pkt, run_table_trial

CT_NEW = CtState(frozenset({CtFlag.TRK, CtFlag.NEW}))
CT_EST = CtState(frozenset({CtFlag.TRK, CtFlag.EST}))


def _pair_match(**ct) -> MatchSpec:
    return MatchSpec(
        ip_src=A, ip_dst=B, protocol=Protocol.TCP, tp_dst=80, in_port=1, **ct
    )


def _stateful_rules() -> list[FlowRule]:
    """The three-stage permit pipeline a stateful allow compiles to."""
    return [
        FlowRule(
            rule_id="trk", priority=50,
            match=_pair_match(ct_unset=frozenset({CtFlag.TRK})),
            actions=(Action.send_to_conntrack(),),
        ),
        FlowRule(
            rule_id="new", priority=50,
            match=_pair_match(ct_set=frozenset({CtFlag.NEW})),
            actions=(Action.commit_and_output(2),),
        ),
        FlowRule(
            rule_id="est", priority=50,
            match=_pair_match(ct_set=frozenset({CtFlag.EST})),
            actions=(Action.output(2),),
        ),
    ]


def _install(table: FlowTable, rules) -> None:
    for rule in rules:
        table.apply_flow_mod(FlowMod(FlowModOp.ADD, rule=rule))


def test_stateful_pipeline_dispatch():
    table = FlowTable()
    _install(table, _stateful_rules())
    syn = mk_pkt()
    assert table.lookup(syn, None).rule_id == "trk"
    assert table.lookup(syn, CT_NEW).rule_id == "new"
    assert table.lookup(syn, CT_EST).rule_id == "est"
    # unrelated destination misses the whole pipeline
    assert table.lookup(mk_pkt(dst=A, src=B), None).is_miss


def test_syn_flood_counter_texture():
    # 1400 pure SYNs that never complete: every one lands on the +new rule,
    # the established rule never fires, bytes are 54 per minimal frame.
    table = FlowTable()
    _install(table, _stateful_rules())
    for i in range(1400):
        syn = mk_pkt(seq=100 + i)
        assert table.lookup(syn, None).rule_id == "trk"
        assert table.lookup(syn, CT_NEW).rule_id == "new"
    stats = {e.rule_id: e for e in table.read_stats()}
    assert stats["new"].n_packets == 1400
    assert stats["new"].n_bytes == 75600
    assert stats["est"].n_packets == 0
    assert stats["est"].n_bytes == 0
    assert "n_packets=1400, n_bytes=75600" in table.dump()


def test_higher_priority_drop_wins():
    table = FlowTable()
    _install(table, _stateful_rules())
    mit = FlowRule(
        rule_id="mit/a->b", priority=51,
        match=MatchSpec(ip_src=A, ip_dst=B, protocol=Protocol.TCP),
        actions=(Action.drop(),),
    )
    table.apply_flow_mod(FlowMod(FlowModOp.ADD, rule=mit))
    # every ct classification of the attacker pair now hits the drop rule
    for ct in (None, CT_NEW, CT_EST):
        assert table.lookup(mk_pkt(), ct).rule_id == "mit/a->b"
    # reverse direction is untouched
    assert table.lookup(mk_pkt(src=B, dst=A, dport=80), None).is_miss


def test_equal_priority_earlier_install_wins():
    table = FlowTable()
    first = FlowRule("first", 10, MatchSpec(ip_dst=B), (Action.output(1),))
    second = FlowRule("second", 10, MatchSpec(protocol=Protocol.TCP), (Action.output(2),))
    _install(table, [first, second])
    assert table.lookup(mk_pkt(), None).rule_id == "first"
    # replacing the winner reinstalls it after the runner-up
    table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("first2", 10, MatchSpec(ip_dst=B), (Action.output(3),)))
    )
    assert table.lookup(mk_pkt(), None).rule_id == "second"


def test_add_replaces_same_priority_and_match():
    table = FlowTable()
    rule = FlowRule("old", 5, MatchSpec(ip_dst=B), (Action.output(1),))
    table.apply_flow_mod(FlowMod(FlowModOp.ADD, rule=rule))
    table.lookup(mk_pkt(), None)
    assert table.get("old").stats.n_packets == 1
    result = table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("newer", 5, MatchSpec(ip_dst=B), (Action.drop(),)))
    )
    assert result.affected == ("old", "newer")
    assert len(table) == 1
    assert table.get("old") is None
    assert table.get("newer").stats.n_packets == 0


def test_add_duplicate_id_different_match_rejected():
    table = FlowTable()
    table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("r", 5, MatchSpec(ip_dst=B), (Action.output(1),)))
    )
    with pytest.raises(FlowModError):
        table.apply_flow_mod(
            FlowMod(FlowModOp.ADD, rule=FlowRule("r", 5, MatchSpec(ip_dst=A), (Action.output(1),)))
        )


def test_modify_rewrites_actions_keeps_stats():
    table = FlowTable()
    table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("r", 5, MatchSpec(ip_dst=B), (Action.output(1),)))
    )
    table.lookup(mk_pkt(payload=10), None)
    table.apply_flow_mod(
        FlowMod(FlowModOp.MODIFY, rule=FlowRule("x", 5, MatchSpec(ip_dst=B), (Action.drop(),)))
    )
    rule = table.get("r")
    assert rule.actions == (Action.drop(),)
    assert rule.stats.n_packets == 1
    assert rule.stats.n_bytes == 64
    # modify with no matching rule is a no-op
    result = table.apply_flow_mod(
        FlowMod(FlowModOp.MODIFY, rule=FlowRule("x", 9, MatchSpec(ip_dst=B), (Action.drop(),)))
    )
    assert result.affected == ()


def test_delete_by_selector():
    table = FlowTable()
    _install(
        table,
        [
            FlowRule("a", 5, MatchSpec(ip_dst=B), (Action.output(1),)),
            FlowRule("b", 7, MatchSpec(ip_dst=B), (Action.output(2),)),
            FlowRule("c", 5, MatchSpec(ip_dst=A), (Action.output(3),)),
        ],
    )
    result = table.apply_flow_mod(FlowMod(FlowModOp.DELETE, selector=MatchSpec(ip_dst=B)))
    assert set(result.affected) == {"a", "b"}
    assert len(table) == 1
    # priority-scoped delete only removes the exact priority
    _install(table, [FlowRule("d", 5, MatchSpec(ip_dst=A), (Action.output(1),))])
    # d replaced c (same priority and match); now scope a delete to prio 9
    result = table.apply_flow_mod(
        FlowMod(FlowModOp.DELETE, selector=MatchSpec(ip_dst=A), priority=9)
    )
    assert result.affected == ()
    assert len(table) == 1


def test_miss_and_lookup_counters():
    table = FlowTable(miss_policy=MissPolicy.PACKET_IN)
    assert table.miss_policy is MissPolicy.PACKET_IN
    table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("r", 5, MatchSpec(ip_dst=B), (Action.output(1),)))
    )
    table.lookup(mk_pkt(), None)
    table.lookup(mk_pkt(dst=A, src=B), None)
    table.lookup(mk_pkt(dst=A, src=B), None)
    assert (table.lookup_count, table.miss_count) == (3, 2)


def test_peek_charges_nothing():
    table = FlowTable()
    table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("r", 5, MatchSpec(ip_dst=B), (Action.output(1),)))
    )
    assert table.peek(mk_pkt(), None).rule_id == "r"
    assert table.peek(mk_pkt(dst=A, src=B), None) is None
    assert (table.lookup_count, table.miss_count) == (0, 0)
    assert table.get("r").stats.n_packets == 0


def test_read_stats_returns_snapshot():
    table = FlowTable()
    table.apply_flow_mod(
        FlowMod(FlowModOp.ADD, rule=FlowRule("r", 5, MatchSpec(ip_dst=B), (Action.output(1),)))
    )
    snap = table.read_stats()
    table.lookup(mk_pkt(), None)
    assert snap[0].n_packets == 0
    assert table.read_stats()[0].n_packets == 1


def test_mitigation_flow_mod_render():
    mod = FlowMod(
        FlowModOp.ADD,
        rule=FlowRule(
            rule_id="mit/10.0.3.102->10.0.3.103",
            priority=51,
            match=MatchSpec(ip_src=A, ip_dst=B, protocol=Protocol.TCP),
            actions=(Action.drop(),),
        ),
    )
    assert mod.render() == (
        "table=0, priority=51, nw_src=10.0.3.102,nw_dst=10.0.3.103,tcp actions=drop"
    )


def test_flow_mod_round_trip():
    mod = FlowMod(
        FlowModOp.ADD,
        rule=FlowRule("r", 51, MatchSpec(ip_src=A, protocol=Protocol.TCP), (Action.drop(),)),
    )
    again = FlowMod.from_dict(mod.to_dict())
    assert again.op is FlowModOp.ADD
    assert again.rule.match == mod.rule.match
    assert again.render() == mod.render()
    delete = FlowMod(FlowModOp.DELETE, selector=MatchSpec(ip_src=A), priority=51)
    assert FlowMod.from_dict(delete.to_dict()).render() == delete.render()


def test_flow_mod_requires_payload():
    with pytest.raises(FlowModError):
        FlowMod(FlowModOp.ADD)
    with pytest.raises(FlowModError):
        FlowMod(FlowModOp.DELETE)


def test_dump_lists_rules_in_lookup_order():
    table = FlowTable()
    _install(
        table,
        [
            FlowRule("low", 1, MatchSpec(ip_dst=B), (Action.output(1),)),
            FlowRule("high", 9, MatchSpec(ip_dst=A), (Action.output(2),)),
        ],
    )
    lines = table.dump().splitlines()
    assert "priority=9" in lines[0]
    assert "priority=1" in lines[1]


def test_randomized_equivalence_with_reference_table():
    rng = random.Random(1337)
    for _ in range(150):
        run_table_trial(rng, with_mods=True)
