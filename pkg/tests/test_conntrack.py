"""Connection tracker: state machine vs literal oracle, classification, aging."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfwsim.conntrack import (
    ConnKey,
    CtConfig,
    CtEventKind,
    CtTable,
    Direction,
    TcpState,
    UnknownConnError,
    tcp_transition,
)
from dfwsim.core_model import CtFlag, Protocol
from tests.conftest import A, B, C, FLAGS, mk_pkt
from tests.oracles import SYMBOLS, TCP_TRANSITIONS, oracle_final_state

NS = 1_000_000_000

STEPS = [(sym, d) for sym in SYMBOLS for d in ("orig", "reply")]
_STEP_ARGS = {
    (sym, d): (FLAGS[sym], Direction.ORIG if d == "orig" else Direction.REPLY)
    for sym, d in STEPS
}

# packet per step, oriented so header direction matches the claimed one
_STEP_PKTS = {
    (sym, d): (
        mk_pkt(flags=sym)
        if d == "orig"
        else mk_pkt(src=B, dst=A, sport=80, dport=1024, flags=sym)
    )
    for sym, d in STEPS
}

# shortest packet recipe that parks a fresh connection in each state
_STATE_RECIPES = {
    "CLOSED": (),
    "SYN_SENT": (("SYN", "orig"),),
    "SYN_RECV": (("SYN", "orig"), ("SYNACK", "reply")),
    "ESTABLISHED": (("SYN", "orig"), ("SYNACK", "reply"), ("ACK", "orig")),
    "CLOSING": (("SYN", "orig"), ("SYNACK", "reply"), ("ACK", "orig"), ("FIN", "orig")),
}


def _seeded_table() -> tuple[CtTable, ConnKey]:
    """A table holding one committed A->B entry still in CLOSED."""
    ct = CtTable()
    neutral = mk_pkt(flags="ACK")  # no-op transition from CLOSED
    ct.classify(neutral)
    event = ct.commit_packet(neutral)
    return ct, event.key


def _entry_in_state(state_name: str) -> tuple[CtTable, ConnKey]:
    ct, key = _seeded_table()
    for step in _STATE_RECIPES[state_name]:
        flags, direction = _STEP_ARGS[step]
        ct.advance_state(key, _STEP_PKTS[step], direction)
    assert ct.get(key).tcp_state.value == state_name
    return ct, key


def transition_sequences_agree(max_len: int = 5) -> int:
    """Fold every flag sequence through the machine and the literal table.

    Returns the number of sequences checked; raises on any divergence.
    """
    checked = 0
    for length in range(0, max_len + 1):
        for seq in itertools.product(STEPS, repeat=length):
            state = TcpState.CLOSED
            expected = "CLOSED"
            for step in seq:
                flags, direction = _STEP_ARGS[step]
                state = tcp_transition(state, flags, direction)
                expected = TCP_TRANSITIONS[(expected, step[0], step[1])]
            assert state.value == expected, (seq, state.value, expected)
            checked += 1
    return checked


def advance_state_applies_transition() -> int:
    """From every state, every (symbol, direction) lands where the oracle says."""
    checked = 0
    for state_name in _STATE_RECIPES:
        for sym, d in STEPS:
            ct, key = _entry_in_state(state_name)
            flags, direction = _STEP_ARGS[(sym, d)]
            old, new = ct.advance_state(key, _STEP_PKTS[(sym, d)], direction)
            assert old.value == state_name
            assert new.value == TCP_TRANSITIONS[(state_name, sym, d)], (state_name, sym, d)
            assert ct.get(key).tcp_state is new
            checked += 1
    return checked


def sampled_entry_folds_agree(n: int, seed: int = 0) -> None:
    """Random sequences driven through real table entries end-to-end."""
    rng = random.Random(seed)
    for _ in range(n):
        seq = [rng.choice(STEPS) for _ in range(rng.randint(0, 5))]
        ct, key = _seeded_table()
        for step in seq:
            flags, direction = _STEP_ARGS[step]
            ct.advance_state(key, _STEP_PKTS[step], direction)
        assert ct.get(key).tcp_state.value == oracle_final_state(seq)


def test_transition_table_exhaustive_short_sequences():
    assert transition_sequences_agree(max_len=4) == 1 + 10 + 100 + 1000 + 10000


def test_advance_state_matches_transition_function_everywhere():
    assert advance_state_applies_transition() == 50


def test_entry_folds_match_oracle_on_random_sequences():
    sampled_entry_folds_agree(300, seed=42)


# -- classification ------------------------------------------------------------


def test_handshake_classification_sequence():
    ct = CtTable()
    syn = mk_pkt(flags="SYN", seq=0)
    assert ct.classify(syn).flags == frozenset({CtFlag.TRK, CtFlag.NEW})
    ct.commit_packet(syn)
    ct.end_pass()
    synack = mk_pkt(src=B, dst=A, sport=80, dport=1024, flags="SYNACK", seq=100, ack=1)
    assert ct.classify(synack).flags == frozenset({CtFlag.TRK, CtFlag.EST})
    ack = mk_pkt(flags="ACK", seq=1, ack=101)
    assert ct.classify(ack).flags == frozenset({CtFlag.TRK, CtFlag.EST})
    data = mk_pkt(flags="ACK", seq=1, ack=101, payload=1460)
    assert ct.classify(data).flags == frozenset({CtFlag.TRK, CtFlag.EST})
    assert ct.get(ConnKey(0, Protocol.TCP, A, B, 1024, 80)).tcp_state is TcpState.ESTABLISHED


def test_retransmitted_syns_stay_new():
    # A half-open connection never answers, so every retransmitted SYN on the
    # committed entry still classifies +new and lands on the same entry.
    ct = CtTable()
    first = mk_pkt(flags="SYN", seq=100)
    assert CtFlag.NEW in ct.classify(first).flags
    ct.commit_packet(first)
    ct.end_pass()
    for i in range(1, 199):
        state = ct.classify(mk_pkt(flags="SYN", seq=100 + i))
        assert state.flags == frozenset({CtFlag.TRK, CtFlag.NEW})
        ct.end_pass()
    assert len(ct) == 1
    entry = ct.get(ConnKey(0, Protocol.TCP, A, B, 1024, 80))
    assert entry.tcp_state is TcpState.SYN_SENT
    assert entry.orig_packets == 199


def test_uncommitted_entry_discarded_at_end_of_pass():
    ct = CtTable()
    events = []
    ct.subscribe(events.append)
    ct.classify(mk_pkt(flags="SYN"))
    ct.end_pass()
    assert len(ct) == 0
    # the tuple is forgotten: next packet opens a brand new tentative entry
    ct.classify(mk_pkt(flags="SYN"))
    kinds = [e.kind for e in events]
    assert kinds == [
        CtEventKind.NEW_CONN,
        CtEventKind.STATE_CHANGE,
        CtEventKind.NEW_CONN,
        CtEventKind.STATE_CHANGE,
    ]


def test_commit_is_idempotent_and_unknown_raises():
    ct = CtTable()
    syn = mk_pkt(flags="SYN")
    ct.classify(syn)
    first = ct.commit_packet(syn)
    assert first is not None and first.kind is CtEventKind.COMMITTED
    assert ct.commit_packet(syn) is None
    with pytest.raises(UnknownConnError):
        ct.commit(ConnKey(0, Protocol.TCP, A, C, 9, 9))


def test_direction_normalization():
    ct = CtTable()
    fwd = mk_pkt(flags="SYN")
    ct.classify(fwd)
    rev = mk_pkt(src=B, dst=A, sport=80, dport=1024, flags="SYNACK")
    key_fwd, dir_fwd = ct.conn_key(fwd)
    key_rev, dir_rev = ct.conn_key(rev)
    assert key_fwd == key_rev
    assert (dir_fwd, dir_rev) == (Direction.ORIG, Direction.REPLY)


def test_zone_isolation():
    ct = CtTable()
    syn = mk_pkt(flags="SYN")
    ct.classify(syn, zone=0)
    ct.commit_packet(syn, zone=0)
    ct.classify(syn, zone=1)
    ct.commit_packet(syn, zone=1)
    key0 = ConnKey(0, Protocol.TCP, A, B, 1024, 80)
    key1 = ConnKey(1, Protocol.TCP, A, B, 1024, 80)
    ct.advance_state(key0, mk_pkt(src=B, dst=A, sport=80, dport=1024, flags="SYNACK"), Direction.REPLY)
    assert ct.get(key0).tcp_state is TcpState.SYN_RECV
    assert ct.get(key1).tcp_state is TcpState.SYN_SENT


def test_udp_two_state_tracking():
    ct = CtTable()
    query = mk_pkt(dport=53, proto=Protocol.UDP)
    assert CtFlag.NEW in ct.classify(query).flags
    ct.commit_packet(query)
    ct.end_pass()
    # a second unanswered datagram is still new
    assert CtFlag.NEW in ct.classify(query).flags
    reply = mk_pkt(src=B, dst=A, sport=53, dport=1024, proto=Protocol.UDP)
    assert CtFlag.EST in ct.classify(reply).flags
    # once answered, both directions ride established
    assert CtFlag.EST in ct.classify(query).flags


# -- handshake reachability property -------------------------------------------


@given(st.lists(st.sampled_from(STEPS), max_size=8))
@settings(max_examples=300)
def test_established_requires_ordered_handshake(seq):
    state = TcpState.CLOSED
    reached = False
    for step in seq:
        flags, direction = _STEP_ARGS[step]
        state = tcp_transition(state, flags, direction)
        if state is TcpState.ESTABLISHED:
            reached = True
    if reached:
        pattern = (("SYN", "orig"), ("SYNACK", "reply"), ("ACK", "orig"))
        it = iter(seq)
        assert all(wanted in it for wanted in pattern)


def test_clean_handshake_establishes_and_rst_interrupts():
    clean = [("SYN", "orig"), ("SYNACK", "reply"), ("ACK", "orig")]
    assert oracle_final_state(clean) == "ESTABLISHED"
    interrupted = [("SYN", "orig"), ("SYNACK", "reply"), ("RST", "orig"), ("ACK", "orig")]
    assert oracle_final_state(interrupted) == "CLOSED"


# -- aging -----------------------------------------------------------------------


def _committed_entry(ct: CtTable, steps, sport=1024) -> ConnKey:
    first = mk_pkt(flags="SYN", sport=sport)
    ct.classify(first, now=0)
    ct.commit_packet(first, now=0)
    ct.end_pass()
    key = ConnKey(0, Protocol.TCP, A, B, sport, 80)
    for sym, d in steps:
        flags, direction = _STEP_ARGS[(sym, d)]
        pkt = (
            mk_pkt(flags=sym, sport=sport)
            if d == "orig"
            else mk_pkt(src=B, dst=A, sport=80, dport=sport, flags=sym)
        )
        ct.advance_state(key, pkt, direction, now=0)
    return key


def test_expire_half_open_after_syn_timeout():
    ct = CtTable()
    key = _committed_entry(ct, [])
    assert ct.get(key).tcp_state is TcpState.SYN_SENT
    assert ct.expire(now=29 * NS) == []
    events = ct.expire(now=31 * NS)
    assert [e.kind for e in events] == [CtEventKind.EXPIRED]
    assert events[0].old_state is TcpState.SYN_SENT
    assert ct.get(key) is None


def test_established_survives_syn_timeout():
    ct = CtTable()
    key = _committed_entry(ct, [("SYNACK", "reply"), ("ACK", "orig")])
    assert ct.expire(now=31 * NS) == []
    assert ct.get(key) is not None
    assert len(ct.expire(now=601 * NS)) == 1


def test_closing_and_udp_timeouts():
    ct = CtTable()
    key = _committed_entry(ct, [("SYNACK", "reply"), ("ACK", "orig"), ("FIN", "orig")])
    assert ct.get(key).tcp_state is TcpState.CLOSING
    assert len(ct.expire(now=11 * NS)) == 1
    udp = mk_pkt(proto=Protocol.UDP)
    ct.classify(udp, now=0)
    ct.commit_packet(udp, now=0)
    assert ct.expire(now=59 * NS) == []
    assert len(ct.expire(now=61 * NS)) == 1


def test_timeouts_configurable():
    ct = CtTable(CtConfig(syn_timeout_s=2.0))
    _committed_entry(ct, [])
    assert len(ct.expire(now=3 * NS)) == 1


# -- reporting -------------------------------------------------------------------


def _flood(ct: CtTable, count: int, now: int = 0) -> None:
    for i in range(count):
        syn = mk_pkt(flags="SYN", sport=2000 + i, ts=now)
        ct.classify(syn, now=now)
        ct.commit_packet(syn, now=now)
        ct.end_pass()


def _handshake(ct: CtTable, sport: int, now: int = 0) -> None:
    _committed_entry(ct, [("SYNACK", "reply"), ("ACK", "orig")], sport=sport)


def test_half_open_stats_counts():
    ct = CtTable()
    _flood(ct, 200)
    stats = ct.half_open_stats(B, window_ns=5 * NS, now=0)
    assert (stats.half_open, stats.established) == (200, 0)

    ct = CtTable()
    _handshake(ct, sport=1024)
    stats = ct.half_open_stats(B, window_ns=5 * NS, now=0)
    assert (stats.half_open, stats.established) == (0, 1)

    ct = CtTable()
    for i in range(5):
        _handshake(ct, sport=3000 + i)
    _flood(ct, 10)
    stats = ct.half_open_stats(B, window_ns=5 * NS, now=0)
    assert (stats.half_open, stats.established) == (10, 5)


def test_half_open_stats_window_and_dst_scoping():
    ct = CtTable()
    _flood(ct, 3, now=0)
    stats = ct.half_open_stats(B, window_ns=5 * NS, now=10 * NS)
    assert stats.half_open == 0  # created before the window
    stats = ct.half_open_stats(C, window_ns=5 * NS, now=0)
    assert (stats.half_open, stats.established) == (0, 0)


def test_dump_line_shape():
    ct = CtTable()
    _handshake(ct, sport=1024)
    line = ct.dump(now=NS)
    assert line == (
        "zone=0 proto=tcp src=10.0.3.102:1024 dst=10.0.3.103:80"
        " state=ESTABLISHED committed=1 age=1.000s"
    )


def test_event_stream_for_handshake():
    ct = CtTable()
    events = []
    ct.subscribe(events.append)
    syn = mk_pkt(flags="SYN")
    ct.classify(syn, now=0)
    ct.commit_packet(syn, now=0)
    ct.end_pass()
    ct.classify(mk_pkt(src=B, dst=A, sport=80, dport=1024, flags="SYNACK"), now=1)
    ct.classify(mk_pkt(flags="ACK"), now=2)
    kinds = [e.kind for e in events]
    assert kinds == [
        CtEventKind.NEW_CONN,
        CtEventKind.STATE_CHANGE,  # CLOSED -> SYN_SENT
        CtEventKind.COMMITTED,
        CtEventKind.STATE_CHANGE,  # SYN_SENT -> SYN_RECV
        CtEventKind.STATE_CHANGE,  # SYN_RECV -> ESTABLISHED
    ]
    assert [e.ts for e in events] == sorted(e.ts for e in events)
    changes = [e for e in events if e.kind is CtEventKind.STATE_CHANGE]
    assert (changes[-1].old_state, changes[-1].new_state) == (
        TcpState.SYN_RECV,
        TcpState.ESTABLISHED,
    )
