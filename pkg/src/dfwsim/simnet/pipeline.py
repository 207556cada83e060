"""Single-switch datapath execution: lookup, conntrack recirculation, verdict."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..conntrack import CtTable
from ..core_model import ActionKind, CtState, Packet
from ..flow_table import FlowTable

__all__ = ["PipelineVerdict", "PipelineResult", "PipelineError", "execute_pipeline"]

# one ct recirculation is all the compiled pipeline ever needs; a second
# request means the rule set is malformed
_MAX_PASSES = 2


class PipelineError(RuntimeError):
    pass


class PipelineVerdict(Enum):
    FORWARD = "forward"
    DROP = "drop"
    TABLE_MISS = "table_miss"
    PACKET_IN = "packet_in"


@dataclass(frozen=True)
class PipelineResult:
    verdict: PipelineVerdict
    out_port: Optional[int] = None
    rule_id: Optional[str] = None
    ct_used: bool = False
    matched_rules: tuple[str, ...] = ()


def execute_pipeline(
    table: FlowTable,
    ct: Optional[CtTable],
    pkt: Packet,
    now: int = 0,
) -> PipelineResult:
    """Run one packet through the table, recirculating once after conntrack.

    The packet enters untracked. A conntrack action classifies it and the
    lookup repeats with the connection state attached; commit-and-output
    confirms the pending entry before forwarding. Tentative entries left
    by a classify whose packet then missed or dropped are rolled back.
    """
    ct_state: Optional[CtState] = None
    ct_used = False
    matched: list[str] = []

    def finish(result: PipelineResult) -> PipelineResult:
        if ct is not None and ct_used:
            ct.end_pass()
        return result

    for _ in range(_MAX_PASSES):
        found = table.lookup(pkt, ct_state)
        if found.is_miss:
            return finish(
                PipelineResult(PipelineVerdict.TABLE_MISS, ct_used=ct_used, matched_rules=tuple(matched))
            )
        matched.append(found.rule_id)
        recirculate = False
        for action in found.actions:
            action.assert_executable()
            if action.kind is ActionKind.SEND_TO_CONNTRACK:
                if ct is None:
                    raise PipelineError("conntrack action on a switch without a conntrack table")
                if ct_used:
                    raise PipelineError("second conntrack recirculation requested")
                ct_state = ct.classify(pkt, zone=action.zone, now=now)
                ct_used = True
                recirculate = True
                break
            if action.kind is ActionKind.COMMIT_AND_OUTPUT:
                if ct is None:
                    raise PipelineError("commit action on a switch without a conntrack table")
                ct.commit_packet(pkt, zone=action.zone, now=now)
                return finish(
                    PipelineResult(
                        PipelineVerdict.FORWARD,
                        out_port=action.port,
                        rule_id=found.rule_id,
                        ct_used=ct_used,
                        matched_rules=tuple(matched),
                    )
                )
            if action.kind is ActionKind.OUTPUT:
                return finish(
                    PipelineResult(
                        PipelineVerdict.FORWARD,
                        out_port=action.port,
                        rule_id=found.rule_id,
                        ct_used=ct_used,
                        matched_rules=tuple(matched),
                    )
                )
            if action.kind is ActionKind.DROP:
                return finish(
                    PipelineResult(
                        PipelineVerdict.DROP,
                        rule_id=found.rule_id,
                        ct_used=ct_used,
                        matched_rules=tuple(matched),
                    )
                )
            if action.kind is ActionKind.PACKET_IN:
                return finish(
                    PipelineResult(
                        PipelineVerdict.PACKET_IN,
                        rule_id=found.rule_id,
                        ct_used=ct_used,
                        matched_rules=tuple(matched),
                    )
                )
        if not recirculate:
            # action list ran out without a terminal action: drop, as a
            # flow with no output would
            return finish(
                PipelineResult(
                    PipelineVerdict.DROP,
                    rule_id=found.rule_id,
                    ct_used=ct_used,
                    matched_rules=tuple(matched),
                )
            )
    raise PipelineError("pipeline did not terminate after conntrack recirculation")
