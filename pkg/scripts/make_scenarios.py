#!/usr/bin/env python3
"""Regenerate the canned scenario files in scenarios/.

Each benign pair gets a forward allow on its service port plus a reverse
allow on any port so handshake replies traverse; the attack pair gets the
same treatment on port 80.
"""

from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def ip(n: int) -> str:
    return f"10.0.3.{n}"


def pair_policies(src: str, dst: str, dport: int, priority: int = 50) -> list[dict]:
    return [
        {
            "id": f"allow-{src}-{dst}",
            "src": [src],
            "dst": [dst],
            "proto": "tcp",
            "dst_port": dport,
            "action": "allow",
            "priority": priority,
            "stateful": True,
        },
        {
            "id": f"allow-{dst}-{src}",
            "src": [dst],
            "dst": [src],
            "proto": "tcp",
            "dst_port": "any",
            "action": "allow",
            "priority": priority,
            "stateful": True,
        },
    ]


def flat100(sdfw: bool) -> dict:
    policies: list[dict] = []
    traffic: list[dict] = []
    # 48 concurrent transfers saturate the single switch
    for i in range(48):
        src, dst = ip(2 + i), ip(52 + i)
        policies += pair_policies(src, dst, 5001)
        traffic.append(
            {
                "kind": "benign_tcp",
                "src": src,
                "dst": dst,
                "dst_port": 5001,
                "flows": 1,
                "bytes_per_flow": 100_000,
                "start": 0.0,
            }
        )
    policies += pair_policies(ip(1), ip(100), 80)
    traffic.append(
        {
            "kind": "syn_flood",
            "src": ip(1),
            "dst": ip(100),
            "dport": 80,
            "count": 1400,
            "rate": 1000.0,
            "start": 0.0,
        }
    )
    return {
        "name": f"flat100-synflood{'' if sdfw else '-nosdfw'}",
        "topology": {"kind": "flat", "hosts": 100},
        "policies": policies,
        "traffic": traffic,
        "sdfw_enabled": sdfw,
        "seed": 7,
        "duration_s": 5.0,
    }


def tree_d2_f8(sdfw: bool) -> dict:
    policies: list[dict] = []
    traffic: list[dict] = []
    # two transfers inside each of the 8 leaves; h1 and h64 stay free for the flood
    for leaf in range(8):
        base = 8 * leaf
        for a, b in ((base + 3, base + 4), (base + 5, base + 6)):
            src, dst = ip(a), ip(b)
            policies += pair_policies(src, dst, 5001)
            traffic.append(
                {
                    "kind": "benign_tcp",
                    "src": src,
                    "dst": dst,
                    "dst_port": 5001,
                    "flows": 1,
                    "bytes_per_flow": 100_000,
                    "start": 0.0,
                }
            )
    policies += pair_policies(ip(1), ip(64), 80)
    traffic.append(
        {
            "kind": "syn_flood",
            "src": ip(1),
            "dst": ip(64),
            "dport": 80,
            "count": 1400,
            "rate": 1000.0,
            "start": 0.0,
        }
    )
    return {
        "name": f"tree-d2-f8-synflood{'' if sdfw else '-nosdfw'}",
        "topology": {"kind": "tree", "depth": 2, "fanout": 8},
        "policies": policies,
        "traffic": traffic,
        "sdfw_enabled": sdfw,
        "seed": 7,
        "duration_s": 5.0,
    }


def main() -> None:
    OUT.mkdir(exist_ok=True)
    files = {
        "flat100_synflood.json": flat100(True),
        "flat100_synflood_nosdfw.json": flat100(False),
        "tree_d2_f8_synflood.json": tree_d2_f8(True),
        "tree_d2_f8_synflood_nosdfw.json": tree_d2_f8(False),
    }
    for name, data in files.items():
        path = OUT / name
        path.write_text(json.dumps(data, indent=2) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
