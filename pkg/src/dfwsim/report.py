"""Human-facing output: delimited tables and figure files for run reports."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .simnet.metrics import MetricsReport

__all__ = ["render_table", "render_comparison", "save_figures"]


def _fmt_bps(bps: float) -> str:
    if bps >= 1e9:
        return f"{bps / 1e9:.3f} Gb/s"
    if bps >= 1e6:
        return f"{bps / 1e6:.3f} Mb/s"
    if bps >= 1e3:
        return f"{bps / 1e3:.3f} kb/s"
    return f"{bps:.1f} b/s"


def _fmt_ms(seconds: float) -> str:
    return f"{seconds * 1e3:.3f} ms"


def _rows_to_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(cells):
        return " | ".join(cell.ljust(widths[i]) for i, cell in enumerate(cells)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(headers), sep] + [line(r) for r in rows])


def render_table(report: MetricsReport) -> str:
    """One run as pipe-delimited text: scenario, pairs, flood, dispositions."""
    out = []
    sc = report.scenario
    topo = sc.get("topology", {})
    topo_desc = ",".join(f"{k}={v}" for k, v in topo.items())
    out.append(f"scenario: {sc.get('name', '')}")
    out.append(f"topology: {topo_desc}")
    out.append(f"sdfw_enabled: {sc.get('sdfw_enabled')}  seed: {sc.get('seed')}  duration_s: {sc.get('duration_s')}")
    out.append("")

    delivering = {k: v for k, v in report.pairs.items() if v["payload_bytes"] > 0}
    if delivering:
        rows = []
        for key in sorted(delivering):
            p = delivering[key]
            rows.append(
                [
                    p["src"],
                    p["dst"],
                    _fmt_bps(p["goodput_bps"]),
                    _fmt_ms(p["latency_mean_s"]),
                    f"{p['packets_delivered']}/{p['packets_sent']}",
                ]
            )
        out.append(_rows_to_table(["src", "dst", "goodput", "latency", "delivered/sent"], rows))
        out.append("")
        out.append(f"mean goodput: {_fmt_bps(report.mean_goodput_bps)}")
        out.append(f"mean latency: {_fmt_ms(report.mean_latency_s)}")
        out.append("")

    flood = report.flood
    if flood.get("mitigations") or flood.get("decisions"):
        dt = flood.get("detection_time_s")
        out.append(f"detection_time_s: {'n/a' if dt is None else f'{dt:.3f}'}")
        out.append(f"mitigations: {len(flood.get('mitigations', []))}")
        for m in flood.get("mitigations", []):
            out.append(f"  {m['switch']}: {m['flow_mod']}")
        out.append(f"decisions: {len(flood.get('decisions', []))}")
        out.append("")

    out.append(f"packet_in_total: {report.controller.get('packet_in_total', 0)}")
    out.append("dispositions:")
    for key, val in report.dispositions.items():
        out.append(f"  {key}: {val}")
    return "\n".join(out)


def render_comparison(with_rep: MetricsReport, without_rep: MetricsReport) -> str:
    """Side-by-side means for the same scenario with the firewall on and off."""
    rows = [
        [
            "mean goodput",
            _fmt_bps(with_rep.mean_goodput_bps),
            _fmt_bps(without_rep.mean_goodput_bps),
        ],
        [
            "mean latency",
            _fmt_ms(with_rep.mean_latency_s),
            _fmt_ms(without_rep.mean_latency_s),
        ],
        [
            "delivered",
            str(with_rep.dispositions.get("delivered", 0)),
            str(without_rep.dispositions.get("delivered", 0)),
        ],
        [
            "mitigations",
            str(len(with_rep.flood.get("mitigations", []))),
            str(len(without_rep.flood.get("mitigations", []))),
        ],
    ]
    dt = with_rep.flood.get("detection_time_s")
    rows.append(["detection_time_s", "n/a" if dt is None else f"{dt:.3f}", "n/a"])
    return _rows_to_table(["metric", "sdfw on", "sdfw off"], rows)


def save_figures(
    report: MetricsReport,
    out_dir: str | Path,
    stem: str,
    baseline: Optional[MetricsReport] = None,
) -> list[Path]:
    """Render the report as PNG files in out_dir; returns the written paths.

    With a baseline (same scenario, firewall off) an extra comparison
    figure is produced.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    delivering = {k: v for k, v in report.pairs.items() if v["payload_bytes"] > 0}
    if delivering:
        keys = sorted(delivering)
        goodputs = [delivering[k]["goodput_bps"] / 1e6 for k in keys]
        latencies = [delivering[k]["latency_mean_s"] * 1e3 for k in keys]

        fig, ax = plt.subplots(figsize=(max(6, len(keys) * 0.22), 4))
        ax.bar(range(len(keys)), goodputs, color="#3572b0")
        ax.set_ylabel("goodput (Mb/s)")
        ax.set_xlabel("pair")
        ax.set_title(f"{stem}: per-pair goodput")
        ax.set_xticks([])
        fig.tight_layout()
        path = out_dir / f"{stem}_goodput.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(max(6, len(keys) * 0.22), 4))
        ax.bar(range(len(keys)), latencies, color="#b03535")
        ax.set_ylabel("mean latency (ms)")
        ax.set_xlabel("pair")
        ax.set_title(f"{stem}: per-pair latency")
        ax.set_xticks([])
        fig.tight_layout()
        path = out_dir / f"{stem}_latency.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    cats = [k for k in report.dispositions if k != "injected"]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(cats)), [report.dispositions[c] for c in cats], color="#4a8f4a")
    ax.set_xticks(range(len(cats)))
    ax.set_xticklabels(cats, rotation=30, ha="right")
    ax.set_ylabel("packets")
    ax.set_title(f"{stem}: dispositions (injected={report.dispositions.get('injected', 0)})")
    fig.tight_layout()
    path = out_dir / f"{stem}_dispositions.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    if baseline is not None:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
        labels = ["sdfw on", "sdfw off"]
        ax1.bar(labels, [report.mean_goodput_bps / 1e6, baseline.mean_goodput_bps / 1e6], color=["#3572b0", "#9db8d4"])
        ax1.set_ylabel("mean goodput (Mb/s)")
        ax2.bar(labels, [report.mean_latency_s * 1e3, baseline.mean_latency_s * 1e3], color=["#b03535", "#d49d9d"])
        ax2.set_ylabel("mean latency (ms)")
        fig.suptitle(f"{stem}: firewall cost")
        fig.tight_layout()
        path = out_dir / f"{stem}_comparison.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    return written
