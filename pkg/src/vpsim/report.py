"""Run-metrics reporting: delimited output and sweep figures."""

from __future__ import annotations

import csv
from pathlib import Path

from .platform import CSV_COLUMNS, RunMetrics


def write_csv(path: str | Path, rows: list[RunMetrics], append: bool = False) -> Path:
    """Write metrics rows as CSV, emitting the header for new files only."""
    path = Path(path)
    fresh = not (append and path.exists() and path.stat().st_size > 0)
    mode = "a" if append else "w"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())
    return path


def format_table(rows: list[RunMetrics]) -> str:
    widths = [len(c) for c in CSV_COLUMNS]
    cells = [row.csv_row() for row in rows]
    for row in cells:
        widths = [max(w, len(v)) for w, v in zip(widths, row)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(CSV_COLUMNS, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def render_sweep(path: str | Path, rows: list[RunMetrics]) -> Path:
    """Render quantum-sweep throughput curves (one line per core count) to a PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    series: dict[tuple[int, bool], list[RunMetrics]] = {}
    for row in rows:
        series.setdefault((row.cores, row.parallel), []).append(row)

    fig, (ax_mips, ax_rtf) = plt.subplots(1, 2, figsize=(11, 4.2))
    for (cores, parallel), points in sorted(series.items()):
        points = sorted(points, key=lambda r: r.quantum)
        xs = [r.quantum / 1000 for r in points]
        label = f"{cores} core{'s' if cores != 1 else ''} ({'par' if parallel else 'seq'})"
        ax_mips.plot(xs, [r.mips for r in points], marker="o", label=label)
        ax_rtf.plot(xs, [r.rtf for r in points], marker="o", label=label)
    for ax, ylabel in ((ax_mips, "MIPS"), (ax_rtf, "real-time factor")):
        ax.set_xscale("log")
        ax.set_xlabel("quantum (ns)")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
    ax_mips.legend(fontsize=8)
    fig.suptitle("Throughput vs. quantum")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
