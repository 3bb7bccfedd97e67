"""Paired-bar comparison of empirical and target histograms (SVG + CSV)."""

from __future__ import annotations

import csv
import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .quantum import cell_label, cells  # noqa: E402

_RC = {
    "svg.hashsalt": "eprgame",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "path.simplify": False,
}


def plot_csv(emp, target, header: str = "") -> str:
    emp = np.asarray(emp, dtype=float)
    target = np.asarray(target, dtype=float)
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "empirical", "target"])
    for k, c in enumerate(cells()):
        w.writerow([cell_label(*c), f"{emp[k]:.17g}", f"{target[k]:.17g}"])
    return buf.getvalue()


def plot_svg(emp, target, title: str = "", comment: str = "") -> str:
    """Byte-deterministic SVG with one pair of bars per (a, b, x, y) cell."""
    emp = np.asarray(emp, dtype=float)
    target = np.asarray(target, dtype=float)
    if emp.shape != (16,) or target.shape != (16,):
        raise ValueError("both histograms need 16 cells")
    labels = [cell_label(*c) for c in cells()]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(10, 4))
        pos = np.arange(16)
        ax.bar(pos - 0.2, emp, width=0.4, label="simulated (PTE runs)", color="#4477aa")
        ax.bar(pos + 0.2, target, width=0.4, label="Born rule", color="#ee6677")
        ax.set_xticks(pos)
        ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
        ax.set_ylabel("probability")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    svg = buf.getvalue()
    if comment:
        # after the XML declaration so the file stays well-formed
        head, sep, rest = svg.partition("?>\n")
        safe = comment.replace("--", "- -")
        svg = f"{head}{sep}<!-- {safe} -->\n{rest}" if sep else f"<!-- {safe} -->\n{svg}"
    return svg
