"""SVG figures: PSNR versus measurement count, and generator coefficient share.

Figures are built with matplotlib's object API (no pyplot state) and saved
with a fixed hash salt and no date stamp, so identical inputs give identical
bytes.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import matplotlib
from matplotlib.figure import Figure

from .datasets import IN_DISTRIBUTION
from .metrics import Aggregate, RunRecord, _mean_std

_RC = {
    "svg.hashsalt": "hybridprior",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.prop_cycle": matplotlib.cycler(color=["#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"]),
}
_MARKERS = "osD^vP*X"


def _save(fig: Figure, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def plot_psnr_curves(aggregates: Sequence[Aggregate], path, title: str | None = None) -> list[str]:
    """Mean PSNR against m with std error bars, one series per model in input order.

    Returns the legend order.
    """
    aggregates = list(aggregates)
    if not aggregates:
        raise ValueError("no aggregates to plot")
    series: dict[str, list[Aggregate]] = {}
    for a in aggregates:
        series.setdefault(a.model, []).append(a)

    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.0, 3.6))
        ax = fig.add_subplot()
        for i, (model, pts) in enumerate(series.items()):
            pts = sorted((p for p in pts if not math.isnan(p.mean)), key=lambda p: p.m)
            ax.errorbar([p.m for p in pts], [p.mean for p in pts], yerr=[p.std for p in pts],
                        label=model, marker=_MARKERS[i % len(_MARKERS)], markersize=4, capsize=3,
                        linewidth=1.2)
        ax.set_xlabel("number of measurements m")
        ax.set_ylabel("PSNR (dB)")
        if title:
            ax.set_title(title)
        ax.grid(True, linewidth=0.4, alpha=0.5)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        _save(fig, path)
    return list(series)


def alpha_shares(records: Iterable[RunRecord], in_distribution: Sequence[str] = IN_DISTRIBUTION,
                 model: str = "hybrid") -> dict[str, dict[int, float]]:
    """Mean normalised alpha share per m, split into ``"in-distribution"`` and ``"out-of-distribution"``."""
    cells: dict[tuple[str, int], list[float]] = {}
    for r in records:
        if r.model != model or math.isnan(r.alpha_share):
            continue
        group = "in-distribution" if r.image_set in in_distribution else "out-of-distribution"
        cells.setdefault((group, r.m), []).append(r.alpha_share)
    out: dict[str, dict[int, float]] = {}
    for (group, m), vals in sorted(cells.items()):
        out.setdefault(group, {})[m] = _mean_std(vals)[0]
    return out


def coefficient_plot(records: Iterable[RunRecord], path,
                     in_distribution: Sequence[str] = IN_DISTRIBUTION) -> dict[str, dict[int, float]]:
    """Grouped bars of the mean generator share alpha/(|alpha|+|beta|) per m; returns the bar heights."""
    shares = alpha_shares(records, in_distribution)
    if not shares:
        raise ValueError("no hybrid records with coefficients to plot")
    ms = sorted({m for g in shares.values() for m in g})
    groups = [g for g in ("in-distribution", "out-of-distribution") if g in shares]
    width = 0.8 / len(groups)

    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.0, 3.6))
        ax = fig.add_subplot()
        for i, g in enumerate(groups):
            xs = [j + (i - (len(groups) - 1) / 2) * width for j in range(len(ms))]
            ax.bar(xs, [shares[g].get(m, 0.0) for m in ms], width=width, label=g)
        ax.set_xticks(range(len(ms)), [str(m) for m in ms])
        ax.set_xlabel("number of measurements m")
        ax.set_ylabel("generator share  α / (|α| + |β|)")
        ax.axhline(0.5, color="#555555", linewidth=0.6, linestyle="--")
        ax.set_ylim(min(0.0, *(v for g in shares.values() for v in g.values())), 1.0)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        _save(fig, path)
    return shares
