"""Matplotlib renderers for evaluation reports and leaderboard views."""

from __future__ import annotations

from pathlib import Path

from .bench import LeaderboardEntry
from .metrics import SdrReport

_BAR_COLOR = "#4878a8"
_ACCENT = "#b04a4a"


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_report_figure(report: SdrReport, path: str | Path, title: str = "SDR by stem") -> Path:
    """Bar chart of per-stem mean SDR with the record-mean total marked."""
    plt = _plt()
    stems = list(report.per_stem)
    values = [report.per_stem[s] for s in stems]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(stems)), 3.4))
    bars = ax.bar(stems, values, color=_BAR_COLOR)
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.axhline(report.total, ls="--", lw=1, color=_ACCENT, label=f"total {report.total:.2f} dB")
    ax.set_ylabel("SDR (dB)")
    ax.set_title(f"{title} ({report.n_records} records)")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_weight_search_figure(
    table: list[tuple[tuple[float, ...], float]],
    path: str | Path,
    stem: str,
    top: int = 12,
) -> Path:
    """Bar chart of the best-scoring weight vectors from a search table."""
    plt = _plt()
    ranked = sorted(table, key=lambda row: -row[1])[:top]
    labels = ["/".join(f"{w:g}" for w in vec) for vec, _ in ranked]
    values = [score for _, score in ranked]
    fig, ax = plt.subplots(figsize=(8.0, max(2.0, 0.4 * len(ranked) + 1.0)))
    pos = range(len(ranked))[::-1]
    bars = ax.barh(list(pos), values, color=_BAR_COLOR)
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.set_yticks(list(pos), labels, fontsize=8)
    ax.set_xlabel(f"mean SDR (dB), stem {stem!r}")
    ax.set_title("Weight search")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_leaderboard_figure(
    entries: list[LeaderboardEntry], sort_key: str, path: str | Path, title: str = "Leaderboard"
) -> Path:
    """Horizontal bars of the ranked entries under one sort key."""
    plt = _plt()

    def value(e: LeaderboardEntry) -> float:
        if sort_key == "total":
            return e.total
        if sort_key in ("instrum", "instrumental"):
            return e.instrumental if e.instrumental is not None else float("nan")
        return e.per_stem.get(sort_key, float("nan"))

    names = [e.name if len(e.name) <= 48 else e.name[:45] + "..." for e in entries]
    values = [value(e) for e in entries]
    fig, ax = plt.subplots(figsize=(8.0, max(2.0, 0.45 * len(entries) + 1.0)))
    pos = range(len(entries))[::-1]
    bars = ax.barh(list(pos), values, color=_BAR_COLOR)
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.set_yticks(list(pos), names, fontsize=8)
    ax.set_xlabel(f"SDR {sort_key} (dB)")
    ax.set_title(title)
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
