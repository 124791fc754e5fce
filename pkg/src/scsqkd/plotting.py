"""Figures written next to the CLI's tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .feedback import folded_phase  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def new(nrows=1, ncols=1, width=4.5, height=3.2):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows=nrows, ncols=ncols, figsize=(width, height))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        # no timestamps or version strings, so reruns are byte-identical
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def rate_vs_distance(sweep_rows, measured=None, path="rate_vs_distance.png"):
    """Simulated key rate against total fibre length, measured runs as dots."""
    fig, ax = new()
    d = np.array([r["total_length_km"] for r in sweep_rows])
    r = np.array([r["r_coh_per_window"] for r in sweep_rows])
    ok = r > 0
    ax.semilogy(d[ok], r[ok], "--", color="tab:blue", label="simulated")
    if measured:
        md = [m["total_length_km"] for m in measured]
        ax.semilogy(md, [m["r_per_window"] for m in measured], "o", color="k", ms=4, label="measured")
        if all("r_computed" in m for m in measured):
            ax.semilogy(md, [m["r_computed"] for m in measured], "x", color="tab:red", ms=5, label="from counts")
    ax.set_xlabel("total fibre length (km)")
    ax.set_ylabel("key rate (bits per window)")
    ax.legend()
    return save(fig, path)


def keyrate_comparison(rows, path="keyrate.png"):
    """Key rate from the counts beside the published rate, per dataset."""
    fig, ax = new()
    d = [row["total_length_km"] for row in rows]
    ax.semilogy(d, [row["r_coh_per_window"] for row in rows], "x", color="tab:red", ms=6, label="computed")
    pub = [(x, row["r_published_per_window"]) for x, row in zip(d, rows) if row.get("r_published_per_window")]
    if pub:
        ax.semilogy(*zip(*pub), "o", mfc="none", color="k", ms=6, label="published")
    ax.set_xlabel("total fibre length (km)")
    ax.set_ylabel("key rate (bits per window)")
    ax.legend()
    return save(fig, path)


def phase_trace(traces, path="phase_trace.png", max_points=20000):
    """Folded residual phase over time and its histogram, one row per trace.

    ``traces`` maps a label to a :class:`~scsqkd.feedback.PhaseTrace`.
    """
    fig, axes = new(nrows=len(traces), ncols=2, width=7.0, height=2.4 * len(traces))
    axes = np.atleast_2d(axes)
    for row, (label, tr) in zip(axes, traces.items()):
        stride = max(1, len(tr) // max_points)
        phi = folded_phase(tr.residual_phase)
        row[0].plot(tr.t_us[::stride] / 1000.0, phi[::stride], lw=0.5)
        row[0].set_ylim(0, np.pi)
        row[0].set_xlabel("time (ms)")
        row[0].set_ylabel("|phase| (rad)")
        row[0].set_title(label)
        row[1].hist(phi, bins=60, range=(0, np.pi), density=True)
        row[1].set_xlabel("|phase| (rad)")
        row[1].set_title(f"std {np.std(phi):.3f} rad")
    fig.tight_layout()
    return save(fig, path)
