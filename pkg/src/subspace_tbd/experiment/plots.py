"""Render the exported CSVs as PNG figures (trajectories and RMSE box plots)."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "font.family": "serif",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 7,
}
SLOT_COLORS = ["tab:blue", "tab:red", "tab:green", "tab:purple"]


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_trajectory(traj_csv, out_png, particle_csv=None, title=None) -> Path:
    """True (solid) and estimated (dashed) x/y positions over frames."""
    rows = _read(traj_csv)
    by_slot = defaultdict(list)
    for r in rows:
        by_slot[int(r["slot"])].append(r)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(6.0, 4.0))
        if particle_csv is not None and Path(particle_csv).exists():
            parts = _read(particle_csv)
            t = [int(p["frame"]) for p in parts]
            for ax, key in zip(axes, ("x", "y")):
                ax.scatter(t, [float(p[key]) for p in parts], s=0.2, c="0.7",
                           rasterized=True, zorder=0)
        for n, slot_rows in sorted(by_slot.items()):
            color = SLOT_COLORS[n % len(SLOT_COLORS)]
            t = [int(r["frame"]) for r in slot_rows]
            for ax, key in zip(axes, ("x", "y")):
                ax.plot(t, [float(r[f"true_{key}"]) for r in slot_rows], color=color,
                        lw=1.2, label=f"slot {n + 1} true")
                ax.plot(t, [float(r[f"est_{key}"]) for r in slot_rows], color=color,
                        lw=1.0, ls="--", label=f"slot {n + 1} est.")
        axes[0].set_ylabel("x [m]")
        axes[1].set_ylabel("y [m]")
        axes[1].set_xlabel("frame")
        axes[0].legend(loc="upper right", ncol=2)
        if title:
            axes[0].set_title(title)
        fig.savefig(out_png)
        plt.close(fig)
    return Path(out_png)


def plot_rmse_boxes(rmse_csv, out_png) -> Path:
    """Box plot of per-trial RMSE for every (method, n_p) at each SNR; log scale."""
    rows = _read(rmse_csv)
    snrs = sorted({float(r["snr_db"]) for r in rows})
    series = sorted({(r["method"], int(r["n_particles"])) for r in rows})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 3.0))
        width = 0.8 / max(len(series), 1)
        for j, (method, n) in enumerate(series):
            data, pos = [], []
            for i, snr in enumerate(snrs):
                vals = [float(v) for r in rows
                        if r["method"] == method and int(r["n_particles"]) == n
                        and float(r["snr_db"]) == snr
                        for k, v in r.items() if k.startswith("trial_") and v]
                if vals:
                    data.append(vals)
                    pos.append(i - 0.4 + width * (j + 0.5))
            if not data:
                continue
            color = "tab:orange" if method == "baseline" else "tab:blue"
            ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True,
                       boxprops={"facecolor": color, "alpha": 0.3 + 0.2 * (j % 3)},
                       medianprops={"color": "k"}, manage_ticks=False)
            ax.plot([], [], color=color, lw=4, alpha=0.5, label=f"{method}, n_p={n}")
        ax.set_xticks(range(len(snrs)))
        ax.set_xticklabels([f"{s:g}" for s in snrs])
        ax.set_xlabel("SNR [dB]")
        ax.set_ylabel("position RMSE [m]")
        ax.set_yscale("log")
        ax.legend(loc="center left", bbox_to_anchor=(1.0, 0.5))
        fig.savefig(out_png)
        plt.close(fig)
    return Path(out_png)


def render_figures(export_dir) -> list[Path]:
    """Render every exported trajectory CSV and the RMSE table next to the CSVs."""
    export_dir = Path(export_dir)
    figdir = export_dir / "figures"
    figdir.mkdir(exist_ok=True)
    out = []
    for traj in sorted((export_dir / "trajectories").glob("*.csv")):
        parts = export_dir / "particles" / traj.name
        out.append(plot_trajectory(traj, figdir / f"{traj.stem}.png",
                                   parts if parts.exists() else None, traj.stem))
    rmse_csv = export_dir / "rmse_trials.csv"
    if rmse_csv.exists() and len(_read(rmse_csv)) > 0:
        out.append(plot_rmse_boxes(rmse_csv, figdir / "rmse_vs_snr.png"))
    return out
