"""CSV exports for trajectory plots, particle scatter and RMSE box plots."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

TRAJ_FIELDS = ["frame", "slot", "true_x", "true_y", "est_x", "est_y"]
PARTICLE_FIELDS = ["frame", "slot", "x", "y", "log_weight"]


def write_trajectory_csv(path, result) -> Path:
    """One row per valid (frame, slot) pair, grouped by slot."""
    path = Path(path)
    act = np.asarray(result.activity).astype(bool)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_FIELDS)
        for n in range(act.shape[1]):
            for t in np.flatnonzero(act[:, n]):
                tx, ty = result.truth[t, n, :2]
                ex, ey = result.estimates[t, n, :2]
                w.writerow([int(t), n, repr(float(tx)), repr(float(ty)),
                            repr(float(ex)), repr(float(ey))])
    return path


def write_particle_csv(path, npz_path, activity, max_per_frame: int = 200) -> Path:
    """Subsampled particle cloud (evenly spaced particle indices) for valid slots."""
    data = np.load(npz_path)
    pos, logw = data["positions"], data["log_weights"]
    act = np.asarray(activity).astype(bool)
    n_part = pos.shape[1]
    pick = np.unique(np.linspace(0, n_part - 1, min(max_per_frame, n_part)).astype(int))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARTICLE_FIELDS)
        for t in range(pos.shape[0]):
            for n in np.flatnonzero(act[t]):
                for k in pick:
                    w.writerow([t, int(n), f"{pos[t, k, n, 0]:.6f}", f"{pos[t, k, n, 1]:.6f}",
                                f"{logw[t, k]:.6f}"])
    return Path(path)


def write_rmse_table(path, results) -> Path:
    """Wide table: one row per (method, SNR, n_p), one column per trial."""
    cells: dict = {}
    for r in results:
        cells.setdefault((r.method, float(r.snr_db), int(r.n_particles)), {})[r.trial] = r.rmse
    n_trials = max((t + 1 for c in cells.values() for t in c), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "snr_db", "n_particles"] + [f"trial_{k}" for k in range(n_trials)])
        for (method, snr, n), trials in cells.items():
            w.writerow([method, snr, n] + [repr(trials[k]) if k in trials else ""
                                           for k in range(n_trials)])
    return Path(path)


def export_plotdata(results, out_dir, particle_dir=None, max_particles: int = 200) -> dict:
    """Write all plot data under ``out_dir``; returns the written paths by kind."""
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    written = {"trajectories": [], "particles": [],
               "rmse": write_rmse_table(out / "rmse_trials.csv", results)}
    for r in results:
        written["trajectories"].append(
            write_trajectory_csv(out / "trajectories" / f"{r.cell}.csv", r))
        if particle_dir is not None:
            npz = Path(particle_dir) / f"{r.cell}.npz"
            if npz.exists():
                (out / "particles").mkdir(exist_ok=True)
                written["particles"].append(write_particle_csv(
                    out / "particles" / f"{r.cell}.csv", npz, r.activity, max_particles))
    return written
