"""Trial data generation, the SNR x particle-count x trial grid, RMSE and summaries.

Result directory layout::

    <out>/config.yaml          configuration the grid was run with
    <out>/runs/<cell>.json     one file per RunResult (deterministic content)
    <out>/index.csv            one line per finished cell
    <out>/timing.csv           wall-clock seconds per cell (not reproducible)
    <out>/particles/<cell>.npz particle clouds, only with dump_particles
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import UndefinedMetricError
from ..filtering import FilterConfig, run_filter
from ..scenario import generate_truth
from ..synth import synthesize
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METHOD_IDS = {"subspace": 0, "baseline": 1}
INDEX_FIELDS = ["method", "snr_db", "n_particles", "trial", "rmse", "n_degenerate",
                "data_fingerprint", "config_fingerprint", "file"]


def _derive(*entropy) -> int:
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1, np.uint64)[0])


def trial_seed(master: int, snr_index: int, trial: int) -> int:
    return _derive(master, snr_index, trial)


def run_seed(trial_seed_: int, method: str, n_particles: int) -> int:
    return _derive(trial_seed_, METHOD_IDS[method], n_particles)


@dataclass
class TrialData:
    snr_db: float
    snr_index: int
    trial: int
    seed: int
    truth: np.ndarray
    activity: np.ndarray
    observations: np.ndarray
    noise_variance: float

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.observations).tobytes()).hexdigest()[:16]


def generate_trial(config: ExperimentConfig, snr_index: int, trial: int) -> TrialData:
    """Ground truth and observations shared by every method and particle count."""
    snr = config.snrs[snr_index]
    seed = trial_seed(config.seed, snr_index, trial)
    rng = np.random.default_rng(seed)
    act = config.activity
    truth = generate_truth(config.room, act, config.motion, config.birth, rng,
                           config.max_attempts)
    obs, noise = synthesize(truth, act, config.mics, config.grid_frequencies,
                            config.room.speed_of_sound, snr, rng, config.loading)
    return TrialData(snr, snr_index, trial, seed, truth, act, obs, noise.noise_variance)


def rmse(truth_positions, estimates, activity) -> float:
    """Position RMSE over all valid (frame, slot) pairs."""
    act = np.asarray(activity).astype(bool)
    if not act.any():
        raise UndefinedMetricError("no valid (frame, slot) pair")
    truth = np.asarray(truth_positions, dtype=float)[..., :2][act]
    est = np.asarray(estimates, dtype=float)[..., :2][act]
    if not np.all(np.isfinite(est)):
        raise ValueError("estimates missing on some valid (frame, slot) pair")
    return float(np.sqrt(np.mean(np.sum((est - truth) ** 2, axis=-1))))


def _nan_to_none(a):
    return [None if not np.isfinite(v) else float(v) for v in a]


@dataclass
class RunResult:
    config_fingerprint: str
    data_fingerprint: str
    method: str
    snr_db: float
    n_particles: int
    trial: int
    seed: int
    rmse: float
    estimates: np.ndarray            # (T, N, 4), NaN on invalid pairs
    truth: np.ndarray                # (T, N, 2)
    activity: np.ndarray             # (T, N)
    ess: np.ndarray                  # (T,)
    n_degenerate: int = 0
    wall_seconds: float = field(default=float("nan"), compare=False)

    @property
    def cell(self) -> str:
        return cell_name(self.method, self.snr_db, self.n_particles, self.trial)

    def to_dict(self) -> dict:
        """Serializable form; wall-clock time is kept out so files are reproducible."""
        return {
            "config_fingerprint": self.config_fingerprint,
            "data_fingerprint": self.data_fingerprint,
            "method": self.method,
            "snr_db": float(self.snr_db),
            "n_particles": int(self.n_particles),
            "trial": int(self.trial),
            "seed": int(self.seed),
            "rmse": float(self.rmse),
            "n_degenerate": int(self.n_degenerate),
            "activity": np.asarray(self.activity, dtype=int).tolist(),
            "truth": np.asarray(self.truth, dtype=float).tolist(),
            "estimates": [[_nan_to_none(s) for s in frame] for frame in self.estimates],
            "ess": [float(v) for v in self.ess],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        est = np.array([[[np.nan if v is None else v for v in s] for s in frame]
                        for frame in d["estimates"]], dtype=float)
        return cls(d["config_fingerprint"], d["data_fingerprint"], d["method"],
                   float(d["snr_db"]), int(d["n_particles"]), int(d["trial"]), int(d["seed"]),
                   float(d["rmse"]), est.reshape(len(d["estimates"]), -1, 4),
                   np.array(d["truth"], dtype=float), np.array(d["activity"], dtype=int),
                   np.array(d["ess"], dtype=float), int(d["n_degenerate"]))


def cell_name(method: str, snr_db: float, n_particles: int, trial: int) -> str:
    return f"{method}_snr{snr_db:+g}dB_np{n_particles}_trial{trial}"


def run_cell(config: ExperimentConfig, data: TrialData, method: str, n_particles: int,
             seed: int | None = None, dump_particles: bool = False):
    """Run one filter on shared trial data.  Returns ``(RunResult, FilterResult)``."""
    if seed is None:
        seed = run_seed(data.seed, method, n_particles)
    fcfg = FilterConfig(n_particles=n_particles, likelihood=method, motion=config.motion,
                        birth=config.birth, boundary=config.boundary, seed=seed,
                        kappa=config.kappa, sigma_v2=data.noise_variance,
                        workers=config.workers)
    start = time.perf_counter()
    fres = run_filter(fcfg, data.observations, data.activity, config.mics,
                      config.grid_frequencies, config.room, dump_particles=dump_particles)
    elapsed = time.perf_counter() - start
    result = RunResult(
        config_fingerprint=config.fingerprint(), data_fingerprint=data.fingerprint,
        method=method, snr_db=data.snr_db, n_particles=n_particles, trial=data.trial,
        seed=seed, rmse=rmse(data.truth, fres.estimates, data.activity),
        estimates=fres.estimates, truth=data.truth[..., :2], activity=data.activity,
        ess=fres.ess, n_degenerate=fres.n_degenerate, wall_seconds=elapsed)
    return result, fres


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def save_result(out: Path, result: RunResult) -> Path:
    path = out / "runs" / f"{result.cell}.json"
    _write_atomic(path, json.dumps(result.to_dict(), sort_keys=True, separators=(",", ":")))
    return path


def load_result(path) -> RunResult:
    with open(path) as fh:
        return RunResult.from_dict(json.load(fh))


def load_results(out) -> list[RunResult]:
    runs = sorted((Path(out) / "runs").glob("*.json"))
    return [load_result(p) for p in runs]


def save_particles(out: Path, cell: str, fres) -> Path:
    path = out / "particles" / f"{cell}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, positions=fres.particles, log_weights=fres.particle_log_weights)
    return path


def _index_row(result: RunResult) -> dict:
    return {"method": result.method, "snr_db": repr(float(result.snr_db)),
            "n_particles": result.n_particles, "trial": result.trial,
            "rmse": repr(result.rmse), "n_degenerate": result.n_degenerate,
            "data_fingerprint": result.data_fingerprint,
            "config_fingerprint": result.config_fingerprint,
            "file": f"runs/{result.cell}.json"}


def _append_csv(path: Path, fields, row):
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(row)


def _grid_cells(config: ExperimentConfig):
    for i, _ in enumerate(config.snrs):
        for trial in range(config.trials):
            yield i, trial


def _pending(config, out, snr_index, trial):
    todo = []
    fp = config.fingerprint()
    snr = config.snrs[snr_index]
    for method in config.methods:
        for n in config.particles:
            path = out / "runs" / f"{cell_name(method, snr, n, trial)}.json"
            if path.exists():
                try:
                    if load_result(path).config_fingerprint == fp:
                        continue
                except (OSError, ValueError, KeyError):
                    pass
            todo.append((method, n))
    return todo


def _run_group(config_raw, out, snr_index, trial, todo, dump_particles):
    config = ExperimentConfig(config_raw)
    out = Path(out)
    data = generate_trial(config, snr_index, trial)
    results = []
    for method, n in todo:
        cell = cell_name(method, data.snr_db, n, trial)
        result, fres = run_cell(config, data, method, n, dump_particles=dump_particles)
        try:
            save_result(out, result)
            if dump_particles:
                save_particles(out, cell, fres)
        except OSError as exc:
            raise OSError(f"cell {cell}: cannot write result: {exc}") from exc
        log.info("%s rmse=%.4f (%.1fs)", cell, result.rmse, result.wall_seconds)
        results.append(result)
    return results


def run_grid(config: ExperimentConfig, jobs: int = 1, dump_particles: bool = False,
             out=None) -> list[RunResult]:
    """Run every (method, SNR, n_p, trial) cell; finished cells are skipped on rerun.

    Each (SNR, trial) pair draws one truth and one observation tensor that all
    methods and particle counts share.
    """
    out = Path(out if out is not None else config.output)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.yaml")
    groups = []
    for snr_index, trial in _grid_cells(config):
        todo = _pending(config, out, snr_index, trial)
        if todo:
            groups.append((snr_index, trial, todo))

    def record(results):
        for r in results:
            _append_csv(out / "index.csv", INDEX_FIELDS, _index_row(r))
            _append_csv(out / "timing.csv", ["cell", "wall_seconds"],
                        {"cell": r.cell, "wall_seconds": f"{r.wall_seconds:.3f}"})

    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_group, config.raw, str(out), i, t, todo, dump_particles)
                       for i, t, todo in groups]
            for fut in futures:
                record(fut.result())
    else:
        for i, t, todo in groups:
            record(_run_group(config.raw, out, i, t, todo, dump_particles))

    results = [r for r in load_results(out) if r.config_fingerprint == config.fingerprint()
               and r.method in config.methods and r.n_particles in config.particles
               and r.trial < config.trials and r.snr_db in config.snrs]
    results.sort(key=_sort_key(config))
    _rewrite_index(out, results)
    return results


def _sort_key(config):
    def key(r):
        return (config.snrs.index(r.snr_db), r.trial, config.methods.index(r.method),
                config.particles.index(r.n_particles))
    return key


def _rewrite_index(out: Path, results):
    tmp = out / "index.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=INDEX_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(_index_row(r))
    os.replace(tmp, out / "index.csv")


@dataclass
class CellSummary:
    method: str
    snr_db: float
    n_particles: int
    rmses: list

    @property
    def median(self) -> float:
        return float(np.median(self.rmses))

    @property
    def min(self) -> float:
        return float(np.min(self.rmses))

    @property
    def max(self) -> float:
        return float(np.max(self.rmses))


def summarize(results, cells=None) -> list[CellSummary]:
    """Median / min / max RMSE per (method, SNR, n_p), in first-seen order.

    ``cells`` optionally lists expected ``(method, snr_db, n_particles)`` keys;
    those without any result are skipped with a warning.
    """
    groups: dict = {}
    for r in results:
        groups.setdefault((r.method, float(r.snr_db), int(r.n_particles)), []).append(
            (r.trial, r.rmse))
    keys = list(cells) if cells is not None else list(groups)
    out = []
    for key in keys:
        key = (key[0], float(key[1]), int(key[2]))
        if key not in groups:
            log.warning("no results for cell %s; omitted", key)
            continue
        rm = [v for _, v in sorted(groups[key])]
        out.append(CellSummary(*key, rm))
    return out


SUMMARY_FIELDS = ["method", "snr_db", "n_particles", "n_trials",
                  "median_rmse", "min_rmse", "max_rmse"]


def write_summary_csv(path, summary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for s in summary:
            w.writerow([s.method, s.snr_db, s.n_particles, len(s.rmses),
                        f"{s.median:.6f}", f"{s.min:.6f}", f"{s.max:.6f}"])


def format_table(summary) -> str:
    """Aligned text table: SNR, n_p, baseline median, subspace median, subspace range."""
    by = {(s.method, s.snr_db, s.n_particles): s for s in summary}
    rows = sorted({(s.snr_db, s.n_particles) for s in summary})
    lines = [f"{'SNR':>6} {'n_p':>6} {'Conv.':>8} {'Prop.':>8}  Prop. range"]
    for snr, n in rows:
        conv = by.get(("baseline", snr, n))
        prop = by.get(("subspace", snr, n))
        lines.append(
            f"{snr:>6g} {n:>6d} "
            f"{(f'{conv.median:.4f}' if conv else '-'):>8} "
            f"{(f'{prop.median:.4f}' if prop else '-'):>8}  "
            + (f"{prop.min:.4f}--{prop.max:.4f}" if prop else "-"))
    return "\n".join(lines)
