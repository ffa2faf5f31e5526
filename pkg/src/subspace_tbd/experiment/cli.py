"""Command-line entry point: ``subspace-tbd {synth,track,grid,summarize,export}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import GenerationFailedError, NearFieldError, NotPSDError, SNRUndefinedError
from ..synth import read_observations, write_observations
from .config import ConfigError, ExperimentConfig
from .export import export_plotdata, write_trajectory_csv
from .runner import (TrialData, format_table, generate_trial, load_results, run_cell,
                     run_grid, save_particles, save_result, summarize, write_summary_csv)

log = logging.getLogger("subspace_tbd")

EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_IO = 4


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.preset(args.preset)
    snr = getattr(args, "snr", None)
    particles = getattr(args, "particles", None)
    method = getattr(args, "method", None)
    return cfg.with_overrides(
        snr_db=[snr] if isinstance(snr, float) else snr,
        particles=[particles] if isinstance(particles, int) else particles,
        methods=None if method in (None, ["both"], "both") else
        ([method] if isinstance(method, str) else method),
        trials=getattr(args, "trials", None),
        seed=args.seed,
        output=args.out)


def _single_trial_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.with_overrides(snr_db=cfg.snrs[:1], particles=cfg.particles[:1], trials=1)


def cmd_synth(args):
    cfg = _single_trial_config(_load_config(args))
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    data = generate_trial(cfg, 0, 0)
    write_observations(out / "observations.bin", data.observations)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "slot", "valid", "px", "py", "vx", "vy"])
        for t in range(data.truth.shape[0]):
            for n in range(data.truth.shape[1]):
                w.writerow([t, n, int(data.activity[t, n])]
                           + [repr(float(v)) for v in data.truth[t, n]])
    meta = {"snr_db": data.snr_db, "seed": data.seed, "noise_variance": data.noise_variance,
            "data_fingerprint": data.fingerprint, "shape": list(data.observations.shape),
            "frequencies": cfg.grid_frequencies.frequencies.tolist()}
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    cfg.dump(out / "config.yaml")
    print(f"wrote {out}/observations.bin  M,F,T={tuple(data.observations.shape)}  "
          f"sigma_v2={data.noise_variance:.6g}  fingerprint={data.fingerprint}")


def _load_synth(cfg: ExperimentConfig, data_dir) -> TrialData:
    data_dir = Path(data_dir)
    meta = json.loads((data_dir / "meta.json").read_text())
    obs = read_observations(data_dir / "observations.bin")
    with open(data_dir / "truth.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_frames = 1 + max(int(r["frame"]) for r in rows)
    n_slots = 1 + max(int(r["slot"]) for r in rows)
    truth = np.zeros((n_frames, n_slots, 4))
    act = np.zeros((n_frames, n_slots), dtype=np.uint8)
    for r in rows:
        t, n = int(r["frame"]), int(r["slot"])
        truth[t, n] = [float(r[k]) for k in ("px", "py", "vx", "vy")]
        act[t, n] = int(r["valid"])
    return TrialData(float(meta["snr_db"]), 0, 0, int(meta["seed"]), truth, act, obs,
                     float(meta["noise_variance"]))


def cmd_track(args):
    cfg = _single_trial_config(_load_config(args))
    out = cfg.output
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(exist_ok=True)
    data = _load_synth(cfg, args.data) if args.data else generate_trial(cfg, 0, 0)
    n = cfg.particles[0]
    for method in cfg.methods:
        result, fres = run_cell(cfg, data, method, n, dump_particles=args.dump_particles)
        save_result(out, result)
        write_trajectory_csv(out / "trajectories" / f"{result.cell}.csv", result)
        if args.dump_particles:
            save_particles(out, result.cell, fres)
        print(f"{method:>9}  snr={data.snr_db:+g} dB  n_p={n}  rmse={result.rmse:.4f} m  "
              f"degenerate={result.n_degenerate}  ({result.wall_seconds:.1f}s)")


def cmd_grid(args):
    cfg = _load_config(args)
    results = run_grid(cfg, jobs=args.jobs, dump_particles=args.dump_particles)
    summary = summarize(results)
    write_summary_csv(cfg.output / "summary.csv", summary)
    table = format_table(summary)
    (cfg.output / "table.txt").write_text(table + "\n")
    print(table)


def cmd_summarize(args):
    out = Path(args.out or "results")
    results = load_results(out)
    summary = summarize(results)
    write_summary_csv(out / "summary.csv", summary)
    table = format_table(summary)
    (out / "table.txt").write_text(table + "\n")
    print(table)


def cmd_export(args):
    out = Path(args.out or "results")
    dest = Path(args.dest) if args.dest else out / "plotdata"
    results = load_results(out)
    written = export_plotdata(results, dest, particle_dir=out / "particles",
                              max_particles=args.max_particles)
    print(f"wrote {len(written['trajectories'])} trajectory files, "
          f"{len(written['particles'])} particle files, {written['rmse']}")
    if args.figures:
        from .plots import render_figures
        figs = render_figures(dest)
        print(f"rendered {len(figs)} figures under {dest / 'figures'}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subspace-tbd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=False):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--preset", default="paper", help="built-in preset (default: paper)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")
        if grid:
            sp.add_argument("--snr", type=float, nargs="+", help="SNR list in dB")
            sp.add_argument("--particles", type=int, nargs="+", help="particle counts")
            sp.add_argument("--trials", type=int, help="trials per cell")
            sp.add_argument("--method", nargs="+", choices=["subspace", "baseline", "both"])
        else:
            sp.add_argument("--snr", type=float, help="SNR in dB")

    sp = sub.add_parser("synth", help="generate one truth + observation tensor")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("track", help="run filter(s) on one dataset")
    common(sp)
    sp.add_argument("--particles", type=int, help="particle count")
    sp.add_argument("--method", choices=["subspace", "baseline", "both"], default="both")
    sp.add_argument("--data", help="directory written by `synth` (default: generate)")
    sp.add_argument("--dump-particles", action="store_true")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("grid", help="run the SNR x n_p x trial grid")
    common(sp, grid=True)
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.add_argument("--dump-particles", action="store_true")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("summarize", help="median/min/max RMSE table of a results dir")
    sp.add_argument("--out", help="results directory (default: results)")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("export", help="write plot-data CSVs (and optionally figures)")
    sp.add_argument("--out", help="results directory (default: results)")
    sp.add_argument("--dest", help="export directory (default: <out>/plotdata)")
    sp.add_argument("--max-particles", type=int, default=200,
                    help="particles per frame kept in scatter exports")
    sp.add_argument("--figures", action="store_true", help="also render PNG figures")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GenerationFailedError, NotPSDError, SNRUndefinedError, NearFieldError) as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
