import csv
import json
import logging

import numpy as np
import pytest
import yaml

from subspace_tbd.errors import UndefinedMetricError
from subspace_tbd.experiment.cli import main
from subspace_tbd.experiment.config import ConfigError, ExperimentConfig
from subspace_tbd.experiment.export import export_plotdata, write_trajectory_csv
from subspace_tbd.experiment.runner import (CellSummary, RunResult, format_table,
                                            generate_trial, load_results, rmse, run_grid,
                                            run_seed, summarize, trial_seed)

TINY = {
    "array": {"n_mics": 8},
    "stft": {"bin_lo": 13, "bin_hi": 17},
    "scenario": {"n_frames": 12, "activity": [[[0, 12]], [[6, 12]]]},
    "grid": {"snr_db": [0.0], "particles": [40], "trials": 1,
             "methods": ["subspace", "baseline"], "seed": 3},
}


def tiny_config(tmp_path, **grid):
    raw = json.loads(json.dumps(TINY))
    raw["grid"].update(grid)
    raw["output"] = str(tmp_path / "results")
    return ExperimentConfig(raw)


def test_rmse_examples():
    truth = np.array([[[0.0, 0.0]], [[1.0, 1.0]]])
    act = np.ones((2, 1))
    assert rmse(truth, truth, act) == 0.0
    est = truth.copy()
    est[1, 0] += [0.3, 0.4]
    assert abs(rmse(truth[1:], est[1:], act[1:]) - 0.5) < 1e-15
    assert abs(rmse(truth, est, act) - np.sqrt(0.125)) < 1e-15
    with pytest.raises(UndefinedMetricError):
        rmse(truth, est, np.zeros((2, 1)))
    # invalid pairs are never read, even when NaN
    est[0, 0] = np.nan
    assert abs(rmse(truth, est, np.array([[0], [1]])) - 0.5) < 1e-15


def _fake(method, snr, n, trial, value):
    return RunResult("cfg", "data", method, snr, n, trial, 0, value,
                     np.zeros((2, 1, 4)), np.zeros((2, 1, 2)), np.ones((2, 1), dtype=int),
                     np.ones(2))


def test_summarize_medians(caplog):
    res = [_fake("subspace", -10.0, 2000, k, v) for k, v in enumerate([5, 1, 4, 2, 3])]
    s = summarize(res)[0]
    assert (s.median, s.min, s.max) == (3.0, 1.0, 5.0)
    even = summarize([_fake("baseline", 0.0, 10, k, v) for k, v in enumerate([1, 2, 3, 4])])
    assert even[0].median == 2.5
    assert summarize([_fake("baseline", 0.0, 10, 0, 0.7)])[0].median == 0.7
    with caplog.at_level(logging.WARNING):
        out = summarize(res, cells=[("subspace", -10, 2000), ("baseline", -10, 2000)])
    assert len(out) == 1 and "no results" in caplog.text


def test_format_table_columns():
    summ = [CellSummary("baseline", -10.0, 2000, [1.0098]),
            CellSummary("subspace", -10.0, 2000, [0.0249, 0.0305, 0.0929])]
    lines = format_table(summ).splitlines()
    assert lines[0].split() == ["SNR", "n_p", "Conv.", "Prop.", "Prop.", "range"]
    assert lines[1].split() == ["-10", "2000", "1.0098", "0.0305", "0.0249--0.0929"]


def test_builtin_preset_values():
    cfg = ExperimentConfig.preset("paper")
    assert len(cfg.mics) == 40 and len(cfg.grid_frequencies) == 61
    assert cfg.grid_frequencies.frequencies[0] == 101.5625
    assert (cfg.motion.dt, cfg.motion.q, cfg.birth.velocity_std) == (0.128, 0.09, 0.5)
    assert (cfg.boundary.tau, cfg.kappa) == (0.05, 10.0)
    act = cfg.activity
    assert act.shape == (200, 2) and act[:, 0].all() and act[:, 1].sum() == 100
    assert act[100:, 1].all()
    n_cells = len(cfg.snrs) * len(cfg.particles) * cfg.trials * len(cfg.methods)
    assert n_cells == 90


def test_config_roundtrip_and_errors(tmp_path):
    cfg = tiny_config(tmp_path)
    path = tmp_path / "c.yaml"
    cfg.dump(path)
    assert ExperimentConfig.load(path).raw == cfg.raw
    (tmp_path / "p.yaml").write_text("preset: paper\ngrid:\n  trials: 2\n")
    assert ExperimentConfig.load(tmp_path / "p.yaml").trials == 2
    bad = [{"grid": {"trials": 0}}, {"grid": {"snr_db": []}}, {"grid": {"methods": ["x"]}},
           {"stft": {"bin_lo": 80, "bin_hi": 13}}, {"grid": {"particles": [0]}}]
    for raw in bad:
        with pytest.raises(ConfigError):
            ExperimentConfig(raw)
    with pytest.raises(ConfigError):
        ExperimentConfig.preset("nope")
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.yaml")


def test_fingerprint_scope(tmp_path):
    cfg = tiny_config(tmp_path)
    assert cfg.fingerprint() == cfg.with_overrides(particles=[99], trials=4).fingerprint()
    assert cfg.fingerprint() != cfg.with_overrides(seed=4).fingerprint()


def test_seed_derivation_is_stable():
    assert trial_seed(0, 0, 0) == trial_seed(0, 0, 0)
    seeds = {trial_seed(0, i, k) for i in range(3) for k in range(5)}
    assert len(seeds) == 15
    t = trial_seed(0, 0, 0)
    assert len({run_seed(t, m, n) for m in ("subspace", "baseline") for n in (1, 2)}) == 4


def test_grid_shares_data_and_is_deterministic(tmp_path):
    cfg = tiny_config(tmp_path)
    res = run_grid(cfg, out=tmp_path / "a")
    assert len(res) == 2
    assert res[0].data_fingerprint == res[1].data_fingerprint
    assert {r.method for r in res} == {"subspace", "baseline"}
    run_grid(cfg, out=tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a" / "runs").iterdir()):
        assert (tmp_path / "a" / "runs" / name).read_bytes() == \
            (tmp_path / "b" / "runs" / name).read_bytes()
    assert (tmp_path / "a" / "index.csv").read_bytes() == \
        (tmp_path / "b" / "index.csv").read_bytes()


def test_grid_resumes(tmp_path):
    cfg = tiny_config(tmp_path, methods=["subspace"])
    out = tmp_path / "r"
    run_grid(cfg, out=out)
    stamp = (out / "runs").stat().st_mtime_ns, (out / "timing.csv").read_text()
    full = tiny_config(tmp_path)
    res = run_grid(full, out=out)
    assert len(res) == 2
    # only the baseline cell was added to the timing log
    timing = (out / "timing.csv").read_text().splitlines()
    assert len(timing) == 3 and timing[:2] == stamp[1].splitlines()
    with open(out / "index.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_grid_two_trials_share_per_trial(tmp_path):
    cfg = tiny_config(tmp_path, trials=2, particles=[20, 30], methods=["subspace"])
    res = run_grid(cfg, out=tmp_path / "g")
    assert len(res) == 4
    by_trial = {}
    for r in res:
        by_trial.setdefault(r.trial, set()).add(r.data_fingerprint)
    assert all(len(v) == 1 for v in by_trial.values())
    assert by_trial[0] != by_trial[1]


def test_generate_trial_reproducible(tmp_path):
    cfg = tiny_config(tmp_path)
    a, b = generate_trial(cfg, 0, 0), generate_trial(cfg, 0, 0)
    assert a.fingerprint == b.fingerprint
    assert np.array_equal(a.truth, b.truth)


def test_export_shapes(tmp_path):
    written = export_plotdata([], tmp_path / "empty")
    assert (tmp_path / "empty" / "rmse_trials.csv").read_text() == \
        "method,snr_db,n_particles\n"
    assert written["trajectories"] == []

    cfg = tiny_config(tmp_path)
    res = run_grid(cfg, out=tmp_path / "x", dump_particles=True)
    written = export_plotdata(res, tmp_path / "exp", particle_dir=tmp_path / "x" / "particles",
                              max_particles=7)
    with open(written["trajectories"][0]) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["frame", "slot", "true_x", "true_y", "est_x", "est_y"]
    assert len(rows) == 12 + 6
    assert [int(r["frame"]) for r in rows if r["slot"] == "1"] == list(range(6, 12))
    with open(written["particles"][0]) as fh:
        prow = list(csv.DictReader(fh))
    assert len(prow) == 7 * (12 + 6)


def test_export_full_grid_table(tmp_path):
    res = [_fake(m, s, n, k, 0.1 * k)
           for m in ("subspace", "baseline") for s in (-10.0, 0.0, 10.0)
           for n in (2000, 4000, 8000) for k in range(5)]
    export_plotdata(res, tmp_path)
    with open(tmp_path / "rmse_trials.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "snr_db", "n_particles"] + [f"trial_{k}" for k in range(5)]
    assert len(rows) == 1 + 18


def test_result_json_roundtrip(tmp_path):
    cfg = tiny_config(tmp_path)
    res = run_grid(cfg, out=tmp_path / "j")
    back = load_results(tmp_path / "j")
    for a in res:
        b = next(r for r in back if r.cell == a.cell)
        assert b.rmse == a.rmse
        assert np.array_equal(np.isnan(a.estimates), np.isnan(b.estimates))
        np.testing.assert_array_equal(a.estimates[~np.isnan(a.estimates)],
                                      b.estimates[~np.isnan(b.estimates)])


def _write_cfg(tmp_path, **over):
    raw = json.loads(json.dumps(TINY))
    for k, v in over.items():
        raw.setdefault(k, {}).update(v)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def test_cli_end_to_end(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    syn = tmp_path / "syn"
    assert main(["synth", "--config", cfg, "--snr", "-10", "--out", str(syn)]) == 0
    assert (syn / "observations.bin").exists() and (syn / "truth.csv").exists()
    trk = tmp_path / "trk"
    assert main(["track", "--config", cfg, "--data", str(syn), "--snr", "-10",
                 "--particles", "30", "--out", str(trk), "--dump-particles"]) == 0
    assert len(list((trk / "runs").glob("*.json"))) == 2
    # generating on the fly from the same seed gives the same data
    trk2 = tmp_path / "trk2"
    assert main(["track", "--config", cfg, "--snr", "-10", "--particles", "30",
                 "--method", "subspace", "--out", str(trk2)]) == 0
    a = json.loads(next((trk / "runs").glob("subspace*.json")).read_text())
    b = json.loads(next((trk2 / "runs").glob("subspace*.json")).read_text())
    assert a["data_fingerprint"] == b["data_fingerprint"] and a["rmse"] == b["rmse"]

    grid = tmp_path / "grid"
    assert main(["grid", "--config", cfg, "--snr", "0", "10", "--particles", "20",
                 "--trials", "1", "--out", str(grid)]) == 0
    out = capsys.readouterr().out
    assert "Conv." in out and "Prop." in out
    assert main(["summarize", "--out", str(grid)]) == 0
    assert (grid / "summary.csv").exists() and (grid / "table.txt").exists()
    assert main(["export", "--out", str(trk), "--figures"]) == 0
    figs = sorted(p.name for p in (trk / "plotdata" / "figures").glob("*.png"))
    assert "rmse_vs_snr.png" in figs and len(figs) == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["grid", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = _write_cfg(tmp_path, grid={"trials": 0})
    assert main(["grid", "--config", bad]) == 2
    hopeless = _write_cfg(tmp_path, scenario={"motion": {"q": 80.0}, "max_attempts": 2,
                                              "n_frames": 50,
                                              "activity": [[[0, 50]], [[6, 50]]]})
    assert main(["synth", "--config", hopeless, "--out", str(tmp_path / "h")]) == 3
    assert "generation error" in capsys.readouterr().err
