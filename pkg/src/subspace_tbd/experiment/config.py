"""Experiment configuration: YAML file format and the built-in ``paper`` preset."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..filtering import METHODS
from ..likelihood import BoundaryParams
from ..scenario import (BirthModel, MotionModel, RoomConfig, activity_from_intervals,
                        build_perimeter_array)
from ..wavefield import stft_grid


class ConfigError(ValueError):
    pass


BASE_PRESET = {
    "room": {"width": 3.0, "height": 3.0, "speed_of_sound": 343.0},
    "array": {"n_mics": 40},
    "stft": {"sample_rate": 8000.0, "dft_size": 1024, "bin_lo": 13, "bin_hi": 73},
    "scenario": {
        "n_frames": 200,
        # per slot: list of [start, stop) frame intervals
        "activity": [[[0, 200]], [[100, 200]]],
        "motion": {"dt": 0.128, "q": 0.09},
        "birth_velocity_std": 0.5,
        "max_attempts": 10000,
    },
    "synthesis": {"loading": 1e-6},
    "filter": {"kappa": 10.0, "tau": 0.05, "workers": 1},
    "grid": {
        "snr_db": [-10.0, 0.0, 10.0],
        "particles": [2000, 4000, 8000],
        "trials": 5,
        "methods": ["subspace", "baseline"],
        "seed": 0,
    },
    "output": "results",
}

PRESETS = {"paper": BASE_PRESET}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Everything needed to regenerate data and rerun the filters.

    Stored as the nested mapping in ``raw``; typed accessors build the
    library objects on demand.
    """

    raw: dict = field(default_factory=lambda: copy.deepcopy(BASE_PRESET))

    def __post_init__(self):
        self.raw = _merge(BASE_PRESET, self.raw)
        self.validate()

    # construction -----------------------------------------------------------
    @classmethod
    def preset(cls, name: str = "paper") -> "ExperimentConfig":
        try:
            return cls(copy.deepcopy(PRESETS[name]))
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        preset = data.pop("preset", None)
        base = PRESETS[preset] if preset else {}
        return cls(_merge(base, data))

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.raw, sort_keys=False))

    def with_overrides(self, **grid) -> "ExperimentConfig":
        """Copy with ``grid`` entries (and ``output``/``seed``) replaced when not None."""
        raw = copy.deepcopy(self.raw)
        for key, value in grid.items():
            if value is None:
                continue
            if key == "output":
                raw["output"] = str(value)
            else:
                raw["grid"][key] = value
        return ExperimentConfig(raw)

    def validate(self):
        g = self.raw["grid"]
        for key in ("snr_db", "particles", "methods"):
            if not isinstance(g[key], list) or not g[key]:
                raise ConfigError(f"grid.{key} must be a non-empty list")
        if int(g["trials"]) < 1:
            raise ConfigError("grid.trials must be >= 1")
        bad = [m for m in g["methods"] if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        try:
            g["snr_db"] = [float(s) for s in g["snr_db"]]
            g["particles"] = [int(n) for n in g["particles"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid values: {exc}") from exc
        if any(n < 1 for n in g["particles"]):
            raise ConfigError("particle counts must be >= 1")
        try:
            self.room, self.grid_frequencies, self.activity, self.mics
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    # typed views ------------------------------------------------------------
    @property
    def room(self) -> RoomConfig:
        return RoomConfig(**self.raw["room"])

    @property
    def mics(self):
        return build_perimeter_array(self.room, int(self.raw["array"]["n_mics"]))

    @property
    def grid_frequencies(self):
        s = self.raw["stft"]
        return stft_grid(float(s["sample_rate"]), int(s["dft_size"]),
                         int(s["bin_lo"]), int(s["bin_hi"]))

    @property
    def activity(self):
        sc = self.raw["scenario"]
        return activity_from_intervals(int(sc["n_frames"]), sc["activity"])

    @property
    def motion(self) -> MotionModel:
        m = self.raw["scenario"]["motion"]
        return MotionModel(dt=float(m["dt"]), q=float(m["q"]))

    @property
    def birth(self) -> BirthModel:
        return BirthModel(self.room, float(self.raw["scenario"]["birth_velocity_std"]))

    @property
    def boundary(self) -> BoundaryParams:
        return BoundaryParams(float(self.raw["filter"]["tau"]))

    @property
    def kappa(self) -> float:
        return float(self.raw["filter"]["kappa"])

    @property
    def workers(self) -> int:
        return int(self.raw["filter"].get("workers", 1))

    @property
    def max_attempts(self) -> int:
        return int(self.raw["scenario"]["max_attempts"])

    @property
    def loading(self) -> float:
        return float(self.raw["synthesis"]["loading"])

    @property
    def snrs(self) -> list[float]:
        return [float(s) for s in self.raw["grid"]["snr_db"]]

    @property
    def particles(self) -> list[int]:
        return [int(n) for n in self.raw["grid"]["particles"]]

    @property
    def trials(self) -> int:
        return int(self.raw["grid"]["trials"])

    @property
    def methods(self) -> list[str]:
        return list(self.raw["grid"]["methods"])

    @property
    def seed(self) -> int:
        return int(self.raw["grid"]["seed"])

    @property
    def output(self) -> Path:
        return Path(self.raw["output"])

    def fingerprint(self) -> str:
        """Hash of every setting that affects generated data or filter output.

        Particle counts, trial count, methods and the output path are left
        out: they select cells but do not change any single cell's result.
        """
        raw = copy.deepcopy(self.raw)
        raw.pop("output", None)
        raw["filter"].pop("workers", None)
        for key in ("particles", "trials", "methods"):
            raw["grid"].pop(key, None)
        blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
