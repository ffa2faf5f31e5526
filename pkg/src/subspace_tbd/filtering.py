"""Auxiliary particle filter over fixed target slots with a given activity schedule.

A particle carries an ``(N, 4)`` multi-target state.  Weights live in the log
domain throughout.  Randomness for frame ``t`` comes from a generator seeded
by ``SeedSequence(seed, spawn_key=(t,))`` and is drawn as whole-ensemble
arrays of fixed shape, so a run is reproducible and independent of how the
likelihood work is split across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .likelihood import (BaselineLikelihood, BaselineParams, BinghamParams,
                         BoundaryParams, SubspaceLikelihood, boundary_log_factor)
from .scenario import BirthModel, MotionModel, RoomConfig, ncv_propagate, sample_birth

log = logging.getLogger(__name__)

METHODS = ("subspace", "baseline")


@dataclass
class ParticleEnsemble:
    states: np.ndarray          # (P, N, 4)
    log_weights: np.ndarray     # (P,), normalized

    def __len__(self):
        return self.states.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))


@dataclass
class FilterConfig:
    n_particles: int = 2000
    likelihood: str = "subspace"
    motion: MotionModel = field(default_factory=MotionModel)
    birth: BirthModel = field(default_factory=BirthModel)
    boundary: BoundaryParams = field(default_factory=BoundaryParams)
    seed: int = 0
    kappa: float = 10.0
    sigma_v2: float | None = None
    workers: int = 1

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.likelihood not in METHODS:
            raise ValueError(f"likelihood must be one of {METHODS}, got {self.likelihood!r}")


@dataclass
class FilterResult:
    estimates: np.ndarray        # (T, N, 4), NaN where the slot is invalid
    ess: np.ndarray              # (T,)
    degenerate: np.ndarray       # (T,) bool
    particles: np.ndarray | None = None      # (T, P, N, 2) positions if dumped
    particle_log_weights: np.ndarray | None = None

    @property
    def n_degenerate(self) -> int:
        return int(self.degenerate.sum())


def normalize_log_weights(logw):
    """Return ``(normalized, ok)``; ``ok`` is False when no weight is finite."""
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not finite.any():
        return np.full(logw.shape, -np.log(logw.size)), False
    logw = np.where(finite, logw, -np.inf)
    return logw - logsumexp(logw), True


def systematic_resample(weights, count: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling; returns nondecreasing ancestor indices."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a non-negative vector summing to 1")
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (rng.uniform() + np.arange(count)) / count
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


def mmse_estimate(ensemble: ParticleEnsemble, active) -> np.ndarray:
    """Weighted mean state per slot; rows of invalid slots are NaN."""
    active = np.asarray(active).astype(bool)
    w = ensemble.weights
    est = np.full(ensemble.states.shape[1:], np.nan)
    if active.any():
        est[active] = np.einsum("p,pnd->nd", w, ensemble.states[:, active]) / w.sum()
    return est


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(frame,)))


def _score(likelihood, states, active, prepared, room, boundary, workers):
    return (likelihood(states, active, prepared, workers=workers)
            + boundary_log_factor(states, active, room, boundary))


def initialize(n_particles, n_slots, active, frame, likelihood, birth: BirthModel,
               room, boundary, rng, workers=1):
    """Birth-initialize valid slots and weight against the first frame."""
    active = np.asarray(active).astype(bool)
    states = np.zeros((n_particles, n_slots, 4))
    states[:, active] = sample_birth(birth, rng, (n_particles, int(active.sum())))
    prepared = likelihood.prepare(frame)
    logw, ok = normalize_log_weights(
        _score(likelihood, states, active, prepared, room, boundary, workers))
    return ParticleEnsemble(states, logw), ok


def apf_step(ensemble: ParticleEnsemble, frame, active_prev, active_now, likelihood,
             motion: MotionModel, birth: BirthModel, room: RoomConfig,
             boundary: BoundaryParams, rng: np.random.Generator, workers: int = 1):
    """One auxiliary-PF update.  Returns ``(ensemble, ok)``.

    ``ok`` is False when every second-stage weight was non-finite and the
    weights were reset to uniform.
    """
    prev = np.asarray(active_prev).astype(bool)
    now = np.asarray(active_now).astype(bool)
    surv = prev & now
    newborn = now & ~prev
    n_part = len(ensemble)
    prepared = likelihood.prepare(frame)

    # first stage: score a deterministic look-ahead point per particle
    mu = ensemble.states.copy()
    mu[:, surv] = ncv_propagate(mu[:, surv], motion)
    mu[:, newborn] = birth.mean
    first = _score(likelihood, mu, now, prepared, room, boundary, workers)
    aux, _ = normalize_log_weights(ensemble.log_weights + first)
    ancestors = systematic_resample(np.exp(aux), n_part, rng)

    states = ensemble.states[ancestors]
    noise = rng.standard_normal((n_part, states.shape[1], 2))
    states[:, surv] = ncv_propagate(states[:, surv], motion, noise[:, surv])
    if newborn.any():
        states[:, newborn] = sample_birth(birth, rng, (n_part, int(newborn.sum())))

    second = _score(likelihood, states, now, prepared, room, boundary, workers)
    with np.errstate(invalid="ignore"):
        logw, ok = normalize_log_weights(second - first[ancestors])
    return ParticleEnsemble(states, logw), ok


def make_likelihood(config: FilterConfig, mics, grid, c: float):
    if config.likelihood == "subspace":
        return SubspaceLikelihood(mics, grid, c, BinghamParams(config.kappa))
    if config.sigma_v2 is None:
        raise ValueError("baseline likelihood needs sigma_v2")
    return BaselineLikelihood(mics, grid, c, BaselineParams(config.sigma_v2))


def run_filter(config: FilterConfig, observations, activity, mics, grid, room: RoomConfig,
               likelihood=None, dump_particles: bool = False) -> FilterResult:
    """Track over all frames of an ``(M, F, T)`` observation tensor.

    ``likelihood`` overrides the one built from ``config`` (any object with
    ``prepare(frame)`` and ``__call__(states, active, prepared, workers=)``).
    """
    obs = np.asarray(observations)
    act = np.asarray(activity).astype(bool)
    n_mics = len(getattr(mics, "positions", mics))
    n_freqs = len(getattr(grid, "frequencies", grid))
    if obs.ndim != 3 or obs.shape[:2] != (n_mics, n_freqs):
        raise ValueError(f"observations shape {obs.shape} does not match M={n_mics}, F={n_freqs}")
    if act.ndim != 2 or act.shape[0] != obs.shape[2]:
        raise ValueError(f"activity shape {act.shape} does not match T={obs.shape[2]}")
    n_frames, n_slots = act.shape
    if likelihood is None:
        likelihood = make_likelihood(config, mics, grid, room.speed_of_sound)

    estimates = np.full((n_frames, n_slots, 4), np.nan)
    ess = np.zeros(n_frames)
    degenerate = np.zeros(n_frames, dtype=bool)
    dump = np.zeros((n_frames, config.n_particles, n_slots, 2)) if dump_particles else None
    dump_w = np.zeros((n_frames, config.n_particles)) if dump_particles else None

    ensemble = None
    for t in range(n_frames):
        rng = frame_rng(config.seed, t)
        if ensemble is None:
            ensemble, ok = initialize(config.n_particles, n_slots, act[0], obs[:, :, 0],
                                      likelihood, config.birth, room, config.boundary,
                                      rng, config.workers)
        else:
            ensemble, ok = apf_step(ensemble, obs[:, :, t], act[t - 1], act[t], likelihood,
                                    config.motion, config.birth, room, config.boundary,
                                    rng, config.workers)
        if not ok:
            degenerate[t] = True
            log.warning("frame %d: all weights degenerate, reset to uniform", t)
        estimates[t] = mmse_estimate(ensemble, act[t])
        ess[t] = ensemble.ess()
        if dump is not None:
            dump[t] = ensemble.states[..., :2]
            dump_w[t] = ensemble.log_weights
    return FilterResult(estimates, ess, degenerate, dump, dump_w)
