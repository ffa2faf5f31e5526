"""Observation log-likelihoods and the soft room-boundary factor.

Two scores are provided, both up to an additive constant that depends only
on the activity pattern:

* subspace: ``sum_f kappa_f * ||P_f z_tf||^2`` on unit-normalized bins, with
  ``P_f`` the projector onto the span of the valid slots' steering vectors;
* baseline: ``-sum_f ||z~_tf - sum_n a_n h_f(x_n)||^2 / sigma_v2`` on raw data.

The per-frame functions (``subspace_loglik``, ``baseline_loglik``) take
explicit projectors / predictions and serve as references.  The batched
``SubspaceLikelihood`` and ``BaselineLikelihood`` evaluate a whole particle
ensemble for one activity pattern at a time, so scores of particles with
different activity are never compared.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import residual_energy, subspace_moments
from .errors import NearFieldError
from .wavefield import COND_THRESHOLD, R_MIN

ZERO_NORM = 1e-300


@dataclass(frozen=True)
class BinghamParams:
    kappa: np.ndarray | float = 10.0


@dataclass(frozen=True)
class BaselineParams:
    sigma_v2: float

    def __post_init__(self):
        if not self.sigma_v2 > 0:
            raise ValueError("sigma_v2 must be positive")


@dataclass(frozen=True)
class BoundaryParams:
    tau: float = 0.05

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def normalize_frame(frame):
    """Scale each bin column of an ``(M, F)`` frame to unit norm.

    Returns ``(z, valid)``; bins whose norm is below 1e-300 are left at zero
    and flagged invalid.
    """
    frame = np.asarray(frame, dtype=complex)
    norms = np.linalg.norm(frame, axis=0)
    valid = norms >= ZERO_NORM
    z = np.zeros_like(frame)
    z[:, valid] = frame[:, valid] / norms[valid]
    return z, valid


def _kappa_vector(kappa, n_freqs):
    k = np.broadcast_to(np.asarray(kappa, dtype=float), (n_freqs,)).copy()
    if np.any(k <= 0):
        raise ValueError("kappa must be positive")
    return k


def subspace_loglik(z_frame, projectors, params: BinghamParams = BinghamParams(),
                    valid=None) -> float:
    """``sum_f kappa_f ||P_f z_f||^2`` over valid bins of a normalized frame."""
    z = np.asarray(z_frame, dtype=complex)
    n_freqs = z.shape[1]
    kappa = _kappa_vector(params.kappa, n_freqs)
    if valid is None:
        valid = np.linalg.norm(z, axis=0) >= ZERO_NORM
    total = 0.0
    for f in range(n_freqs):
        if valid[f]:
            pz = projectors[f] @ z[:, f]
            total += kappa[f] * float(np.vdot(pz, pz).real)
    return total


def baseline_loglik(z_frame, predicted, params: BaselineParams) -> float:
    """``-sum_f ||z~_f - predicted_f||^2 / sigma_v2`` for ``(M, F)`` arrays."""
    r = np.asarray(z_frame, dtype=complex) - np.asarray(predicted, dtype=complex)
    return -float(np.sum(r.real ** 2 + r.imag ** 2)) / params.sigma_v2


def boundary_log_factor(state, active, room, params: BoundaryParams = BoundaryParams()):
    """``-sum_n d_n^2 / tau^2`` over valid slots, ``d_n`` = distance outside the room.

    ``state`` may be ``(N, 4)`` or batched ``(..., N, 4)``; the result drops
    the slot axis.
    """
    state = np.asarray(state, dtype=float)
    idx = np.flatnonzero(np.asarray(active))
    if idx.size == 0:
        return np.zeros(state.shape[:-2]) if state.ndim > 2 else 0.0
    d = room.distance_outside(state[..., idx, :2])
    out = -np.sum(d ** 2, axis=-1) / params.tau ** 2
    return out if state.ndim > 2 else float(out)


class _SteeringBank:
    """Steering vectors for many source positions at once.

    On a uniform frequency grid the phase ramp is built by repeated complex
    multiplication instead of one ``exp`` per (position, bin, mic).
    """

    def __init__(self, mics, grid, c, r_min=R_MIN):
        self.mics = np.asarray(getattr(mics, "positions", mics), dtype=float)
        self.freqs = np.asarray(getattr(grid, "frequencies", grid), dtype=float)
        self.c = float(c)
        self.r_min = r_min
        d = np.diff(self.freqs)
        self.step = (float(d[0]) if d.size and np.allclose(d, d[0], rtol=1e-12, atol=0)
                     else None)

    def __call__(self, positions):
        """Return ``h`` of shape ``(P, F, M)`` and ``sum_m 1/r_m^2`` of shape ``(P,)``."""
        r = np.sqrt((positions[:, None, 0] - self.mics[:, 0]) ** 2
                    + (positions[:, None, 1] - self.mics[:, 1]) ** 2)
        if np.any(r < self.r_min):
            raise NearFieldError(f"particle within {self.r_min} m of a microphone")
        inv_r = 1.0 / r
        k = -2.0 * np.pi / self.c
        n_freqs = self.freqs.size
        h = np.empty((r.shape[0], n_freqs, r.shape[1]), dtype=complex)
        if self.step is None:
            h[:] = np.exp(1j * k * self.freqs[:, None] * r[:, None, :])
        else:
            h[:, 0] = np.exp(1j * k * self.freqs[0] * r)
            rot = np.exp(1j * k * self.step * r)
            for f in range(1, n_freqs):
                np.multiply(h[:, f - 1], rot, out=h[:, f])
        h *= inv_r[:, None, :]
        return h, np.sum(inv_r * inv_r, axis=1)


def _gram_energy(gram, b, cond_threshold):
    """``b^H G^+ b`` for stacked Hermitian ``G``, dropping eigenvalues below max/thr."""
    w, v = np.linalg.eigh(gram)
    keep = w > w[..., -1:] / cond_threshold
    coef = np.einsum("...ji,...j->...i", v.conj(), b)
    safe = np.where(keep, w, 1.0)
    return np.sum(np.where(keep, np.abs(coef) ** 2 / safe, 0.0), axis=-1)


class _EnsembleLikelihood:
    chunk_size = 256

    def __init__(self, mics, grid, c, backend="numba"):
        if backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {backend!r}")
        self.bank = _SteeringBank(mics, grid, c)
        self.backend = backend
        self.n_mics = self.bank.mics.shape[0]
        self.n_freqs = self.bank.freqs.size

    def _check_frame(self, frame):
        frame = np.asarray(frame)
        if frame.shape != (self.n_mics, self.n_freqs):
            raise ValueError(
                f"frame shape {frame.shape} != ({self.n_mics}, {self.n_freqs})")
        return frame

    def _check_rmin(self, r_min):
        if r_min < self.bank.r_min:
            raise NearFieldError(f"particle within {self.bank.r_min} m of a microphone")

    def __call__(self, states, active, prepared, workers: int = 1) -> np.ndarray:
        """Log-likelihood of every particle; ``states`` is ``(P, N, >=2)``.

        Particles are processed in fixed-size chunks so results do not depend
        on ``workers``.
        """
        states = np.asarray(states, dtype=float)
        idx = np.flatnonzero(np.asarray(active))
        n = states.shape[0]
        starts = range(0, n, self.chunk_size)

        def work(s):
            pos = np.ascontiguousarray(states[s:s + self.chunk_size][:, idx, :2])
            return self._evaluate(pos, prepared)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(work, starts))
        else:
            parts = [work(s) for s in starts]
        return np.concatenate(parts) if parts else np.zeros(0)


class SubspaceLikelihood(_EnsembleLikelihood):
    """Projection-energy score of normalized observations."""

    name = "subspace"

    def __init__(self, mics, grid, c, params: BinghamParams = BinghamParams(),
                 cond_threshold: float = COND_THRESHOLD, backend="numba"):
        super().__init__(mics, grid, c, backend)
        self.kappa = _kappa_vector(params.kappa, self.n_freqs)
        self.cond_threshold = cond_threshold

    def prepare(self, frame):
        z, valid = normalize_frame(self._check_frame(frame))
        # (F, M) layout matches the steering bank; invalid bins get weight 0
        return np.ascontiguousarray(z.T), np.where(valid, self.kappa, 0.0)

    def _moments(self, pos, zt):
        if self.backend == "numba":
            bank = self.bank
            b, g, gram, r_min = subspace_moments(
                pos, bank.mics, bank.freqs, bank.step is not None, bank.c, zt)
            self._check_rmin(r_min)
            return b, g, gram
        n_part, k = pos.shape[:2]
        hs, gs = zip(*(self.bank(pos[:, j]) for j in range(k)))
        b = np.stack([np.einsum("pfm,fm->pf", h.conj(), zt) for h in hs], axis=1)
        gram = np.zeros((n_part, k, k, self.n_freqs), dtype=complex)
        for i in range(k):
            for j in range(i + 1, k):
                gram[:, i, j] = np.einsum("pfm,pfm->pf", hs[i].conj(), hs[j])
        return b, np.stack(gs, axis=1), gram

    def _evaluate(self, pos, prepared):
        zt, kappa = prepared
        n_part, k = pos.shape[:2]
        if k == 0:
            return np.zeros(n_part)
        b, g, gram = self._moments(pos, zt)
        if k == 1:
            energy = (b[:, 0].real ** 2 + b[:, 0].imag ** 2) / g[:, 0, None]
        elif k == 2:
            energy = self._two_slot(g, gram[:, 0, 1], b[:, 0], b[:, 1])
        else:
            full = np.moveaxis(gram, -1, 1).copy()
            full += np.conj(np.swapaxes(full, -1, -2))
            idx = np.arange(k)
            full[..., idx, idx] = g[:, None, :]
            energy = _gram_energy(full, np.moveaxis(b, 1, -1), self.cond_threshold)
        return energy @ kappa

    def _two_slot(self, g, g12, b1, b2):
        g11, g22 = g[:, 0, None], g[:, 1, None]
        abs12 = g12.real ** 2 + g12.imag ** 2
        det = g11 * g22 - abs12
        # eigenvalues of [[g11, g12], [g12*, g22]]
        half_tr = 0.5 * (g11 + g22)
        disc = np.sqrt(0.25 * (g11 - g22) ** 2 + abs12)
        lam_max, lam_min = half_tr + disc, half_tr - disc
        ok = lam_min > lam_max / self.cond_threshold
        num = (g22 * (b1.real ** 2 + b1.imag ** 2) + g11 * (b2.real ** 2 + b2.imag ** 2)
               - 2.0 * np.real(b1.conj() * g12 * b2))
        energy = np.zeros_like(det)
        np.divide(num, det, out=energy, where=ok)
        if not ok.all():
            bad = ~ok
            gram = np.empty((int(bad.sum()), 2, 2), dtype=complex)
            gram[:, 0, 0] = np.broadcast_to(g11, bad.shape)[bad]
            gram[:, 1, 1] = np.broadcast_to(g22, bad.shape)[bad]
            gram[:, 0, 1] = g12[bad]
            gram[:, 1, 0] = g12[bad].conj()
            bb = np.stack([b1[bad], b2[bad]], axis=-1)
            energy[bad] = _gram_energy(gram, bb, self.cond_threshold)
        return energy


class BaselineLikelihood(_EnsembleLikelihood):
    """Gaussian residual score assuming unit emitted coefficients."""

    name = "baseline"

    def __init__(self, mics, grid, c, params: BaselineParams, backend="numba"):
        super().__init__(mics, grid, c, backend)
        self.sigma_v2 = params.sigma_v2

    def prepare(self, frame):
        return np.ascontiguousarray(self._check_frame(frame).astype(complex).T)

    def _evaluate(self, pos, zt):
        if self.backend == "numba":
            bank = self.bank
            sq, r_min = residual_energy(
                pos, bank.mics, bank.freqs, bank.step is not None, bank.c, zt)
            self._check_rmin(r_min)
            return -sq / self.sigma_v2
        resid = np.broadcast_to(zt, (pos.shape[0],) + zt.shape).copy()
        for j in range(pos.shape[1]):
            resid -= self.bank(pos[:, j])[0]
        return -np.sum(resid.real ** 2 + resid.imag ** 2, axis=(1, 2)) / self.sigma_v2
