"""Frequency grid, free-field steering vectors and signal-subspace projectors.

Steering convention: entry ``m`` of ``h_f(p)`` is ``exp(-2j*pi*f*r_m/c) / r_m``
with ``r_m`` the source-to-mic distance.  The synthesizer and both
likelihoods share this function, so the convention is consistent end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NearFieldError

R_MIN = 1e-6
COND_THRESHOLD = 1e10


@dataclass(frozen=True)
class FrequencyGrid:
    frequencies: np.ndarray

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if f.ndim != 1 or f.size == 0:
            raise ValueError("frequency grid must be a non-empty 1-D array")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be positive and strictly increasing")
        object.__setattr__(self, "frequencies", f)

    def __len__(self):
        return self.frequencies.size

    @property
    def uniform_step(self) -> float | None:
        """Bin spacing if the grid is uniform, else None."""
        f = self.frequencies
        if f.size < 2:
            return None
        d = np.diff(f)
        return float(d[0]) if np.allclose(d, d[0], rtol=1e-12, atol=0) else None


def stft_grid(sample_rate: float, dft_size: int, bin_lo: int, bin_hi: int) -> FrequencyGrid:
    """Centre frequencies ``k * sample_rate / dft_size`` for ``k = bin_lo..bin_hi``."""
    if not 0 < bin_lo <= bin_hi < dft_size / 2:
        raise ValueError(
            f"need 0 < bin_lo <= bin_hi < dft_size/2, got {bin_lo}, {bin_hi}, {dft_size}")
    k = np.arange(bin_lo, bin_hi + 1)
    return FrequencyGrid(k * (sample_rate / dft_size))


def _distances(mic_positions, source_positions, r_min):
    mics = np.asarray(mic_positions, dtype=float)
    src = np.asarray(source_positions, dtype=float)
    r = np.linalg.norm(src[..., None, :] - mics, axis=-1)
    if np.any(r < r_min):
        raise NearFieldError(f"source within {r_min} m of a microphone")
    return r


def steering(mics, source_position, f: float, c: float, r_min: float = R_MIN) -> np.ndarray:
    """Length-M steering vector of a point source at ``source_position``."""
    pos = getattr(mics, "positions", mics)
    r = _distances(pos, np.asarray(source_position, dtype=float)[:2], r_min)
    return np.exp(-2j * np.pi * f * r / c) / r


def steering_vectors(mics, source_positions, frequencies, c: float,
                     r_min: float = R_MIN) -> np.ndarray:
    """Batched steering vectors, shape ``(..., F, M)`` for positions ``(..., 2)``."""
    pos = getattr(mics, "positions", mics)
    r = _distances(pos, source_positions, r_min)
    f = np.asarray(frequencies, dtype=float)
    phase = (-2.0 * np.pi / c) * f[:, None] * r[..., None, :]
    return np.exp(1j * phase) / r[..., None, :]


def mixing_matrix(mics, state, active, f: float, c: float) -> np.ndarray:
    """Stack steering vectors of valid slots (in slot order) as columns."""
    pos = getattr(mics, "positions", mics)
    state = np.asarray(state, dtype=float)
    cols = [steering(pos, state[n, :2], f, c)
            for n in np.flatnonzero(np.asarray(active))]
    if not cols:
        return np.zeros((len(pos), 0), dtype=complex)
    return np.stack(cols, axis=1)


def projector(H, cond_threshold: float = COND_THRESHOLD) -> np.ndarray:
    """Orthogonal projector onto the column space of ``H``.

    Uses ``H (H^H H)^-1 H^H`` when the Gram matrix is well conditioned and an
    SVD-based pseudoinverse construction otherwise.
    """
    H = np.asarray(H, dtype=complex)
    m, k = H.shape
    if k == 0:
        return np.zeros((m, m), dtype=complex)
    gram = H.conj().T @ H
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(gram)
    if np.isfinite(cond) and cond <= cond_threshold:
        P = H @ np.linalg.solve(gram, H.conj().T)
    else:
        u, s, _ = np.linalg.svd(H, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return np.zeros((m, m), dtype=complex)
        # cond(H^H H) = cond(H)**2
        keep = s > s[0] / np.sqrt(cond_threshold)
        ur = u[:, keep]
        P = ur @ ur.conj().T
    return 0.5 * (P + P.conj().T)
