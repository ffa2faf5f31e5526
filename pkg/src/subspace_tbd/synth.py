"""STFT-domain observation synthesis.

Observations are complex arrays of shape ``(M, F, T)``.  Each valid target
emits a circular complex Gaussian coefficient per time-frequency bin, which
reaches the array through the free-field steering vector.  Sensor noise is
circular complex Gaussian with diffuse-field (sinc) spatial coherence.

SNR convention: ``10*log10(P_sig / P_noise)`` where both powers are mean
squared magnitudes over all ``(m, f, t)`` entries of frames that contain at
least one valid target.  The noise is rescaled after drawing so the realized
SNR matches the request exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NotPSDError, SNRUndefinedError
from .wavefield import steering_vectors

DEFAULT_LOADING = 1e-6
MAX_LOADING = 1e-2


@dataclass
class NoiseModel:
    covariance: np.ndarray      # (F, M, M) unloaded sinc coherence
    loading: np.ndarray         # (F,) relative loading actually applied
    noise_variance: float       # per-channel variance after SNR scaling
    scale: float                # amplitude applied to the unit-coherence draws


def sinc_covariance(mics, f: float, c: float) -> np.ndarray:
    """Diffuse-field coherence ``sin(x)/x`` with ``x = 2*pi*f*r/c``."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    pos = getattr(mics, "positions", mics)
    r = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    # np.sinc(x) = sin(pi x)/(pi x)
    return np.sinc(2.0 * f * r / c)


def load_and_factor(cov, loading: float = DEFAULT_LOADING,
                    max_loading: float = MAX_LOADING) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``cov + loading * max|diag| * I``.

    The loading is raised tenfold on each failed factorization until it
    exceeds ``max_loading``.  Returns ``(L, loading_used)``.
    """
    cov = np.asarray(cov)
    ref = float(np.max(np.abs(np.diag(cov)))) or 1.0
    eye = np.eye(cov.shape[0])
    current = loading
    while current <= max_loading * (1 + 1e-12):
        try:
            return np.linalg.cholesky(cov + current * ref * eye), current
        except np.linalg.LinAlgError:
            current *= 10.0
    raise NotPSDError(f"covariance not PSD even with relative loading {max_loading}")


def noise_factors(mics, frequencies, c: float, loading: float = DEFAULT_LOADING):
    """Per-frequency sinc covariances and their loaded Cholesky factors."""
    covs, factors, used = [], [], []
    for f in np.asarray(frequencies, dtype=float):
        cov = sinc_covariance(mics, f, c)
        L, lo = load_and_factor(cov, loading)
        covs.append(cov)
        factors.append(L)
        used.append(lo)
    return np.array(covs), np.array(factors), np.array(used)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex Gaussian with unit variance."""
    x = rng.standard_normal(tuple(shape) + (2,))
    return (x[..., 0] + 1j * x[..., 1]) * np.sqrt(0.5)


def realized_snr_db(clean, noise, activity) -> float:
    """SNR of ``(M, F, T)`` tensors restricted to frames with a valid target."""
    mask = np.asarray(activity).any(axis=1)
    p_sig = np.mean(np.abs(clean[..., mask]) ** 2)
    p_noise = np.mean(np.abs(noise[..., mask]) ** 2)
    return float(10.0 * np.log10(p_sig / p_noise))


def synthesize_components(truth, activity, mics, grid, c: float, snr_db: float,
                          rng: np.random.Generator, loading: float = DEFAULT_LOADING):
    """Draw sources and noise; return ``(clean, noise, sources, NoiseModel)``.

    ``clean`` and ``noise`` are ``(M, F, T)``; ``sources`` is ``(T, N, F)``.
    The noise returned is already scaled to the requested SNR.
    """
    truth = np.asarray(truth, dtype=float)
    act = np.asarray(activity)
    freqs = getattr(grid, "frequencies", grid)
    n_frames, n_slots = act.shape
    if truth.shape[:2] != (n_frames, n_slots):
        raise ValueError(f"truth shape {truth.shape} does not match activity {act.shape}")
    pos = getattr(mics, "positions", mics)
    n_mics, n_freqs = len(pos), len(freqs)

    sources = complex_normal(rng, (n_frames, n_slots, n_freqs))
    white = complex_normal(rng, (n_frames, n_freqs, n_mics))

    clean = np.zeros((n_frames, n_freqs, n_mics), dtype=complex)
    t_idx, n_idx = np.nonzero(act)
    if t_idx.size:
        h = steering_vectors(pos, truth[t_idx, n_idx, :2], freqs, c)
        np.add.at(clean, t_idx, sources[t_idx, n_idx][:, :, None] * h)

    covs, factors, used = noise_factors(pos, freqs, c, loading)
    # v[t, f] = L_f w[t, f]
    noise = np.einsum("fij,tfj->tfi", factors, white)

    clean = np.ascontiguousarray(clean.transpose(2, 1, 0))
    noise = np.ascontiguousarray(noise.transpose(2, 1, 0))

    mask = act.any(axis=1)
    if np.isposinf(snr_db):
        scale = 0.0
        noise_var = 0.0
    else:
        if not mask.any():
            raise SNRUndefinedError("no valid target in any frame; SNR is undefined")
        p_sig = np.mean(np.abs(clean[..., mask]) ** 2)
        p_raw = np.mean(np.abs(noise[..., mask]) ** 2)
        target_noise = p_sig * 10.0 ** (-snr_db / 10.0)
        scale = float(np.sqrt(target_noise / p_raw))
        noise_var = float(target_noise)
    noise = noise * scale
    model = NoiseModel(covariance=covs, loading=used, noise_variance=noise_var, scale=scale)
    return clean, noise, sources, model


def synthesize(truth, activity, mics, grid, c: float, snr_db: float,
               rng: np.random.Generator, loading: float = DEFAULT_LOADING):
    """Synthesize an ``(M, F, T)`` observation tensor and its noise model."""
    clean, noise, _, model = synthesize_components(
        truth, activity, mics, grid, c, snr_db, rng, loading)
    return clean + noise, model


_MAGIC = b"TBDOBS01"
_HEADER = struct.Struct("<8sIII")


def write_observations(path, obs) -> None:
    """Dump ``(M, F, T)`` complex data: magic, uint32 M/F/T, then LE float64 re/im pairs."""
    obs = np.asarray(obs, dtype=complex)
    m, f, t = obs.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, m, f, t))
        fh.write(np.ascontiguousarray(obs).astype("<c16").tobytes())


def read_observations(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, m, f, t = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an observation dump")
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != m * f * t:
        raise ValueError(f"{path}: expected {m * f * t} samples, found {data.size}")
    return data.reshape(m, f, t).astype(complex)
