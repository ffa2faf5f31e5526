"""Fused per-particle loops for the ensemble likelihoods.

Each particle is handled independently and sequentially, so results do not
depend on how particles are split across threads.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, error_model="numpy")
def subspace_moments(pos, mics, freqs, uniform, c, zt):
    """Projections ``b[p, j, f] = h_j^H z_f`` and Gram entries of each particle.

    ``pos`` is ``(P, K, 2)``, ``zt`` is ``(F, M)``.  Returns ``b`` ``(P, K, F)``,
    the diagonal ``g[p, j] = ||h_j||^2`` (frequency independent) and the
    off-diagonal ``gram[p, i, j, f] = h_i^H h_j`` for ``i < j``.
    Returns ``r_min`` (the smallest source-mic distance seen) as well.
    """
    n_part, k, _ = pos.shape
    n_mics = mics.shape[0]
    n_freqs = freqs.shape[0]
    kw = -2.0 * np.pi / c
    b = np.zeros((n_part, k, n_freqs), dtype=np.complex128)
    g = np.zeros((n_part, k))
    gram = np.zeros((n_part, k, k, n_freqs), dtype=np.complex128)
    hv = np.empty((k, n_freqs), dtype=np.complex128)
    r_min = np.inf
    for p in range(n_part):
        for m in range(n_mics):
            for j in range(k):
                dx = pos[p, j, 0] - mics[m, 0]
                dy = pos[p, j, 1] - mics[m, 1]
                r = np.sqrt(dx * dx + dy * dy)
                if r < r_min:
                    r_min = r
                inv = 1.0 / r
                g[p, j] += inv * inv
                if uniform:
                    cur = np.exp(1j * kw * freqs[0] * r) * inv
                    rot = np.exp(1j * kw * (freqs[1] - freqs[0]) * r) if n_freqs > 1 else 1.0 + 0j
                    for f in range(n_freqs):
                        hv[j, f] = cur
                        cur *= rot
                else:
                    for f in range(n_freqs):
                        hv[j, f] = np.exp(1j * kw * freqs[f] * r) * inv
                for f in range(n_freqs):
                    b[p, j, f] += hv[j, f].conjugate() * zt[f, m]
            for i in range(k):
                for j in range(i + 1, k):
                    for f in range(n_freqs):
                        gram[p, i, j, f] += hv[i, f].conjugate() * hv[j, f]
    return b, g, gram, r_min


@njit(cache=True, nogil=True, error_model="numpy")
def residual_energy(pos, mics, freqs, uniform, c, zt):
    """``sum_f ||z_f - sum_j h_j(f)||^2`` per particle, plus the smallest distance."""
    n_part, k, _ = pos.shape
    n_mics = mics.shape[0]
    n_freqs = freqs.shape[0]
    kw = -2.0 * np.pi / c
    out = np.zeros(n_part)
    pred = np.empty(n_freqs, dtype=np.complex128)
    r_min = np.inf
    for p in range(n_part):
        acc = 0.0
        for m in range(n_mics):
            for f in range(n_freqs):
                pred[f] = 0.0
            for j in range(k):
                dx = pos[p, j, 0] - mics[m, 0]
                dy = pos[p, j, 1] - mics[m, 1]
                r = np.sqrt(dx * dx + dy * dy)
                if r < r_min:
                    r_min = r
                inv = 1.0 / r
                if uniform:
                    cur = np.exp(1j * kw * freqs[0] * r) * inv
                    rot = np.exp(1j * kw * (freqs[1] - freqs[0]) * r) if n_freqs > 1 else 1.0 + 0j
                    for f in range(n_freqs):
                        pred[f] += cur
                        cur *= rot
                else:
                    for f in range(n_freqs):
                        pred[f] += np.exp(1j * kw * freqs[f] * r) * inv
            for f in range(n_freqs):
                d = zt[f, m] - pred[f]
                acc += d.real * d.real + d.imag * d.imag
        out[p] = acc
    return out, r_min
