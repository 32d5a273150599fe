"""Shared helper: batched two-point samples of the mollified noise entry
(1,2), used by the noise-model unit tests and the acceptance suite."""

import numpy as np

from mvsao.noise_model import mollified_point_ensemble, sample_noise_ensemble


def two_point_components(kind, zeta, eta, d, n_samples, seed, upsilon2=0.5,
                         n_chunks=6):
    """Components of xi^zeta_{12}(x) and xi^eta_{12}(y) with y = x + d,
    stacked over n_samples independent draws; shape 2 x (n, 4).

    The reversed-orientation entry xi_{21} is the conjugate of the second
    array (negate the imaginary components)."""
    rng = np.random.default_rng(seed)
    x, y = 0.5, 0.5 + d
    pad = 2 * max(zeta, eta)
    dx = min(zeta, eta) / 24
    lo, hi = min(x, y) - pad, max(x, y) + pad
    cells = int(np.ceil((hi - lo) / dx))
    c1s, c2s = [], []
    per = max(1, n_samples // n_chunks)
    drawn = 0
    while drawn < n_samples:
        m = min(per, n_samples - drawn)
        ens = sample_noise_ensemble(kind, 2, 1.0, upsilon2, (lo, hi, cells), m, rng)
        c1s.append(mollified_point_ensemble(ens, zeta, 1, 2, x))
        c2s.append(mollified_point_ensemble(ens, eta, 1, 2, y))
        drawn += m
    return np.concatenate(c1s), np.concatenate(c2s)


def conj_components(comps):
    out = comps.copy()
    out[:, 1:] *= -1.0
    return out


def embed_entries(comps):
    """2x2 embedding entries, batched: comps (m, 4) -> dict of complex (m,)."""
    a, b, c, d = comps.T
    return {
        (0, 0): a + 1j * b, (0, 1): c + 1j * d,
        (1, 0): -c + 1j * d, (1, 1): a - 1j * b,
    }


def mean_with_se(samples):
    samples = np.asarray(samples)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(len(samples)))
