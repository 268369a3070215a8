"""Eigenvalue counting for symmetric banded matrices by spectrum slicing.

An unpivoted LDL^T sweep over the band yields, by Sylvester's law of inertia,
the number of eigenvalues strictly below the shift as the number of negative
pivots.  Near-zero pivots are replaced by a signed floor, the same device as
in classical bisection codes; with random spectra and fixed shifts an exactly
singular leading minor has probability zero.  Counts are integers, so Monte
Carlo aggregates are bit-reproducible for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .lattice import HamiltonianMatrix, LatticeBox, disorder_matrix

_PIVOT_FLOOR = 1e-30


@njit(cache=True)
def _band_inertia(band):
    """Negative-pivot count of an LDL^T sweep on lower band storage (destroys band)."""
    rows, n = band.shape
    bw = rows - 1
    neg = 0
    for j in range(n):
        piv = band[0, j]
        if abs(piv) < _PIVOT_FLOOR:
            piv = -_PIVOT_FLOOR
        if piv < 0.0:
            neg += 1
        w = bw if j + bw < n else n - 1 - j
        for k in range(w):
            cjk = band[1 + k, j]
            if cjk != 0.0:
                f = cjk / piv
                for r in range(k, w):
                    band[r - k, j + 1 + k] -= f * band[1 + r, j]
    return neg


@njit(cache=True)
def _count_shifts_one(band_tpl, diag, shifts, out):
    for t in range(shifts.shape[0]):
        band = band_tpl.copy()
        band[0] = diag - shifts[t]
        out[t] = _band_inertia(band)


@njit(parallel=True, cache=True)
def _count_shifts_batch(band_tpl, diag_base, bvals, q_matrix, shifts, out):
    n_samples = q_matrix.shape[0]
    for s in prange(n_samples):
        diag = diag_base + bvals * q_matrix[s]
        _count_shifts_one(band_tpl, diag, shifts, out[s])


def count_below_banded(h: HamiltonianMatrix, shifts) -> np.ndarray:
    """Number of eigenvalues of h strictly below each shift."""
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    tpl = h.to_lower_banded()
    tpl[0] = 0.0
    out = np.empty(shifts.shape[0], dtype=np.int64)
    _count_shifts_one(tpl, h.diag.astype(float), shifts, out)
    return out


def ensemble_counts(
    box: LatticeBox,
    alpha: float,
    shifts,
    n_samples: int,
    seed: int,
    first_index: int = 0,
) -> np.ndarray:
    """(n_samples, n_shifts) strict-below eigenvalue counts across a disorder ensemble.

    Sample k uses the disorder stream keyed by (seed, first_index + k); the
    output is a pure function of those keys, independent of thread count.
    """
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    n = box.n_sites
    b = box.weights(alpha)
    diag_base = np.full(n, 2.0 * box.params.d)
    tpl = np.zeros((max(_band_rows(box), 1) + 1, n))
    pairs = box.neighbor_pairs
    if pairs.shape[0]:
        tpl[pairs[:, 1] - pairs[:, 0], pairs[:, 0]] = -1.0
    q = disorder_matrix(n, seed, first_index, n_samples)
    out = np.empty((n_samples, shifts.shape[0]), dtype=np.int64)
    _count_shifts_batch(tpl, diag_base, b, q, shifts, out)
    return out


def _band_rows(box: LatticeBox) -> int:
    pairs = box.neighbor_pairs
    if pairs.shape[0] == 0:
        return 0
    return int(np.max(pairs[:, 1] - pairs[:, 0]))
