"""Lattice geometry, growing site weights, disorder sampling, Hamiltonian assembly.

The model lives on the cube Lambda_L = {n in Z^d : |n_i| <= L}.  Each site
carries the weight b_n = 1 + |n|^alpha (Euclidean norm |n|), and one disorder
realization assigns i.i.d. Uniform[0,1] variables q_n.  The finite-volume
Hamiltonian is the plain matrix restriction of

    H = 2d - Delta + sum_n b_n q_n |n><n|

to the cube: diagonal 2d + b_n q_n, entry -1 between l1-nearest neighbours,
no boundary correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class LatticeError(ValueError):
    """Invalid lattice parameters or mismatched lattice inputs."""


@dataclass(frozen=True)
class ModelParams:
    """Model parameters: dimension d >= 1, growth exponent alpha > 1, radius L >= 1.

    Statistics experiments additionally need d - alpha > 0 (otherwise the
    eigenvalue rescaling degenerates); that constraint belongs to the
    experiment layer, not here.
    """

    d: int
    alpha: float
    L: int

    def __post_init__(self):
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise LatticeError(f"d must be a positive integer, got {self.d!r}")
        if not (np.isfinite(self.alpha) and self.alpha > 1):
            raise LatticeError(f"alpha must be a real number > 1, got {self.alpha!r}")
        if not (isinstance(self.L, (int, np.integer)) and self.L >= 1):
            raise LatticeError(f"L must be a positive integer, got {self.L!r}")

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @property
    def n_sites(self) -> int:
        return self.side**self.d

    @property
    def scale(self) -> float:
        """Point-process rescaling factor L^(d-alpha)."""
        return float(self.L) ** (self.d - self.alpha)


@dataclass(frozen=True)
class LatticeBox:
    """Sites of the cube in lexicographic order with O(1) coordinate<->index maps."""

    params: ModelParams
    sites: np.ndarray  # (n_sites, d) int array, lexicographic order

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @cached_property
    def strides(self) -> np.ndarray:
        d, side = self.params.d, self.params.side
        return side ** np.arange(d - 1, -1, -1)

    def index_of(self, coord) -> int:
        """Position of a coordinate vector in the site enumeration."""
        c = np.asarray(coord, dtype=np.int64).reshape(-1)
        L = self.params.L
        if c.shape[0] != self.params.d or np.any(np.abs(c) > L):
            raise LatticeError(f"coordinate {coord!r} not in box (d={self.params.d}, L={L})")
        return int(np.dot(c + L, self.strides))

    def weights(self, alpha: float | None = None) -> np.ndarray:
        """b_n = 1 + |n|^alpha for every site, in enumeration order."""
        if alpha is None:
            alpha = self.params.alpha
        norms = np.sqrt(np.sum(self.sites.astype(float) ** 2, axis=1))
        return 1.0 + norms**alpha

    @cached_property
    def neighbor_pairs(self) -> np.ndarray:
        """(n_pairs, 2) site-index pairs at l1 distance 1, each pair once (i < j)."""
        d, L, side = self.params.d, self.params.L, self.params.side
        idx = np.arange(self.n_sites)
        pairs = []
        for axis in range(d):
            stride = int(self.strides[axis])
            mask = self.sites[:, axis] < L
            i = idx[mask]
            pairs.append(np.column_stack([i, i + stride]))
        if pairs:
            return np.concatenate(pairs, axis=0)
        return np.empty((0, 2), dtype=np.int64)


def enumerate_box(params: ModelParams) -> LatticeBox:
    """All (2L+1)^d sites of the cube, lexicographically ordered."""
    axes = [np.arange(-params.L, params.L + 1)] * params.d
    grids = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)
    return LatticeBox(params=params, sites=sites)


def weight_b(n, alpha: float) -> float:
    """Site weight b_n = 1 + |n|^alpha with the Euclidean norm |n|."""
    if not alpha > 0:
        raise LatticeError(f"alpha must be positive, got {alpha!r}")
    c = np.asarray(n, dtype=float).reshape(-1)
    return float(1.0 + np.sqrt(np.sum(c**2)) ** alpha)


def weight_sum(box: LatticeBox, alpha: float | None = None) -> float:
    """Direct summation of sum_n b_n^{-1} over the box.

    Grows like Theta(L^(d-alpha)) when d > alpha.
    """
    return float(np.sum(1.0 / box.weights(alpha)))


@dataclass(frozen=True)
class DisorderSample:
    """One realization of the i.i.d. Uniform[0,1] field, counter-derived.

    The stream is keyed by (seed, sample_index) through a Philox counter
    generator, and site n reads position index_of(n) of that stream, so the
    values are reproducible regardless of scheduling or worker count.
    """

    values: np.ndarray
    seed: int
    sample_index: int

    def value_at(self, box: LatticeBox, coord) -> float:
        return float(self.values[box.index_of(coord)])


def sample_disorder(box: LatticeBox, seed: int, sample_index: int = 0) -> DisorderSample:
    """Draw q_n ~ Uniform[0,1] for every site of the box."""
    if sample_index < 0:
        raise LatticeError(f"sample_index must be >= 0, got {sample_index}")
    values = disorder_matrix(box.n_sites, seed, sample_index, 1)[0]
    return DisorderSample(values=values, seed=int(seed), sample_index=int(sample_index))


def disorder_matrix(n_sites: int, seed: int, first_index: int, n_samples: int) -> np.ndarray:
    """(n_samples, n_sites) uniforms; row k uses sample_index = first_index + k."""
    out = np.empty((n_samples, n_sites))
    for k in range(n_samples):
        key = np.array([np.uint64(seed), np.uint64(first_index + k)], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[k] = gen.random(n_sites)
    return out


@dataclass(frozen=True)
class HamiltonianMatrix:
    """Finite-volume Hamiltonian: diagonal 2d + b_n q_n, -1 on nearest-neighbour pairs."""

    box: LatticeBox
    diag: np.ndarray
    pairs: np.ndarray  # (n_pairs, 2) site indices carrying the -1 hopping entries
    sample_key: tuple[int, int] | None = None  # (seed, sample_index) when known

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    @property
    def bandwidth(self) -> int:
        if self.pairs.shape[0] == 0:
            return 0
        return int(np.max(self.pairs[:, 1] - self.pairs[:, 0]))

    def to_dense(self) -> np.ndarray:
        h = np.zeros((self.n, self.n))
        h[np.arange(self.n), np.arange(self.n)] = self.diag
        if self.pairs.shape[0]:
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            h[i, j] = -1.0
            h[j, i] = -1.0
        return h

    def to_lower_banded(self) -> np.ndarray:
        """LAPACK-style lower band storage: row k holds the k-th subdiagonal."""
        bw = max(self.bandwidth, 1)
        band = np.zeros((bw + 1, self.n))
        band[0] = self.diag
        if self.pairs.shape[0]:
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            band[j - i, i] = -1.0
        return band

    def to_tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal, subdiagonal) arrays; only valid when bandwidth <= 1."""
        if self.bandwidth > 1:
            raise LatticeError("matrix is not tridiagonal")
        off = np.zeros(self.n - 1)
        if self.pairs.shape[0]:
            off[self.pairs[:, 0]] = -1.0
        return self.diag.copy(), off


def assemble_hamiltonian(box: LatticeBox, alpha: float, sample: DisorderSample) -> HamiltonianMatrix:
    """Matrix restriction of the operator to the box for one disorder sample."""
    if sample.values.shape[0] != box.n_sites:
        raise LatticeError(
            f"sample has {sample.values.shape[0]} values but box has {box.n_sites} sites"
        )
    b = box.weights(alpha)
    diag = 2.0 * box.params.d + b * sample.values
    return HamiltonianMatrix(
        box=box,
        diag=diag,
        pairs=box.neighbor_pairs,
        sample_key=(sample.seed, sample.sample_index),
    )


def submatrix_dense(box: LatticeBox, alpha: float, sample: DisorderSample, site_idx: np.ndarray) -> np.ndarray:
    """Dense restriction of the sample's Hamiltonian to an arbitrary site subset.

    Off-diagonal entries survive only between subset members that are nearest
    neighbours inside the box; used for block decompositions.
    """
    if sample.values.shape[0] != box.n_sites:
        raise LatticeError("sample/box mismatch")
    site_idx = np.asarray(site_idx, dtype=np.int64)
    nb = site_idx.shape[0]
    b = box.weights(alpha)
    pos = np.full(box.n_sites, -1, dtype=np.int64)
    pos[site_idx] = np.arange(nb)
    h = np.zeros((nb, nb))
    h[np.arange(nb), np.arange(nb)] = 2.0 * box.params.d + b[site_idx] * sample.values[site_idx]
    pairs = box.neighbor_pairs
    keep = (pos[pairs[:, 0]] >= 0) & (pos[pairs[:, 1]] >= 0)
    for i, j in pairs[keep]:
        h[pos[i], pos[j]] = -1.0
        h[pos[j], pos[i]] = -1.0
    return h
