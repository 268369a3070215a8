"""Rescaled eigenvalue point processes, block decompositions, and Poisson tests.

Around a reference energy E the spectrum of one realization is mapped through
x -> L^(d-alpha) (x - E); counting statistics of the resulting configurations
are compared against the Poisson law, both for the full box and for the
superposition of independent sub-box processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import stats

from .lattice import (
    DisorderSample,
    LatticeBox,
    ModelParams,
    assemble_hamiltonian,
    enumerate_box,
    sample_disorder,
    submatrix_dense,
)
from .spectral import (
    EstimatorError,
    SLICING_THRESHOLD,
    Spectrum,
    eigenvalues,
    ensemble_window_counts,
)


class PointProcessError(ValueError):
    """Invalid point-process inputs."""


@dataclass(frozen=True)
class BorelSet:
    """Finite disjoint union of bounded half-open intervals [a_i, b_i).

    Ties break by strict upper comparison: a point equal to b_i is outside,
    equal to a_i is inside.
    """

    intervals: np.ndarray  # (k, 2) sorted, pairwise disjoint

    def __post_init__(self):
        iv = np.asarray(self.intervals, dtype=float)
        if iv.ndim != 2 or iv.shape[1] != 2 or iv.shape[0] == 0:
            raise PointProcessError(f"expected a (k, 2) interval array, got shape {iv.shape}")
        if not np.all(np.isfinite(iv)):
            raise PointProcessError("intervals must be bounded")
        if not np.all(iv[:, 1] > iv[:, 0]):
            raise PointProcessError("every interval needs b > a")
        if np.any(iv[1:, 0] < iv[:-1, 1]):
            raise PointProcessError("intervals must be sorted and pairwise disjoint")
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def from_pairs(cls, pairs) -> "BorelSet":
        iv = sorted((float(a), float(b)) for a, b in pairs)
        return cls(intervals=np.asarray(iv))

    @property
    def total_length(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))

    @property
    def lo(self) -> float:
        return float(self.intervals[0, 0])

    @property
    def hi(self) -> float:
        return float(self.intervals[-1, 1])


@dataclass(frozen=True)
class PointConfiguration:
    """Rescaled eigenvalue multiset around center_E."""

    points: np.ndarray  # sorted
    center_E: float
    scale: float


def rescale(spec: Spectrum, E: float) -> PointConfiguration:
    """Map every eigenvalue through x -> L^(d-alpha) (x - E)."""
    d, alpha, L = spec.box_meta[0], spec.box_meta[1], spec.box_meta[2]
    if not d - alpha > 0:
        raise PointProcessError("rescale needs d - alpha > 0")
    scale = float(L) ** (d - alpha)
    return PointConfiguration(
        points=scale * (spec.eigenvalues - E), center_E=float(E), scale=scale
    )


def count_in(config: PointConfiguration, B: BorelSet) -> int:
    """Number of points in B, counted with multiplicity."""
    pts = config.points
    total = 0
    for a, b in B.intervals:
        total += int(np.searchsorted(pts, b, side="left") - np.searchsorted(pts, a, side="left"))
    return total


@dataclass(frozen=True)
class BlockDecomposition:
    """Partition of the box into M^d near-congruent axis-aligned blocks.

    When the side is not divisible by M the trailing sites join the last
    block of each axis.  interior_margin is the log-width collar used by
    diagnostics: interior sites sit at sup-distance > margin from their
    block's boundary.
    """

    box: LatticeBox
    epsilon: float
    delta: float
    M: int
    edges: np.ndarray  # (M+1,) 0-based row boundaries per axis
    block_of_site: np.ndarray  # (n_sites,) block id
    blocks: list  # list of site-index arrays

    @property
    def n_blocks(self) -> int:
        return self.M ** self.box.params.d

    @property
    def interior_margin(self) -> float:
        return self.delta * math.log(self.box.params.L)

    def interior(self, p: int) -> np.ndarray:
        """Site indices of block p at sup-distance > margin from its boundary."""
        idx = self.blocks[p]
        coords = self.box.sites[idx] + self.box.params.L  # 0-based
        d = self.box.params.d
        # block bounds along each axis
        axes_pos = np.empty((idx.shape[0], d), dtype=float)
        pid = p
        bounds = []
        for ax in range(d - 1, -1, -1):
            j = pid % self.M
            pid //= self.M
            bounds.append((self.edges[j], self.edges[j + 1] - 1))
        bounds = bounds[::-1]
        dist = np.full(idx.shape[0], np.inf)
        for ax in range(d):
            lo, hi = bounds[ax]
            dist = np.minimum(dist, coords[:, ax] - lo)
            dist = np.minimum(dist, hi - coords[:, ax])
        return idx[dist > self.interior_margin]


def block_decompose(box: LatticeBox, epsilon: float, delta: float) -> BlockDecomposition:
    """M = max(1, floor(side^epsilon)) blocks per axis, remainder to the last."""
    if not 0 < epsilon < 1:
        raise PointProcessError(f"epsilon must lie in (0,1), got {epsilon}")
    if not delta > 0:
        raise PointProcessError(f"delta must be positive, got {delta}")
    side = box.params.side
    M = max(1, int(math.floor(side**epsilon)))
    w = side // M
    edges = np.array([i * w for i in range(M)] + [side], dtype=np.int64)
    coords = box.sites + box.params.L  # 0-based
    block_id = np.zeros(box.n_sites, dtype=np.int64)
    for ax in range(box.params.d):
        j = np.clip(np.searchsorted(edges, coords[:, ax], side="right") - 1, 0, M - 1)
        block_id = block_id * M + j
    blocks = [np.where(block_id == p)[0] for p in range(M ** box.params.d)]
    return BlockDecomposition(
        box=box, epsilon=float(epsilon), delta=float(delta), M=M,
        edges=edges, block_of_site=block_id, blocks=blocks,
    )


def eta_processes(
    decomp: BlockDecomposition,
    alpha: float,
    sample: DisorderSample,
    E: float,
) -> list[PointConfiguration]:
    """Per-block spectra of the restricted sample, rescaled with the global
    factor L^(d-alpha).  Disjoint blocks with i.i.d. disorder make the
    configurations statistically independent."""
    box = decomp.box
    p = box.params
    if not p.d - p.alpha > 0:
        raise PointProcessError("eta_processes needs d - alpha > 0")
    scale = p.scale
    out = []
    for idx in decomp.blocks:
        hb = submatrix_dense(box, alpha, sample, idx)
        w = np.linalg.eigvalsh(hb)
        out.append(PointConfiguration(points=scale * (w - E), center_E=float(E), scale=scale))
    return out


@dataclass(frozen=True)
class CountDistribution:
    """Empirical distribution of point counts in a Borel set across an ensemble."""

    pmf: np.ndarray  # index k -> empirical P(count = k)
    n_samples: int
    mean: float
    mean_stderr: float
    second_factorial_moment: float
    second_factorial_stderr: float
    B: BorelSet

    @property
    def counts_support(self) -> np.ndarray:
        return np.arange(self.pmf.shape[0])


def _distribution_from_counts(counts: np.ndarray, B: BorelSet) -> CountDistribution:
    n = counts.shape[0]
    kmax = int(counts.max()) if n else 0
    pmf = np.bincount(counts.astype(np.int64), minlength=kmax + 1) / n
    second = counts * (counts - 1.0)
    return CountDistribution(
        pmf=pmf,
        n_samples=n,
        mean=float(counts.mean()),
        mean_stderr=float(counts.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        second_factorial_moment=float(second.mean()),
        second_factorial_stderr=float(second.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        B=B,
    )


def counting_distribution(
    params: ModelParams,
    E: float,
    B: BorelSet,
    n_samples: int,
    seed: int,
    use_blocks: bool = False,
    epsilon: float = 0.4,
    delta: float = 8.0,
) -> CountDistribution:
    """Empirical pmf of the point count in B (or of the block superposition)."""
    if not params.d - params.alpha > 0:
        raise PointProcessError("counting_distribution needs d - alpha > 0")
    if n_samples < 1:
        raise PointProcessError("n_samples must be >= 1")
    scale = params.scale
    if not use_blocks:
        # raw-energy window endpoints; strict-below counts difference per interval
        shifts = np.concatenate([E + B.intervals[:, 0] / scale, E + B.intervals[:, 1] / scale])
        k = B.intervals.shape[0]
        raw = ensemble_window_counts(params, shifts, n_samples, seed)
        counts = (raw[:, k:] - raw[:, :k]).sum(axis=1)
        return _distribution_from_counts(counts.astype(float), B)
    box = enumerate_box(params)
    decomp = block_decompose(box, epsilon, delta)
    counts = np.empty(n_samples)
    for s in range(n_samples):
        sample = sample_disorder(box, seed, s)
        total = 0
        for cfg in eta_processes(decomp, params.alpha, sample, E):
            total += count_in(cfg, B)
        counts[s] = total
    return _distribution_from_counts(counts, B)


@dataclass(frozen=True)
class GofReport:
    """Chi-square and total-variation comparison of a count pmf to Poisson(lambda)."""

    lam: float
    chi2: float
    dof: int
    p_value: float
    tv_distance: float
    n_bins: int
    n_samples: int
    lambda_source: str  # "plugin" or "external"

    @property
    def poisson_pmf(self):
        return lambda k: stats.poisson.pmf(k, self.lam)


def poisson_gof(
    dist: CountDistribution,
    lam: float,
    lambda_source: str = "external",
    min_expected: float = 5.0,
) -> GofReport:
    """Goodness of fit of the empirical count pmf against Poisson(lam).

    Cells with expected count below min_expected merge into the tail cell;
    with a plug-in lambda one degree of freedom is spent on the estimate.
    """
    if not lam > 0:
        raise PointProcessError(f"lambda must be positive, got {lam}")
    if dist.n_samples < 200:
        raise PointProcessError("poisson_gof needs at least 200 samples")
    n = dist.n_samples
    kmax = dist.pmf.shape[0] - 1
    # TV over the full support (tail folded in)
    k_hi = max(kmax, int(stats.poisson.isf(1e-12, lam)) + 1)
    ks = np.arange(k_hi + 1)
    ref = stats.poisson.pmf(ks, lam)
    emp = np.zeros(k_hi + 1)
    emp[: kmax + 1] = dist.pmf
    tv = 0.5 * (np.abs(emp - ref).sum() + max(0.0, 1.0 - ref.sum()))

    # chi-square with tail merging
    cells = []
    k = 0
    while k <= k_hi:
        exp_k = n * ref[k]
        if exp_k < min_expected:
            break
        cells.append((emp[k] * n, exp_k))
        k += 1
    obs_tail = n * emp[k:].sum()
    exp_tail = n * (1.0 - ref[:k].sum())
    if exp_tail > 0:
        cells.append((obs_tail, exp_tail))
    obs = np.array([c[0] for c in cells])
    exp = np.array([c[1] for c in cells])
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(cells) - 1 - (1 if lambda_source == "plugin" else 0)
    dof = max(dof, 1)
    p_value = float(stats.chi2.sf(chi2, dof))
    return GofReport(
        lam=float(lam), chi2=chi2, dof=dof, p_value=p_value,
        tv_distance=float(tv), n_bins=len(cells), n_samples=n,
        lambda_source=lambda_source,
    )


@dataclass(frozen=True)
class SpacingReport:
    """Nearest-neighbour spacings inside a window vs the Exponential(lambda) law."""

    lam: float
    ks_distance: float
    n_spacings: int
    spacings: np.ndarray
    lambda_source: str


def gap_statistics(configs, window: BorelSet, lam: float | None = None) -> SpacingReport:
    """Pooled consecutive-point spacings inside the window across an ensemble,
    with the Kolmogorov-Smirnov distance to the CDF 1 - exp(-lam s).

    lam defaults to the plug-in rate mean_count / |window|.
    """
    if window.intervals.shape[0] != 1:
        raise PointProcessError("gap_statistics expects a single-interval window")
    configs = list(configs)
    a, b = window.intervals[0]
    spacings = []
    total_count = 0
    for cfg in configs:
        pts = cfg.points
        sel = pts[(pts >= a) & (pts < b)]
        total_count += sel.shape[0]
        if sel.shape[0] >= 2:
            spacings.append(np.diff(np.sort(sel)))
    if not spacings:
        raise PointProcessError("fewer than 2 points in the window across all samples")
    s = np.concatenate(spacings)
    if lam is None:
        lam = total_count / (len(configs) * (b - a))
        source = "plugin"
    else:
        source = "external"
    if not lam > 0:
        raise PointProcessError("estimated rate is not positive")
    ks = float(stats.kstest(s, lambda x: 1.0 - np.exp(-lam * x)).statistic)
    return SpacingReport(lam=float(lam), ks_distance=ks, n_spacings=int(s.shape[0]), spacings=s, lambda_source=source)


@dataclass(frozen=True)
class SuperpositionResult:
    """Monte Carlo estimate of E|integral phi_z d(xi) - sum_p integral phi_z d(eta_p)|."""

    mean: float
    stderr: float
    M: int
    n_samples: int
    z: complex


def superposition_distance(
    params: ModelParams,
    E: float,
    z: complex,
    n_samples: int,
    seed: int,
    epsilon: float = 0.4,
    delta: float = 8.0,
) -> SuperpositionResult:
    """Distance between the full-box process and the block superposition,
    tested through the resolvent kernel phi_z(x) = Im 1/(x - z).

    Exact per-sample traces: (1/L^(d-alpha)) |Tr Im G_box(z_L) - sum_p Tr Im
    G_block(z_L)| with z_L = E + z / L^(d-alpha).
    """
    z = complex(z)
    if not z.imag > 0:
        raise PointProcessError("z must lie in the upper half plane")
    if not params.d - params.alpha > 0:
        raise PointProcessError("superposition_distance needs d - alpha > 0")
    box = enumerate_box(params)
    decomp = block_decompose(box, epsilon, delta)
    scale = params.scale
    z_L = E + z / scale
    vals = np.empty(n_samples)
    for s in range(n_samples):
        sample = sample_disorder(box, seed, s)
        h = assemble_hamiltonian(box, params.alpha, sample)
        if h.bandwidth <= 1:
            d_, e_ = h.to_tridiagonal()
            w_full = sla.eigh_tridiagonal(d_, e_, eigvals_only=True)
        elif box.n_sites > SLICING_THRESHOLD:
            w_full = sla.eig_banded(h.to_lower_banded(), lower=True, eigvals_only=True)
        else:
            w_full = np.linalg.eigvalsh(h.to_dense())
        tr_full = float(np.sum((1.0 / (w_full - z_L)).imag))
        tr_blocks = 0.0
        for idx in decomp.blocks:
            wb = np.linalg.eigvalsh(submatrix_dense(box, params.alpha, sample, idx))
            tr_blocks += float(np.sum((1.0 / (wb - z_L)).imag))
        vals[s] = abs(tr_full - tr_blocks) / scale
    se = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return SuperpositionResult(
        mean=float(vals.mean()), stderr=se, M=decomp.M, n_samples=n_samples, z=z
    )


def synthetic_poisson_counts(lam: float, n_samples: int, seed: int) -> CountDistribution:
    """Reference generator: i.i.d. Poisson(lam) counts (self-test positive control)."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    counts = gen.poisson(lam, size=n_samples).astype(float)
    return _distribution_from_counts(counts, BorelSet.from_pairs([(0.0, 1.0)]))


def synthetic_clock_counts(lam: float, n_samples: int, seed: int, B: BorelSet | None = None) -> CountDistribution:
    """Negative control: counts of a uniformly jittered picket-fence process."""
    if B is None:
        B = BorelSet.from_pairs([(0.0, 1.0)])
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
    a, b = B.lo, B.hi
    counts = np.empty(n_samples)
    spacing = 1.0 / lam
    for k in range(n_samples):
        phase = gen.random() * spacing
        first = math.ceil((a - phase) / spacing)
        last = math.floor(((b - 1e-12) - phase) / spacing)
        counts[k] = max(0, last - first + 1)
    return _distribution_from_counts(counts, B)


def synthetic_poisson_configs(lam: float, window: tuple[float, float], n_samples: int, seed: int) -> list[PointConfiguration]:
    """Homogeneous Poisson(lam) configurations on a window (spacing self-test)."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 2], dtype=np.uint64)))
    a, b = window
    out = []
    for _ in range(n_samples):
        n_pts = gen.poisson(lam * (b - a))
        pts = np.sort(a + (b - a) * gen.random(n_pts))
        out.append(PointConfiguration(points=pts, center_E=0.0, scale=1.0))
    return out


def synthetic_clock_configs(lam: float, window: tuple[float, float], n_samples: int, seed: int) -> list[PointConfiguration]:
    """Picket-fence configurations with spacing 1/lam and random phase."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 3], dtype=np.uint64)))
    a, b = window
    spacing = 1.0 / lam
    out = []
    for _ in range(n_samples):
        phase = gen.random() * spacing
        pts = np.arange(a + phase, b, spacing)
        out.append(PointConfiguration(points=pts, center_E=0.0, scale=1.0))
    return out
