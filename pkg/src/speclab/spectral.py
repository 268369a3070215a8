"""Diagonalization, eigenvalue counting, empirical IDS, and bound verification.

The normalized expected counting function nu_L(E) = E[N_L(E)] / L^(d-alpha)
has a density f_L once the Wegner estimate holds; the routines here estimate
both by Monte Carlo and check the spectral-averaging, Wegner and Minami
inequalities at 3-standard-error tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lattice import (
    DisorderSample,
    HamiltonianMatrix,
    LatticeBox,
    ModelParams,
    assemble_hamiltonian,
    enumerate_box,
    sample_disorder,
    weight_sum,
)


class SolverError(RuntimeError):
    """Eigensolver or linear solver failed to converge."""


class InvariantViolation(RuntimeError):
    """A deterministic spectral invariant failed (indicates a solver bug)."""


class EstimatorError(RuntimeError):
    """A statistical estimator could not stabilize at the requested accuracy."""


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalues of one finite-volume realization."""

    eigenvalues: np.ndarray
    box_meta: tuple  # (d, alpha, L, seed, sample_index)

    def __len__(self) -> int:
        return self.eigenvalues.shape[0]


def eigenvalues(h: HamiltonianMatrix) -> Spectrum:
    """Full spectrum of a finite-volume Hamiltonian.

    One-dimensional boxes take the tridiagonal fast path; everything else is a
    dense symmetric solve.  LAPACK failures surface as SolverError with the
    sample metadata attached.
    """
    p = h.box.params
    try:
        if h.bandwidth <= 1:
            d_, e_ = h.to_tridiagonal()
            w = sla.eigh_tridiagonal(d_, e_, eigvals_only=True)
        else:
            w = np.linalg.eigvalsh(h.to_dense())
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise SolverError(
            f"eigensolver failed for d={p.d}, alpha={p.alpha}, L={p.L}, "
            f"sample={h.sample_key}: {exc}"
        ) from exc
    w = np.sort(w)
    seed, sample_index = h.sample_key if h.sample_key else (None, None)
    return Spectrum(eigenvalues=w, box_meta=(p.d, p.alpha, p.L, seed, sample_index))


def count_below(spec: Spectrum, E: float) -> int:
    """N(E) = #{eigenvalues <= E}."""
    return int(np.searchsorted(spec.eigenvalues, E, side="right"))


def sandwich_counts(box: LatticeBox, alpha: float, sample: DisorderSample, E: float):
    """(N_lower, N, N_upper) for one sample: the diagonal comparison operators
    4d + b q and b q sandwich the counting function of H for every realization.

    A violation is deterministic evidence of an eigensolver bug and raises.
    """
    b = box.weights(alpha)
    four_d = 4.0 * box.params.d
    n_lower = int(np.count_nonzero(four_d + b * sample.values <= E))
    n_upper = int(np.count_nonzero(b * sample.values <= E))
    h = assemble_hamiltonian(box, alpha, sample)
    n_mid = count_below(eigenvalues(h), E)
    if not n_lower <= n_mid <= n_upper:
        raise InvariantViolation(
            f"counting sandwich violated at E={E}: {n_lower} <= {n_mid} <= {n_upper} "
            f"fails for sample={h.sample_key}"
        )
    return n_lower, n_mid, n_upper


def expected_count_diag(box: LatticeBox, alpha: float, E: float, shift: float) -> float:
    """Exact expectation sum_n min(1, (E - shift)/b_n) of the diagonal model's
    counting function (shift 0 and 4d give the two sandwich operators)."""
    eps = E - shift
    if eps <= 0:
        return 0.0
    b = box.weights(alpha)
    return float(np.sum(np.minimum(1.0, eps / b)))


@dataclass(frozen=True)
class IdsEstimate:
    """Monte Carlo estimate of nu_L on a grid plus a histogram density f_L."""

    energies: np.ndarray
    nu_L: np.ndarray
    stderr: np.ndarray
    f_L: np.ndarray
    bin_width: float
    n_samples: int
    params: ModelParams


def default_bin_width(params: ModelParams, E_mid: float) -> float:
    """max(0.05, 4 * diagonal-model mean spacing at E_mid)."""
    box = enumerate_box(params)
    b = box.weights()
    eps = E_mid - 2.0 * params.d
    density = float(np.sum(1.0 / b[b >= eps])) if eps > 0 else float(np.sum(1.0 / b))
    if density <= 0:
        return 0.05
    return max(0.05, 4.0 / density)


def empirical_ids(
    params: ModelParams,
    E_grid,
    n_samples: int,
    seed: int,
    bin_width: float | None = None,
) -> IdsEstimate:
    """nu_L on a grid by Monte Carlo, with the density f_L read off a histogram
    normalized so that bin mass equals the nu_L increment."""
    if n_samples < 1:
        raise EstimatorError("n_samples must be >= 1")
    if not params.d - params.alpha > 0:
        raise EstimatorError("empirical_ids needs d - alpha > 0")
    E_grid = np.asarray(E_grid, dtype=float)
    if np.any(np.diff(E_grid) <= 0):
        raise EstimatorError("E_grid must be strictly increasing")
    box = enumerate_box(params)
    scale = params.scale
    if bin_width is None:
        bin_width = default_bin_width(params, float(np.median(E_grid)))

    counts = np.empty((n_samples, E_grid.shape[0]))
    edges = np.concatenate([E_grid - bin_width / 2, [E_grid[-1] + bin_width / 2]])
    hist = np.zeros(E_grid.shape[0])
    for k in range(n_samples):
        spec = eigenvalues(assemble_hamiltonian(box, params.alpha, sample_disorder(box, seed, k)))
        counts[k] = np.searchsorted(spec.eigenvalues, E_grid, side="right")
        hist += np.histogram(spec.eigenvalues, bins=edges)[0]

    nu = counts.mean(axis=0) / scale
    se = counts.std(axis=0, ddof=1) / np.sqrt(n_samples) / scale if n_samples > 1 else np.zeros_like(nu)
    f = hist / (n_samples * scale * bin_width)
    return IdsEstimate(
        energies=E_grid, nu_L=nu, stderr=se, f_L=f,
        bin_width=float(bin_width), n_samples=n_samples, params=params,
    )


@dataclass(frozen=True)
class DensityEstimate:
    """Shrinking-window estimate of the nu_L density at one energy."""

    value: float
    stderr: float
    window: float
    E: float
    table: list  # (window, estimate, stderr, bias_proxy) per window
    n_samples: int


def estimate_N1_prime(
    params: ModelParams,
    E: float,
    n_samples: int,
    seed: int,
    window_schedule=None,
) -> DensityEstimate:
    """Density of nu_L at E from symmetric windows E +- w, w halving down a schedule.

    The reported window is the smallest one whose Monte Carlo error still sits
    below its bias proxy (the difference between consecutive window estimates).
    When the density is flat enough that all consecutive estimates agree within
    noise, the window with the smallest combined error is reported instead;
    if the estimates never stabilize, more samples are required.
    """
    if not params.d - params.alpha > 0:
        raise EstimatorError("estimate_N1_prime needs d - alpha > 0")
    if window_schedule is None:
        window_schedule = [2.0**-k for k in range(7)]
    ws = np.asarray(sorted(window_schedule, reverse=True), dtype=float)
    if np.any(ws <= 0):
        raise EstimatorError("windows must be positive")
    shifts = np.concatenate([E - ws, E + ws])
    counts = ensemble_window_counts(params, shifts, n_samples, seed)
    K = ws.shape[0]
    scale = params.scale
    ests = np.empty(K)
    ses = np.empty(K)
    for k in range(K):
        c = counts[:, K + k] - counts[:, k]
        ests[k] = c.mean() / (2 * ws[k] * scale)
        ses[k] = c.std(ddof=1) / np.sqrt(n_samples) / (2 * ws[k] * scale)
    bias = np.abs(np.diff(ests))  # bias proxy for windows 1..K-1
    table = [(float(ws[0]), float(ests[0]), float(ses[0]), float("nan"))]
    table += [
        (float(ws[k]), float(ests[k]), float(ses[k]), float(bias[k - 1]))
        for k in range(1, K)
    ]
    eligible = [k for k in range(1, K) if ses[k] <= bias[k - 1]]
    if eligible:
        k_star = max(eligible)
    else:
        combined_pair = np.sqrt(ses[1:] ** 2 + ses[:-1] ** 2)
        if np.all(bias <= 3 * combined_pair):
            combined = np.sqrt(ses[1:] ** 2 + bias**2)
            k_star = 1 + int(np.argmin(combined))
        else:
            raise EstimatorError(
                "window estimates did not stabilize; increase n_samples"
            )
    err = float(np.hypot(ses[k_star], bias[k_star - 1]))
    return DensityEstimate(
        value=float(ests[k_star]), stderr=err, window=float(ws[k_star]),
        E=float(E), table=table, n_samples=n_samples,
    )


# Boxes above this many sites use banded-LDL spectrum slicing for pure counting.
SLICING_THRESHOLD = 700


def ensemble_window_counts(
    params: ModelParams,
    shifts,
    n_samples: int,
    seed: int,
    first_index: int = 0,
) -> np.ndarray:
    """(n_samples, n_shifts) counts of eigenvalues strictly below each shift.

    Small boxes diagonalize; large boxes count by banded-LDL inertia.  Both
    routes agree exactly (ties have probability zero) and are cross-checked in
    the test suite.
    """
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    box = enumerate_box(params)
    if box.n_sites > SLICING_THRESHOLD and params.d > 1:
        from .slicing import ensemble_counts

        return ensemble_counts(box, params.alpha, shifts, n_samples, seed, first_index)
    out = np.empty((n_samples, shifts.shape[0]), dtype=np.int64)
    for k in range(n_samples):
        spec = eigenvalues(
            assemble_hamiltonian(box, params.alpha, sample_disorder(box, seed, first_index + k))
        )
        out[k] = np.searchsorted(spec.eigenvalues, shifts, side="left")
    return out


@dataclass(frozen=True)
class BoundCheckReport:
    """One-sided Monte Carlo bound check: satisfied iff empirical <= bound + 3 stderr."""

    bound_name: str
    empirical: float
    stderr: float
    bound: float
    n_samples: int

    @property
    def satisfied(self) -> bool:
        return self.empirical <= self.bound + 3 * self.stderr


def check_spectral_averaging(
    params: ModelParams,
    n,
    I: tuple[float, float],
    n_samples: int,
    seed: int,
) -> BoundCheckReport:
    """E <delta_n, E_H(I) delta_n> against the spectral-averaging bound pi |I| / b_n."""
    a, b_hi = float(I[0]), float(I[1])
    if not b_hi >= a:
        raise ValueError(f"interval endpoints out of order: {I}")
    box = enumerate_box(params)
    idx = box.index_of(n)
    b_n = float(box.weights()[idx])
    masses = np.empty(n_samples)
    for k in range(n_samples):
        h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, seed, k))
        try:
            w, v = np.linalg.eigh(h.to_dense())
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"eigh failed for sample {k}: {exc}") from exc
        sel = (w >= a) & (w <= b_hi)
        masses[k] = float(np.sum(v[idx, sel] ** 2))
    emp = float(masses.mean())
    se = float(masses.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return BoundCheckReport(
        bound_name="spectral_averaging",
        empirical=emp, stderr=se,
        bound=float(np.pi * (b_hi - a) / b_n),
        n_samples=n_samples,
    )


def check_wegner_minami(
    params: ModelParams,
    I: tuple[float, float],
    n_samples: int,
    seed: int,
) -> tuple[BoundCheckReport, BoundCheckReport]:
    """Empirical E[k_I] vs sum_n |I|/b_n and E[k_I (k_I - 1)] vs its square."""
    a, b_hi = float(I[0]), float(I[1])
    if not b_hi >= a:
        raise ValueError(f"interval endpoints out of order: {I}")
    box = enumerate_box(params)
    w_const = weight_sum(box, params.alpha) * (b_hi - a)
    k_counts = np.empty(n_samples)
    for k in range(n_samples):
        spec = eigenvalues(assemble_hamiltonian(box, params.alpha, sample_disorder(box, seed, k)))
        ev = spec.eigenvalues
        k_counts[k] = np.searchsorted(ev, b_hi, side="right") - np.searchsorted(ev, a, side="left")
    first = k_counts
    second = k_counts * (k_counts - 1.0)
    se1 = float(first.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    se2 = float(second.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    wegner = BoundCheckReport(
        bound_name="wegner", empirical=float(first.mean()), stderr=se1,
        bound=float(w_const), n_samples=n_samples,
    )
    minami = BoundCheckReport(
        bound_name="minami", empirical=float(second.mean()), stderr=se2,
        bound=float(w_const**2), n_samples=n_samples,
    )
    return wegner, minami
