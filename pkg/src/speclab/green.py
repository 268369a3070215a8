"""Resolvent tools: single-site integrals, region-G tests, random-walk expansion,
averaged-resolvent sums, the large-L limit of their explicit part, and
fractional-moment decay estimation.

Branch convention
-----------------
Every complex logarithm here uses the branch with argument in (-pi/2, 3pi/2],
i.e. the cut along the negative imaginary axis.  This is the single most
error-prone spot in the module, so the branch lives in one function
(:func:`branch_log`) and everything else goes through it.

With that convention the single-site integral

    B_ell(a, z) = int_0^1 dx / (a x - z)^ell ,   a >= 1,

has the closed forms

    ell = 1:  (1/a) [log(z - a) - log(z)]
    ell > 1:  (1/(a (ell-1))) [(-z)^(1-ell) - (a-z)^(1-ell)]

analytic on the plane minus the two downward rays {x + iy : x in {0, a}, y <= 0}
and agreeing with the defining integral on the upper half plane.  Both forms
are verified against adaptive quadrature; published variants with the ell > 1
terms in the opposite order disagree with direct integration by a global sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lattice import (
    HamiltonianMatrix,
    LatticeBox,
    ModelParams,
    assemble_hamiltonian,
    disorder_matrix,
    enumerate_box,
    sample_disorder,
    weight_sum,
)
from .spectral import SolverError, eigenvalues


class BranchCutError(ValueError):
    """Evaluation point lies on a branch cut or at a pole."""


class RegionError(ValueError):
    """Preconditions of a bound or expansion regime are not met."""


class BudgetError(RuntimeError):
    """Walk enumeration would exceed the path budget."""


def branch_log(w):
    """log with argument in (-pi/2, 3pi/2]; cut on the negative imaginary axis."""
    w = np.asarray(w, dtype=complex)
    arg = np.angle(w)
    arg = np.where(arg <= -np.pi / 2, arg + 2 * np.pi, arg)
    out = np.log(np.abs(w)) + 1j * arg
    if out.ndim == 0:
        return complex(out)
    return out


def _on_cut(z: complex, a: float) -> bool:
    # cut rays hang straight down from 0 and a (feet included)
    return (z.real == 0.0 or z.real == a) and z.imag <= 0.0


def b_ell(a: float, z: complex, ell: int) -> complex:
    """Analytic continuation of int_0^1 dx/(a x - z)^ell from the upper half plane."""
    if not a >= 1:
        raise ValueError(f"a must be >= 1, got {a}")
    if not (isinstance(ell, (int, np.integer)) and ell >= 1):
        raise ValueError(f"ell must be a positive integer, got {ell!r}")
    z = complex(z)
    if _on_cut(z, a):
        raise BranchCutError(f"z={z} lies on a branch cut of B_ell(a={a})")
    if ell == 1:
        return (branch_log(z - a) - branch_log(z)) / a
    k = 1 - ell  # negative integer power: single-valued, no branch choice needed
    return ((-z) ** k - (a - z) ** k) / (a * (ell - 1))


def b_ell_bound(a: float, z: complex, ell: int, M: float) -> float:
    """Bound on |B_ell(a, z)| valid for Re z > 2M^2 and |z - a| > 2M^2, M > 1.

    ell = 1: (3 pi + 1)/a + 1/(2 M^2);  ell > 1: 1/(a M^(ell-1)).
    """
    z = complex(z)
    if not M > 1:
        raise RegionError(f"M must be > 1, got {M}")
    if not z.real > 2 * M**2:
        raise RegionError(f"need Re z > 2M^2 = {2 * M**2}, got Re z = {z.real}")
    if not abs(z - a) > 2 * M**2:
        raise RegionError(f"need |z - a| > 2M^2 = {2 * M**2}, got {abs(z - a)}")
    if ell == 1:
        return (3 * np.pi + 1) / a + 1 / (2 * M**2)
    return 1.0 / (a * M ** (ell - 1))


@dataclass(frozen=True)
class RegionGParams:
    """Parameters of the analyticity region G: Re z > 2M^2, Im z > -d, and
    distance >= 2M^2 from every shifted weight b_n + 2d.  Requires M > 2d."""

    M: float
    alpha: float
    d: int

    def __post_init__(self):
        if not self.M > 2 * self.d:
            raise RegionError(f"M must exceed 2d = {2 * self.d}, got M = {self.M}")


def in_region_G(z: complex, p: RegionGParams, b_values) -> bool:
    """Membership test for the region G; b_values iterates realized weights b_n."""
    z = complex(z)
    r = 2 * p.M**2
    if not (z.real > r and z.imag > -p.d):
        return False
    if abs(z.imag) >= r:  # no real-centered disk can reach this high
        return True
    for b in b_values:
        if abs(z - (b + 2 * p.d)) < r:
            return False
    return True


def weights_within(d: int, alpha: float, b_max: float) -> np.ndarray:
    """Sorted unique weights b_n = 1 + |n|^alpha realized on Z^d with b_n <= b_max."""
    if b_max < 1:
        return np.empty(0)
    r_max = 0 if b_max < 1 else (b_max - 1) ** (1 / alpha)
    R = int(math.floor(r_max))
    axes = [np.arange(-R, R + 1)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    sq = sum(g.astype(float) ** 2 for g in grids).reshape(-1)
    b = 1 + np.sqrt(sq) ** alpha
    return np.unique(b[b <= b_max])


def resolvent_entry(h: HamiltonianMatrix, z: complex, n, m, _lu=None) -> complex:
    """G(z; n, m) = <delta_n, (H - z)^{-1} delta_m> by direct solve.

    Raises on Im z = 0 and checks the residual against 1e-10.
    """
    z = complex(z)
    if z.imag == 0.0:
        raise ValueError("resolvent_entry requires Im z != 0")
    box = h.box
    i, j = box.index_of(n), box.index_of(m)
    a = h.to_dense().astype(complex)
    a[np.arange(h.n), np.arange(h.n)] -= z
    rhs = np.zeros(h.n, dtype=complex)
    rhs[j] = 1.0
    u = np.linalg.solve(a, rhs)
    resid = np.linalg.norm(a @ u - rhs)
    if not resid <= 1e-10:
        raise SolverError(f"resolvent solve residual {resid:.3e} exceeds 1e-10")
    return complex(u[i])


@dataclass(frozen=True)
class WalkExpansionResult:
    """Truncated random-walk expansion of the averaged diagonal resolvent entry."""

    value: complex
    K: int
    tail_bound: float
    paths_enumerated: int
    regime: str  # "neumann" (Im z > 2d) or "region_G"


def closed_walk_counts(box: LatticeBox, n_index: int, K: int) -> np.ndarray:
    """Exact number of closed nearest-neighbour walks of each length 0..K from a site."""
    n_sites = box.n_sites
    pairs = box.neighbor_pairs
    counts = np.zeros(K + 1, dtype=np.int64)
    vec = np.zeros(n_sites)
    vec[n_index] = 1.0
    counts[0] = 1
    cur = vec
    for k in range(1, K + 1):
        nxt = np.zeros(n_sites)
        np.add.at(nxt, pairs[:, 0], cur[pairs[:, 1]])
        np.add.at(nxt, pairs[:, 1], cur[pairs[:, 0]])
        cur = nxt
        counts[k] = int(round(cur[n_index]))
    return counts


def walk_expansion_diag(
    box: LatticeBox,
    alpha: float,
    z: complex,
    n,
    K: int,
    M: float | None = None,
    budget: int = 10**7,
) -> WalkExpansionResult:
    """Sum over closed walks gamma of length k <= K from n of
    prod_m B_{#(gamma,m)}(b_m, z - 2d), plus a rigorous geometric tail bound.

    Two regimes supply the tail: the Neumann regime Im z > 2d with ratio
    2d/Im z, and the region-G regime (given M > 2d and z in G) with ratio
    2d/M and prefactor 1/b_n.  At least one must apply.
    """
    z = complex(z)
    d = box.params.d
    b = box.weights(alpha)
    n_index = box.index_of(n)
    z_d = z - 2 * d

    eta = z.imag
    neumann_ok = eta > 2 * d
    region_ok = False
    if M is not None:
        p = RegionGParams(M=M, alpha=alpha, d=d)
        region_ok = in_region_G(z, p, b)
    if not (neumann_ok or region_ok):
        raise RegionError(
            "walk expansion needs Im z > 2d or (M, z) with z in region G; neither holds"
        )

    counts = closed_walk_counts(box, n_index, K)
    total = int(np.sum(counts))
    if total > budget:
        cum = np.cumsum(counts)
        k_ok = int(np.searchsorted(cum, budget, side="right")) - 1
        raise BudgetError(
            f"{total} walks up to K={K} exceed budget {budget}; try K={max(k_ok, 0)}"
        )

    # adjacency as neighbour lists for the DFS
    nbrs: list[list[int]] = [[] for _ in range(box.n_sites)]
    for i, j in box.neighbor_pairs:
        nbrs[int(i)].append(int(j))
        nbrs[int(j)].append(int(i))

    cache: dict[tuple[float, int], complex] = {}

    def factor(site: int, mult: int) -> complex:
        key = (b[site], mult)
        v = cache.get(key)
        if v is None:
            v = b_ell(b[site], z_d, mult)
            cache[key] = v
        return v

    visit: dict[int, int] = {n_index: 1}
    total_sum = 0.0 + 0.0j
    enumerated = 0

    def dfs(site: int, depth: int):
        nonlocal total_sum, enumerated
        if site == n_index:
            term = 1.0 + 0.0j
            for s_, mult in visit.items():
                term *= factor(s_, mult)
            total_sum += term
            enumerated += 1
        if depth == K:
            return
        for nxt in nbrs[site]:
            visit[nxt] = visit.get(nxt, 0) + 1
            dfs(nxt, depth + 1)
            if visit[nxt] == 1:
                del visit[nxt]
            else:
                visit[nxt] -= 1

    dfs(n_index, 0)

    tails = []
    if neumann_ok:
        r = 2 * d / eta
        tails.append(("neumann", (1 / eta) * r ** (K + 1) / (1 - r)))
    if region_ok:
        r = 2 * d / M
        tails.append(("region_G", (1 / b[n_index]) * r ** (K + 2) / (1 - r)))
    regime, tail = min(tails, key=lambda t: t[1])
    return WalkExpansionResult(
        value=complex(total_sum), K=K, tail_bound=float(tail),
        paths_enumerated=enumerated, regime=regime,
    )


def _check_phi_domain(z_d: complex, b: np.ndarray):
    if z_d == 0 or np.any(b == z_d):
        raise BranchCutError(f"z - 2d = {z_d} coincides with a cut foot")
    if z_d.imag < 0 and (z_d.real == 0.0 or np.any(b == z_d.real)):
        raise BranchCutError(f"z - 2d = {z_d} lies on a branch cut")


def phi_L(params: ModelParams, z: complex) -> complex:
    """Explicit part of the averaged resolvent trace:
    (1/L^(d-alpha)) sum_n B_1(b_n, z - 2d), evaluated in closed form."""
    z = complex(z)
    box = enumerate_box(params)
    b = box.weights()
    z_d = z - 2 * params.d
    _check_phi_domain(z_d, b)
    terms = (branch_log(z_d - b) - branch_log(z_d)) / b
    return complex(np.sum(terms) / params.scale)


@dataclass(frozen=True)
class McComplex:
    """Monte Carlo estimate of a complex quantity with per-component stderr."""

    value: complex
    stderr_re: float
    stderr_im: float
    n_samples: int

    @property
    def stderr(self) -> float:
        return float(np.hypot(self.stderr_re, self.stderr_im))


def psi_L_mc(params: ModelParams, z: complex, n_samples: int, seed: int) -> McComplex:
    """Monte Carlo average of (1/L^(d-alpha)) Tr (H - z)^{-1} over disorder."""
    z = complex(z)
    if z.imag == 0.0:
        raise ValueError("psi_L_mc requires Im z != 0")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    box = enumerate_box(params)
    vals = np.empty(n_samples, dtype=complex)
    for k in range(n_samples):
        sample = sample_disorder(box, seed, k)
        spec = eigenvalues(assemble_hamiltonian(box, params.alpha, sample))
        vals[k] = np.sum(1.0 / (spec.eigenvalues - z)) / params.scale
    se_re = float(np.std(vals.real, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    se_im = float(np.std(vals.imag, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return McComplex(value=complex(np.mean(vals)), stderr_re=se_re, stderr_im=se_im, n_samples=n_samples)


def g_L(params: ModelParams, z: complex, n_samples: int, seed: int) -> McComplex:
    """psi_L - phi_L: the walk-expansion remainder, uniformly bounded on region G."""
    psi = psi_L_mc(params, z, n_samples, seed)
    phi = phi_L(params, z)
    return McComplex(
        value=psi.value - phi,
        stderr_re=psi.stderr_re,
        stderr_im=psi.stderr_im,
        n_samples=n_samples,
    )


def g_L_uniform_bound(params: ModelParams, M: float) -> float:
    """C' * weight_sum / L^(d-alpha) with C' = sum_{k>=1} (2d/M)^(k+1)."""
    d = params.d
    if not M > 2 * d:
        raise RegionError(f"M must exceed 2d, got {M}")
    r = 2 * d / M
    c_prime = r**2 / (1 - r)
    box = enumerate_box(params)
    return float(c_prime * weight_sum(box) / params.scale)


@dataclass(frozen=True)
class AppendixLimitReport:
    """Convergence of Im phi_L toward -C Im log(-z_d) along an L sequence."""

    L_values: list[int]
    im_phi: list[float]
    target: float
    errors: list[float]
    C: float
    slope: float
    slope_reference: float  # -min(alpha, d - alpha)
    monotone: bool
    branch_note: str


def extrapolate_weight_constant(d: int, alpha: float, L_ref: int) -> float:
    """Limit of weight_sum / L^(d-alpha) by Richardson extrapolation at L_ref, 2*L_ref."""
    vals = []
    for L in (L_ref, 2 * L_ref):
        p = ModelParams(d=d, alpha=alpha, L=L)
        vals.append(weight_sum(enumerate_box(p)) / p.scale)
    beta = 2.0 ** (-(d - alpha))
    return float((vals[1] - beta * vals[0]) / (1 - beta))


def appendix_limit_check(
    d: int,
    alpha: float,
    L_values,
    z: complex,
    L_ref: int | None = None,
) -> AppendixLimitReport:
    """Evaluate Im phi_L along increasing L and compare with -C Im log(-z_d).

    log(-z_d) is taken on the principal branch with real positive z_d treated
    as the limit from the upper half plane (arg(-z_d) -> -pi), which is the
    quadrature-consistent convention.
    """
    L_values = sorted(int(L) for L in L_values)
    if not d - alpha > 0:
        raise ValueError("need d - alpha > 0")
    z = complex(z)
    z_d = z - 2 * d
    if not z_d.real > 0:
        raise RegionError(f"need Re(z - 2d) > 0, got {z_d.real}")
    if L_ref is None:
        L_ref = 4 * max(L_values)
    C = extrapolate_weight_constant(d, alpha, L_ref)
    if z_d.imag == 0.0:
        # lower-edge limit of the principal branch
        log_neg = complex(math.log(z_d.real), -math.pi)
        branch_note = "z_d real > 0: log(-z_d) = log(z_d) - i*pi (upper-half-plane limit)"
    else:
        log_neg = complex(np.log(complex(-z_d)))
        branch_note = "principal branch of log(-z_d)"
    target = float(-C * log_neg.imag)

    im_phi, errors = [], []
    for L in L_values:
        p = ModelParams(d=d, alpha=alpha, L=L)
        v = phi_L(p, z).imag
        im_phi.append(float(v))
        errors.append(abs(v - target))
    slope = float(np.polyfit(np.log(L_values), np.log(errors), 1)[0])
    monotone = all(errors[i + 1] < errors[i] for i in range(len(errors) - 1))
    return AppendixLimitReport(
        L_values=list(L_values),
        im_phi=im_phi,
        target=target,
        errors=errors,
        C=C,
        slope=slope,
        slope_reference=-min(alpha, d - alpha),
        monotone=monotone,
        branch_note=branch_note,
    )


@dataclass(frozen=True)
class PairMoment:
    n: tuple
    m: tuple
    distance: float
    moment: float
    stderr: float
    bound: float | None  # closed-form bound where one exists (diagonal pairs)
    in_asymptotic_regime: bool


@dataclass(frozen=True)
class FracMomentReport:
    """Fractional moments E|G(z; n, m)|^s across site pairs with a decay fit."""

    s: float
    z: complex
    pairs: list[PairMoment]
    beta_hat: float
    beta_stderr: float
    beta_positive_95: bool
    uniform_bound_ok: bool
    n_samples: int


def frac_moment_bound_diag(b_n: float, s: float) -> float:
    """(3 - s)/(1 - s) * b_n^{-s}: bound on the diagonal fractional moment."""
    return (3 - s) / (1 - s) * b_n ** (-s)


def frac_moment(
    params: ModelParams,
    z: complex,
    s: float,
    pair_list,
    n_samples: int,
    seed: int,
) -> FracMomentReport:
    """Monte Carlo fractional moments E|G(z; n, m)|^s with an exponential-decay fit.

    The decay rate beta_hat comes from a weighted least-squares fit of
    log-moment against Euclidean distance over the off-diagonal pairs.
    """
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0,1), got {s}")
    z = complex(z)
    if z.imag == 0.0:
        raise ValueError("frac_moment requires Im z != 0")
    box = enumerate_box(params)
    b = box.weights()
    n_sites = box.n_sites
    pairs = [(tuple(np.atleast_1d(n)), tuple(np.atleast_1d(m))) for n, m in pair_list]
    pair_idx = [(box.index_of(n), box.index_of(m)) for n, m in pairs]
    rhs_sites = sorted({j for _, j in pair_idx})
    rhs_col = {j: c for c, j in enumerate(rhs_sites)}

    bw = box.params.side ** (box.params.d - 1)
    ab_tpl = np.zeros((2 * bw + 1, n_sites), dtype=complex)
    for i, j in box.neighbor_pairs:
        off = j - i
        ab_tpl[bw + off, i] = -1.0
        ab_tpl[bw - off, j] = -1.0
    rhs = np.zeros((n_sites, len(rhs_sites)), dtype=complex)
    for j, c in rhs_col.items():
        rhs[j, c] = 1.0

    from .lattice import disorder_matrix

    q = disorder_matrix(n_sites, seed, 0, n_samples)
    absG_s = np.empty((n_samples, len(pairs)))
    base = 2.0 * params.d
    for k in range(n_samples):
        ab = ab_tpl.copy()
        ab[bw] = base + b * q[k] - z
        u = sla.solve_banded((bw, bw), ab, rhs)
        for p_, (i, j) in enumerate(pair_idx):
            absG_s[k, p_] = abs(u[i, rhs_col[j]]) ** s

    moments = absG_s.mean(axis=0)
    if n_samples > 1:
        stderrs = absG_s.std(axis=0, ddof=1) / np.sqrt(n_samples)
    else:
        stderrs = np.full(len(pairs), np.inf)

    out_pairs = []
    uniform_ok = True
    for p_, ((n, m), (i, j)) in enumerate(zip(pairs, pair_idx)):
        dist = float(np.linalg.norm(np.asarray(n, float) - np.asarray(m, float)))
        bound = frac_moment_bound_diag(b[i], s) if i == j else None
        if bound is not None and not moments[p_] <= bound + 3 * stderrs[p_]:
            uniform_ok = False
        out_pairs.append(
            PairMoment(
                n=n, m=m, distance=dist, moment=float(moments[p_]),
                stderr=float(stderrs[p_]), bound=bound,
                in_asymptotic_regime=False,
            )
        )

    off = [(pm, se) for pm, se in zip(out_pairs, stderrs) if pm.distance > 0]
    if len(off) >= 2:
        x = np.array([pm.distance for pm, _ in off])
        y = np.log(np.array([pm.moment for pm, _ in off]))
        rel = np.array([se / pm.moment for pm, se in off])
        w = 1.0 / np.maximum(rel, 1e-12) ** 2
        W = np.diag(w)
        X = np.column_stack([np.ones_like(x), x])
        cov = np.linalg.inv(X.T @ W @ X)
        coef = cov @ (X.T @ W @ y)
        beta_hat = float(-coef[1])
        beta_se = float(np.sqrt(cov[1, 1]))
    else:
        beta_hat, beta_se = float("nan"), float("nan")

    return FracMomentReport(
        s=s, z=z, pairs=out_pairs,
        beta_hat=beta_hat, beta_stderr=beta_se,
        beta_positive_95=bool(beta_hat - 1.96 * beta_se > 0),
        uniform_bound_ok=uniform_ok,
        n_samples=n_samples,
    )
