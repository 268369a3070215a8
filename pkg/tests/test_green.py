import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from speclab.green import (
    BranchCutError,
    BudgetError,
    RegionError,
    RegionGParams,
    appendix_limit_check,
    b_ell,
    b_ell_bound,
    branch_log,
    closed_walk_counts,
    extrapolate_weight_constant,
    frac_moment,
    frac_moment_bound_diag,
    g_L,
    g_L_uniform_bound,
    in_region_G,
    phi_L,
    psi_L_mc,
    resolvent_entry,
    walk_expansion_diag,
    weights_within,
)
from speclab.lattice import (
    DisorderSample,
    HamiltonianMatrix,
    LatticeBox,
    ModelParams,
    assemble_hamiltonian,
    enumerate_box,
    sample_disorder,
    weight_sum,
)
from speclab.spectral import SolverError


def quad_b_ell(a, z, ell):
    return quad(lambda x: 1.0 / (a * x - z) ** ell, 0, 1, complex_func=True, epsabs=1e-12)[0]


def test_b_ell_spec_values():
    assert b_ell(2, 4, 1) == pytest.approx(-np.log(2) / 2, abs=1e-12)
    assert b_ell(1, 1j, 1) == pytest.approx(np.log(1 + 1j), abs=1e-12)
    assert b_ell(1, 1j, 2) == pytest.approx(-0.5 + 0.5j, abs=1e-12)


def _off_cut_z(rng):
    """z where the straight-line integral equals the continuation: upper half
    plane, the real axis off [0, a], or the lower half plane outside the strip."""
    region = rng.integers(3)
    if region == 0:
        return complex(rng.uniform(-150, 150), rng.uniform(1e-3, 100))
    if region == 1:
        return complex(rng.uniform(101, 400), rng.uniform(-100, -1e-3))
    return complex(rng.uniform(-400, -1e-3), rng.uniform(-100, -1e-3))


def test_b_ell_matches_quadrature_100_cases():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.uniform(1, 100)
        ell = int(rng.integers(1, 6))
        z = _off_cut_z(rng)
        assert abs(b_ell(a, z, ell) - quad_b_ell(a, z, ell)) <= 1e-9


def test_b_ell_monodromy_below_segment():
    # below the open segment (0, a) the continuation differs from the straight
    # integral by the loop monodromy 2 pi i / a (for ell = 1)
    a = 3.0
    z = 1.5 - 0.8j
    diff = b_ell(a, z, 1) - quad_b_ell(a, z, 1)
    assert diff == pytest.approx(2j * np.pi / a, abs=1e-10)


def test_b_ell_cut_raises():
    with pytest.raises(BranchCutError):
        b_ell(2.0, -1j, 1)
    with pytest.raises(BranchCutError):
        b_ell(2.0, 2.0 - 0.5j, 3)
    with pytest.raises(BranchCutError):
        b_ell(2.0, 0j, 1)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(-30.0, 30.0), st.floats(1e-6, 30.0))
def test_b_ell_herglotz(a, x, y):
    # Borel transform of a positive measure: Im z > 0 => Im B_1 > 0
    assert b_ell(a, complex(x, y), 1).imag > 0


def test_branch_log_range():
    ws = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j, 1.0, -1.0])
    args = np.imag(np.log(np.abs(ws))) * 0 + np.vectorize(lambda w: branch_log(w).imag)(ws)
    assert np.all(args > -np.pi / 2)
    assert np.all(args <= 3 * np.pi / 2)
    # continuity across the negative real axis (unlike the principal branch)
    eps = 1e-12
    assert branch_log(-1 + eps * 1j).imag == pytest.approx(np.pi, abs=1e-9)
    assert branch_log(-1 - eps * 1j).imag == pytest.approx(np.pi, abs=1e-9)


def test_b_ell_bound_values_and_check():
    z = 51 + 51j
    bound1 = b_ell_bound(1, z, 1, 5)
    assert bound1 == pytest.approx((3 * np.pi + 1) + 1 / 50, abs=1e-12)
    assert abs(b_ell(1, z, 1)) <= bound1
    bound2 = b_ell_bound(1, z, 2, 5)
    assert bound2 == pytest.approx(1 / 5, abs=1e-12)
    assert abs(b_ell(1, z, 2)) <= bound2
    for ell in (3, 4, 5):
        assert abs(b_ell(1, z, ell)) <= b_ell_bound(1, z, ell, 5)


def test_b_ell_bound_monotone_in_a():
    z = 200 + 10j
    bounds = [b_ell_bound(a, z, 1, 5) for a in (1, 2, 4, 8)]
    assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_b_ell_bound_preconditions():
    with pytest.raises(RegionError):
        b_ell_bound(1, 10 + 10j, 1, 5)  # Re z too small
    with pytest.raises(RegionError):
        b_ell_bound(60, 60 + 1j, 1, 5)  # too close to a
    with pytest.raises(RegionError):
        RegionGParams(M=3.9, alpha=1.5, d=2)


def test_in_region_G_examples():
    p = RegionGParams(M=5.0, alpha=1.5, d=2)
    b_vals = weights_within(2, 1.5, 500.0)
    assert in_region_G(51 + 51j, p, b_vals)
    assert not in_region_G(51 + 0.5j, p, b_vals)
    assert not in_region_G(50 + 51j, p, b_vals)  # Re z = 2M^2 is excluded (strict)


def test_resolvent_entry_scalar_case():
    # single-site box: G = 1/(2d + b0 q0 - z)
    params = ModelParams(d=1, alpha=2.0, L=1)
    box = enumerate_box(params)
    single = LatticeBox(
        params=params, sites=np.zeros((1, 1), dtype=np.int64)
    )
    h = HamiltonianMatrix(
        box=single, diag=np.array([2.0 + 0.37]), pairs=np.empty((0, 2), dtype=np.int64)
    )
    z = 1.0 + 0.5j
    assert resolvent_entry(h, z, (0,), (0,)) == pytest.approx(1 / (2.37 - z), abs=1e-12)


def test_resolvent_symmetry_and_spectral_form():
    params = ModelParams(d=1, alpha=2.0, L=2)
    box = enumerate_box(params)
    h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, 3, 1))
    z = 2 + 1j
    g01 = resolvent_entry(h, z, (0,), (1,))
    g10 = resolvent_entry(h, z, (1,), (0,))
    assert g01 == pytest.approx(g10, abs=1e-12)
    # spectral-resolution oracle on the 5x5 instance
    w, v = np.linalg.eigh(h.to_dense())
    i, j = box.index_of((0,)), box.index_of((1,))
    ref = np.sum(v[i] * v[j] / (w - z))
    assert g01 == pytest.approx(ref, abs=1e-8)


def test_resolvent_identity():
    params = ModelParams(d=2, alpha=1.5, L=1)
    box = enumerate_box(params)
    h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, 8, 0))
    a = h.to_dense()
    z, w = 1 + 1j, 3 - 2j
    gz = np.linalg.inv(a - z * np.eye(h.n))
    gw = np.linalg.inv(a - w * np.eye(h.n))
    assert np.allclose(gz - gw, (z - w) * gz @ gw, atol=1e-8)


def test_resolvent_entry_real_z_raises():
    params = ModelParams(d=1, alpha=2.0, L=1)
    box = enumerate_box(params)
    h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, 3, 0))
    with pytest.raises(ValueError):
        resolvent_entry(h, 2.0, (0,), (0,))


def test_walk_counts_match_adjacency_power():
    params = ModelParams(d=2, alpha=1.5, L=2)
    box = enumerate_box(params)
    n_idx = box.index_of((0, 0))
    counts = closed_walk_counts(box, n_idx, 6)
    adj = np.zeros((box.n_sites, box.n_sites))
    for i, j in box.neighbor_pairs:
        adj[i, j] = adj[j, i] = 1.0
    power = np.eye(box.n_sites)
    for k in range(7):
        assert counts[k] == int(round(power[n_idx, n_idx]))
        power = power @ adj
    # closed walks on a bipartite graph have even length
    assert counts[1] == counts[3] == counts[5] == 0


def test_walk_expansion_k0_term():
    params = ModelParams(d=1, alpha=2.0, L=2)
    box = enumerate_box(params)
    z = 2 + 11j
    res = walk_expansion_diag(box, params.alpha, z, (0,), 0)
    assert res.value == pytest.approx(b_ell(1.0, z - 2, 1), abs=1e-12)
    assert res.paths_enumerated == 1


def test_walk_expansion_tail_halves():
    params = ModelParams(d=1, alpha=2.0, L=2)
    box = enumerate_box(params)
    z = 2 + 10j
    t4 = walk_expansion_diag(box, params.alpha, z, (0,), 4).tail_bound
    t6 = walk_expansion_diag(box, params.alpha, z, (0,), 6).tail_bound
    t8 = walk_expansion_diag(box, params.alpha, z, (0,), 8).tail_bound
    ratio = 2 * params.d / z.imag
    assert t6 <= t4 * ratio**2 + 1e-15
    assert t8 <= t6 * ratio**2 + 1e-15


def test_walk_expansion_vs_monte_carlo():
    params = ModelParams(d=1, alpha=2.0, L=2)
    box = enumerate_box(params)
    z = 2 + 10j
    res = walk_expansion_diag(box, params.alpha, z, (0,), 8)
    rng_draws = 20_000
    b = box.weights()
    vals = np.empty(rng_draws, dtype=complex)
    idx = box.index_of((0,))
    for k in range(rng_draws):
        q = sample_disorder(box, 77, k).values
        a = np.diag(2.0 + b * q + 0j)
        a -= np.diag(np.ones(4), 1) + np.diag(np.ones(4), -1)
        vals[k] = np.linalg.inv(a - z * np.eye(5))[idx, idx]
    mc = vals.mean()
    se = np.hypot(vals.real.std(ddof=1), vals.imag.std(ddof=1)) / np.sqrt(rng_draws)
    assert abs(res.value - mc) <= res.tail_bound + 3 * se


def test_walk_expansion_regime_required():
    params = ModelParams(d=2, alpha=1.5, L=2)
    box = enumerate_box(params)
    with pytest.raises(RegionError):
        walk_expansion_diag(box, params.alpha, 2 + 1j, (0, 0), 4)


def test_walk_expansion_budget():
    params = ModelParams(d=3, alpha=1.5, L=3)
    box = enumerate_box(params)
    with pytest.raises(BudgetError):
        walk_expansion_diag(box, params.alpha, 7 + 20j, (0, 0, 0), 12, budget=1000)


def test_phi_L_conjugate_symmetry():
    params = ModelParams(d=2, alpha=1.5, L=5)
    z = 30 + 5j
    assert phi_L(params, np.conj(z)) == pytest.approx(np.conj(phi_L(params, z)), abs=1e-12)


def test_phi_L_against_quadrature():
    params = ModelParams(d=2, alpha=1.5, L=10)
    z = 30 + 5j
    box = enumerate_box(params)
    b = box.weights()
    acc = 0.0 + 0.0j
    for bn in b:
        acc += quad(lambda x, bn=bn: 1.0 / (bn * x + 2 * params.d - z), 0, 1,
                    complex_func=True, epsabs=1e-13)[0]
    assert phi_L(params, z) == pytest.approx(acc / params.scale, abs=1e-10)


def test_g_L_uniform_bound_in_region_G():
    params = ModelParams(d=2, alpha=1.5, L=6)
    M = 5.0
    z = 60 + 51j
    b_vals = weights_within(2, 1.5, 1000.0)
    assert in_region_G(z, RegionGParams(M=M, alpha=1.5, d=2), b_vals)
    est = g_L(params, z, n_samples=150, seed=21)
    bound = g_L_uniform_bound(params, M)
    assert abs(est.value) <= bound + 3 * est.stderr


def test_psi_matches_phi_at_large_imag():
    # far from the spectrum the resolvent is dominated by its diagonal part
    params = ModelParams(d=1, alpha=2.0, L=3)
    z = 2 + 60j
    psi = psi_L_mc(params, z, n_samples=200, seed=5)
    assert abs(psi.value - phi_L(params, z)) <= 0.02 * abs(phi_L(params, z)) + 3 * psi.stderr


def test_appendix_limit_decreasing_and_slope():
    rep = appendix_limit_check(2, 1.5, [10, 20, 40, 80], z=(5 + 2j) + 4)
    assert rep.monotone
    ref = rep.slope_reference
    assert abs(rep.slope - ref) <= 0.25 * abs(ref)


def test_appendix_branch_at_real_zd():
    # real z_d > 0 away from the weights: Im phi_L is close to +pi * C_L
    params = ModelParams(d=2, alpha=1.5, L=20)
    z_d = 4.5
    v = phi_L(params, z_d + 4).imag
    c_l = weight_sum(enumerate_box(params)) / params.scale
    frac_above = np.sum(1.0 / enumerate_box(params).weights()[enumerate_box(params).weights() > z_d])
    assert v == pytest.approx(np.pi * frac_above / params.scale, rel=1e-12)
    assert v <= np.pi * c_l
    rep = appendix_limit_check(2, 1.5, [10, 20], z=z_d + 4)
    assert rep.target > 0
    assert "i*pi" in rep.branch_note or "pi" in rep.branch_note


def test_appendix_excluded_point_raises():
    with pytest.raises(BranchCutError):
        # z_d = 1 equals the weight at the origin
        appendix_limit_check(2, 1.5, [10, 20], z=1.0 + 4)


def test_extrapolated_constant_close_to_direct():
    c1 = extrapolate_weight_constant(2, 1.5, 80)
    c2 = extrapolate_weight_constant(2, 1.5, 160)
    assert c1 == pytest.approx(c2, rel=2e-3)


def test_frac_moment_diagonal_bound_and_decay():
    params = ModelParams(d=2, alpha=1.5, L=6)
    z = 12 + 0.5j
    s = 0.5
    pairs = [((0, 0), (0, 0)), ((3, 0), (3, 0))]
    pairs += [((0, 0), (r, 0)) for r in range(1, 6)]
    rep = frac_moment(params, z, s, pairs, n_samples=400, seed=31)
    for pm in rep.pairs:
        if pm.bound is not None:
            assert pm.moment <= pm.bound + 3 * pm.stderr
    assert rep.uniform_bound_ok
    assert rep.beta_hat > 0


def test_frac_moment_decreases_with_site_norm():
    # at fixed distance the moment shrinks as the pair moves outward
    params = ModelParams(d=2, alpha=1.5, L=6)
    pairs = [((0, 0), (1, 0)), ((3, 0), (4, 0)), ((5, 0), (6, 0))]
    rep = frac_moment(params, 12 + 0.5j, 0.5, pairs, n_samples=600, seed=17)
    m = [pm.moment for pm in rep.pairs]
    se = [pm.stderr for pm in rep.pairs]
    assert m[1] <= m[0] + 3 * np.hypot(se[0], se[1])
    assert m[2] <= m[1] + 3 * np.hypot(se[1], se[2])


def test_frac_moment_validation():
    params = ModelParams(d=1, alpha=2.0, L=2)
    with pytest.raises(ValueError):
        frac_moment(params, 1 + 1j, 1.5, [((0,), (1,))], 10, 0)
    with pytest.raises(ValueError):
        frac_moment(params, 2.0, 0.5, [((0,), (1,))], 10, 0)


def test_frac_moment_bound_value():
    assert frac_moment_bound_diag(1.0, 0.5) == pytest.approx(5.0, abs=1e-14)
