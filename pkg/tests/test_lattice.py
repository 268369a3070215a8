import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speclab.lattice import (
    DisorderSample,
    LatticeError,
    ModelParams,
    assemble_hamiltonian,
    enumerate_box,
    sample_disorder,
    submatrix_dense,
    weight_b,
    weight_sum,
)


def test_enumerate_box_d1():
    box = enumerate_box(ModelParams(d=1, alpha=2.0, L=1))
    assert box.sites.ravel().tolist() == [-1, 0, 1]
    assert box.n_sites == 3


def test_enumerate_box_d2_order():
    box = enumerate_box(ModelParams(d=2, alpha=1.5, L=1))
    assert box.n_sites == 9
    assert box.sites[0].tolist() == [-1, -1]
    assert box.sites[-1].tolist() == [1, 1]
    # full lexicographic order
    expected = list(itertools.product([-1, 0, 1], repeat=2))
    assert [tuple(s) for s in box.sites] == expected


def test_enumerate_box_d2_L40_count():
    box = enumerate_box(ModelParams(d=2, alpha=1.5, L=40))
    assert box.n_sites == 81**2 == 6561


def test_index_of_roundtrip():
    box = enumerate_box(ModelParams(d=3, alpha=1.2, L=2))
    for i in range(box.n_sites):
        assert box.index_of(box.sites[i]) == i
    with pytest.raises(LatticeError):
        box.index_of((3, 0, 0))


def test_params_validation():
    with pytest.raises(LatticeError):
        ModelParams(d=0, alpha=2.0, L=1)
    with pytest.raises(LatticeError):
        ModelParams(d=1, alpha=1.0, L=1)
    with pytest.raises(LatticeError):
        ModelParams(d=1, alpha=2.0, L=0)


def test_weight_b_values():
    assert weight_b((0, 0), 1.7) == 1.0
    assert weight_b((3, 4), 1.0) == pytest.approx(6.0, abs=1e-15)
    assert weight_b((1, 1), 2.0) == pytest.approx(3.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(-20, 20), min_size=1, max_size=4),
    st.floats(0.3, 4.0),
)
def test_weight_b_symmetry(coord, alpha):
    v = weight_b(coord, alpha)
    assert v >= 1.0
    flipped = [-c for c in coord]
    assert weight_b(flipped, alpha) == pytest.approx(v, rel=1e-14)
    permuted = list(reversed(coord))
    assert weight_b(permuted, alpha) == pytest.approx(v, rel=1e-14)


def test_weight_sum_d1():
    box = enumerate_box(ModelParams(d=1, alpha=2.0, L=1))
    assert weight_sum(box) == pytest.approx(0.5 + 1.0 + 0.5, abs=1e-15)


def test_weight_sum_against_double_loop():
    params = ModelParams(d=2, alpha=1.5, L=10)
    box = enumerate_box(params)
    # independent oracle: explicit double loop
    acc = 0.0
    for n1 in range(-10, 11):
        for n2 in range(-10, 11):
            acc += 1.0 / (1.0 + (n1 * n1 + n2 * n2) ** 0.75)
    assert weight_sum(box) == pytest.approx(acc, rel=1e-12)


def test_weight_sum_theta_growth():
    # ratio to L^(d-alpha) stays within fixed positive constants
    ratios = []
    for L in (20, 40, 80):
        p = ModelParams(d=2, alpha=1.5, L=L)
        ratios.append(weight_sum(enumerate_box(p)) / p.scale)
    assert min(ratios) > 0
    assert max(ratios) / min(ratios) < 1.5


def test_sample_disorder_deterministic():
    box = enumerate_box(ModelParams(d=2, alpha=1.5, L=3))
    s1 = sample_disorder(box, seed=123, sample_index=5)
    s2 = sample_disorder(box, seed=123, sample_index=5)
    assert np.array_equal(s1.values, s2.values)
    s3 = sample_disorder(box, seed=123, sample_index=6)
    assert not np.array_equal(s1.values, s3.values)
    assert np.all((s1.values >= 0) & (s1.values <= 1))


def test_sample_disorder_uniform_mean():
    box = enumerate_box(ModelParams(d=1, alpha=2.0, L=1))
    idx = box.index_of((0,))
    draws = np.array([sample_disorder(box, 99, k).values[idx] for k in range(10_000)])
    assert abs(draws.mean() - 0.5) < 0.02


def test_assemble_free_tridiagonal():
    box = enumerate_box(ModelParams(d=1, alpha=2.0, L=1))
    h = assemble_hamiltonian(box, 2.0, DisorderSample(np.zeros(3), 0, 0))
    dense = h.to_dense()
    assert np.allclose(np.diag(dense), [2.0, 2.0, 2.0])
    assert dense[0, 1] == dense[1, 0] == -1.0
    assert dense[1, 2] == dense[2, 1] == -1.0
    assert dense[0, 2] == 0.0
    # brute-force characteristic polynomial oracle for the eigenvalues
    roots = np.sort(np.roots(np.poly(dense)).real)
    closed = np.array([2 - 2 * np.cos(j * np.pi / 4) for j in (1, 2, 3)])
    assert np.allclose(roots, closed, atol=1e-8)


def test_assemble_unit_disorder_diagonal():
    box = enumerate_box(ModelParams(d=1, alpha=2.0, L=1))
    h = assemble_hamiltonian(box, 2.0, DisorderSample(np.ones(3), 0, 0))
    assert np.allclose(h.diag, [4.0, 3.0, 4.0])


def test_assemble_symmetry_random():
    params = ModelParams(d=2, alpha=1.5, L=3)
    box = enumerate_box(params)
    h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, 4, 0))
    dense = h.to_dense()
    assert np.array_equal(dense, dense.T)
    assert np.all(h.diag >= 2 * params.d)
    assert np.all(h.diag <= 2 * params.d + box.weights())


def test_assemble_mismatch_raises():
    box = enumerate_box(ModelParams(d=2, alpha=1.5, L=2))
    with pytest.raises(LatticeError):
        assemble_hamiltonian(box, 1.5, DisorderSample(np.zeros(7), 0, 0))


@pytest.mark.parametrize("d,L", [(1, 5), (2, 3), (3, 2)])
def test_neighbor_pair_count(d, L):
    box = enumerate_box(ModelParams(d=d, alpha=1.5, L=L))
    side = 2 * L + 1
    expected = d * (2 * L) * side ** (d - 1)
    assert box.neighbor_pairs.shape[0] == expected


@pytest.mark.parametrize("d,L", [(1, 6), (2, 2), (3, 1)])
def test_free_spectrum_in_kinetic_band(d, L):
    # with q = 0 the matrix is the truncated kinetic part: spectrum in [0, 4d]
    params = ModelParams(d=d, alpha=1.5, L=L)
    box = enumerate_box(params)
    h = assemble_hamiltonian(box, params.alpha, DisorderSample(np.zeros(box.n_sites), 0, 0))
    w = np.linalg.eigvalsh(h.to_dense())
    assert w.min() >= -1e-12
    assert w.max() <= 4 * d + 1e-12


def test_banded_storage_matches_dense():
    params = ModelParams(d=2, alpha=1.5, L=3)
    box = enumerate_box(params)
    h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, 11, 2))
    band = h.to_lower_banded()
    dense = h.to_dense()
    assert np.array_equal(band[0], np.diag(dense))
    for k in range(1, band.shape[0]):
        assert np.array_equal(band[k, : h.n - k], np.diag(dense, -k))


def test_submatrix_dense_is_principal_block():
    params = ModelParams(d=2, alpha=1.5, L=2)
    box = enumerate_box(params)
    sample = sample_disorder(box, 5, 0)
    h = assemble_hamiltonian(box, params.alpha, sample).to_dense()
    idx = np.array([0, 1, 2, 7, 8, 12])
    sub = submatrix_dense(box, params.alpha, sample, idx)
    assert np.array_equal(sub, h[np.ix_(idx, idx)])
