import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dissflow.matcore import (
    EigensolverError,
    commutator,
    frobenius_norm_sq,
    i2_diagonal,
    i2_offdiagonal,
    match_eigenvalues,
    random_complex_matrix,
    random_preconditioner,
    reference_spectrum,
    spectral_discrepancy,
    split_diag_offdiag,
    trace_power_invariants,
)
from dissflow.superfermion import single_mode_matrix

from oracles import charpoly_eigenvalues, exhaustive_discrepancy, naive_commutator


def test_commutator_identity_and_antisymmetry():
    b = random_complex_matrix(4, 1)
    a = random_complex_matrix(4, 2)
    assert np.array_equal(commutator(np.eye(4), b), np.zeros((4, 4)))
    assert np.allclose(commutator(a, b), -commutator(b, a), atol=0)


def test_commutator_matches_triple_loop():
    a = random_complex_matrix(3, 3)
    b = random_complex_matrix(3, 4)
    assert np.allclose(commutator(a, b), naive_commutator(a, b), atol=1e-14)


def test_commutator_rejects_mismatch():
    with pytest.raises(ValueError):
        commutator(np.eye(2), np.eye(3))


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[np.nan]]), np.zeros((0, 0))])
def test_matrix_validation(bad):
    with pytest.raises(ValueError):
        split_diag_offdiag(bad)


def test_split_parts():
    d = np.diag([1.0, 2.0, 3j])
    dd, vv = split_diag_offdiag(d)
    assert np.array_equal(dd, d) and not vv.any()
    z = random_complex_matrix(3, 5)
    np.fill_diagonal(z, 0)
    dd, vv = split_diag_offdiag(z)
    assert not dd.any() and np.array_equal(vv, z)
    m = random_complex_matrix(4, 6)
    dd, vv = split_diag_offdiag(m)
    assert np.array_equal(dd + vv, m)
    assert np.all(np.diag(vv) == 0) and np.count_nonzero(dd - np.diag(np.diag(dd))) == 0


def test_frobenius():
    assert frobenius_norm_sq(np.zeros((3, 3))) == 0
    assert frobenius_norm_sq(np.eye(7)) == pytest.approx(7)
    m = random_complex_matrix(5, 7)
    ref = sum(abs(m[i, j]) ** 2 for i in range(5) for j in range(5))
    assert frobenius_norm_sq(m) == pytest.approx(ref, rel=1e-14)


def test_invariants_diagonal_and_spectrum():
    lam = np.array([0.5, -1.2 + 0.3j, 2j])
    inv = trace_power_invariants(np.diag(lam), 5)
    for n in range(1, 6):
        assert inv[n] == pytest.approx(np.sum(lam ** n), rel=1e-14)
    with pytest.raises(IndexError):
        inv[6]
    with pytest.raises(ValueError):
        trace_power_invariants(np.eye(2), 0)

    m = random_complex_matrix(15, 8)
    w = reference_spectrum(m)
    inv = trace_power_invariants(m, 15)
    for n in range(1, 16):
        ref = np.sum(w ** n)
        assert abs(inv[n] - ref) / abs(ref) < 1e-8


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
def test_similarity_invariance(dim, seed):
    m = random_complex_matrix(dim, seed)
    r = random_preconditioner(dim, seed, 0.5)
    rm = r @ m @ np.linalg.inv(r)
    nmax = min(dim, 15)
    drift = trace_power_invariants(rm, nmax).relative_drift(trace_power_invariants(m, nmax))
    assert np.all(drift < 1e-9)


def test_i2_partition():
    d = np.diag([1.0, 2.0, 3.0])
    assert i2_offdiagonal(d) == 0
    u = np.triu(random_complex_matrix(5, 9), 1)
    assert i2_offdiagonal(u) == 0
    m = random_complex_matrix(6, 10)
    total = trace_power_invariants(m, 2)[2]
    assert abs(i2_offdiagonal(m) - (np.trace(m @ m) - np.sum(np.diag(m) ** 2))) < 1e-12
    assert abs(i2_offdiagonal(m) + i2_diagonal(m) - total) < 1e-12


def test_random_matrix_contract():
    assert np.array_equal(random_complex_matrix(4, 11), random_complex_matrix(4, 11))
    assert not np.array_equal(random_complex_matrix(4, 11), random_complex_matrix(4, 12))
    m = random_complex_matrix(15, 13)
    assert np.all(np.abs(m.real) <= 1) and np.all(np.abs(m.imag) <= 1)
    samples = np.array([random_complex_matrix(1, s)[0, 0] for s in range(10_000)])
    assert abs(samples.real.mean()) < 0.05 and abs(samples.imag.mean()) < 0.05
    with pytest.raises(ValueError):
        random_complex_matrix(0, 1)


def test_preconditioner():
    with pytest.raises(ValueError):
        random_preconditioner(3, 0, 0.0)
    r = random_preconditioner(4, 0, 1e-9)
    assert np.allclose(r, np.eye(4), atol=1e-8)
    m = random_complex_matrix(6, 14)
    r = random_preconditioner(6, 3)
    assert np.array_equal(r, random_preconditioner(6, 3))
    moved = reference_spectrum(r @ m @ np.linalg.inv(r))
    assert spectral_discrepancy(moved, reference_spectrum(m)) < 1e-8
    tri = np.array([[1.0, 2.0, 3.0], [0.0, 2.0, 1.0], [0.0, 0.0, -1.0]], dtype=complex)
    assert i2_offdiagonal(tri) == 0
    assert abs(i2_offdiagonal(r[:3, :3] @ tri @ np.linalg.inv(r[:3, :3]))) > 0


def test_reference_spectrum_examples():
    d = np.diag([3.0, -1j, 0.5])
    assert np.array_equal(np.sort_complex(reference_spectrum(d)), np.sort_complex(np.diag(d)))
    w = reference_spectrum(single_mode_matrix(0.7, 0.3, 0.1))
    assert spectral_discrepancy(w, [0.7 - 0.2j, 0.7 + 0.2j]) < 1e-14
    companion = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=complex)
    roots = np.exp(2j * np.pi * np.arange(3) / 3)
    assert spectral_discrepancy(reference_spectrum(companion), roots) < 1e-10


def test_reference_spectrum_residuals():
    m = random_complex_matrix(12, 15)
    w, v = np.linalg.eig(m)
    w2 = reference_spectrum(m)
    assert spectral_discrepancy(w, w2) < 1e-12
    for k in range(12):
        assert np.linalg.norm(m @ v[:, k] - w[k] * v[:, k]) / np.linalg.norm(v[:, k]) < 1e-10


def test_reference_spectrum_rejects_nonfinite():
    with pytest.raises(ValueError):
        reference_spectrum(np.array([[np.inf, 0], [0, 1]]))
    assert issubclass(EigensolverError, RuntimeError)


@pytest.mark.parametrize("dim", [1, 2, 3, 4])
@pytest.mark.parametrize("seed", range(5))
def test_reference_spectrum_vs_charpoly(dim, seed):
    m = random_complex_matrix(dim, 100 * dim + seed)
    assert spectral_discrepancy(reference_spectrum(m), charpoly_eigenvalues(m)) < 1e-9


def test_discrepancy_examples():
    a = np.array([1.0, 2j, -3.0 + 1j, 0.5])
    assert spectral_discrepancy(a, a) == 0
    b = a.copy()
    b[2] += 1e-3
    assert spectral_discrepancy(a, b) == pytest.approx(1e-3, rel=1e-9)
    assert spectral_discrepancy(a, a[[2, 0, 3, 1]]) == 0
    with pytest.raises(ValueError):
        spectral_discrepancy(a, a[:3])


@pytest.mark.parametrize("dim", [2, 4, 6, 7])
def test_matching_is_optimal(dim):
    rng = np.random.default_rng(dim)
    for _ in range(5):
        a = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        b = a[rng.permutation(dim)] + 0.8 * (rng.normal(size=dim) + 1j * rng.normal(size=dim))
        assert spectral_discrepancy(a, b) == pytest.approx(exhaustive_discrepancy(a, b), rel=1e-12)
        perm = match_eigenvalues(a, b)
        assert sorted(perm) == list(range(dim))
