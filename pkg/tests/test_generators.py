import numpy as np
import pytest

from dissflow.generators import (
    GeneratorKind,
    check_sw_relation,
    compute_generator,
    default_white_tol,
    generator_diag_adjoint,
    generator_wegner,
    generator_white,
)
from dissflow.matcore import commutator, offdiag, random_complex_matrix
from dissflow.models import ScatteringSpec, build_scattering_matrix

from oracles import wegner_eta_loops


def _mode(alpha, mu1, mu2, eps=0.4):
    return np.array([[eps + 1j * alpha, mu2], [-mu1, eps - 1j * alpha]])


def test_parse_aliases():
    assert GeneratorKind.parse("3") is GeneratorKind.WHITE
    assert GeneratorKind.parse("diag_adjoint") is GeneratorKind.DIAG_ADJOINT
    assert GeneratorKind.parse("Wegner") is GeneratorKind.WEGNER
    with pytest.raises(ValueError):
        GeneratorKind.parse("canonical")


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_zero_on_diagonal_input(kind):
    d = np.diag([1.0, 2 - 1j, -0.5j, 3.0])
    assert not compute_generator(d, kind).any()


def test_wegner_single_mode_and_composition():
    a, m1, m2 = -0.3, 0.7, 0.2
    eta = generator_wegner(_mode(a, m1, m2))
    exp = np.array([[m1**2 - m2**2, -2j * a * m2], [-2j * a * m1, -(m1**2 - m2**2)]])
    assert np.allclose(eta, exp, atol=1e-15)
    l = random_complex_matrix(4, 1)
    assert np.allclose(generator_wegner(l), commutator(l.conj().T, offdiag(l)), atol=1e-14)
    assert np.allclose(generator_wegner(l), wegner_eta_loops(l), atol=1e-13)


def test_wegner_hermitian_is_antihermitian():
    a = random_complex_matrix(6, 2)
    h = a + a.conj().T
    eta = generator_wegner(h)
    assert np.max(np.abs(eta.conj().T + eta)) < 1e-13


def test_diag_adjoint_forms():
    a, m1, m2 = 0.45, 0.3, 1.1
    eta = generator_diag_adjoint(_mode(a, m1, m2))
    assert np.allclose(eta, [[0, -2j * a * m2], [-2j * a * m1, 0]], atol=1e-15)
    l = random_complex_matrix(5, 3)
    d = np.diag(np.diag(l))
    assert np.max(np.abs(generator_diag_adjoint(l) - commutator(d.conj().T, offdiag(l)))) < 1e-13


def test_white_forms():
    a, m1, m2 = -0.6, 0.25, 0.8
    eta = generator_white(_mode(a, m1, m2))
    assert np.allclose(eta, -(1j / (2 * a)) * np.array([[0, m2], [m1, 0]]), atol=1e-15)


def test_white_degenerate_pair_is_zeroed():
    l = np.array([[1.0, 0.3, 0.2], [0.4, 1.0, 0.1], [0.5, 0.6, 2.0]], dtype=complex)
    eta = generator_white(l)
    assert eta[0, 1] == 0 and eta[1, 0] == 0
    assert eta[0, 2] != 0
    with pytest.raises(ValueError):
        generator_white(l, tol=-1.0)
    assert default_white_tol(l) == pytest.approx(1e-10)


def test_white_solves_first_order_condition():
    l = random_complex_matrix(7, 4)
    eta = generator_white(l)
    d = np.diag(np.diag(l))
    assert np.max(np.abs(commutator(eta, d) + offdiag(l))) < 1e-13


def test_check_sw_relation():
    assert check_sw_relation(random_complex_matrix(4, 5)) < 1e-12
    assert check_sw_relation(_mode(0.4, 0.3, 0.2)) < 1e-14
    m = build_scattering_matrix(ScatteringSpec(v=1.0, gamma=1.0, j_cutoff=5))
    assert check_sw_relation(m) < 1e-10
    with pytest.raises(ValueError):
        check_sw_relation(np.array([[1.0, 0.2], [0.1, 1.0]]))
