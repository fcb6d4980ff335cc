"""Matrix representation of quadratic fermionic Lindbladians.

A master equation with quadratic Hamiltonian ``h`` and linear jump
operators is fixed by three Hermitian ``L x L`` matrices: ``h``, the loss
matrix ``lambda1`` and the gain matrix ``lambda2``. In the superfermion
picture it becomes the ``2L x 2L`` matrix::

    M = [[ h - i/2 (lambda1 - lambda2),  conj(lambda2)               ],
         [ -lambda1,                     h + i/2 (lambda1 - lambda2) ]]

plus a complex constant ``K``. Units have hbar = 1.

The single-mode model (energy ``eps``, loss ``g1``, gain ``g2``) is the
``L = 1`` case and has closed-form flows for every generator; those are
collected here as test anchors for the generic engine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .flowengine import FlowConfig, run_flow
from .generators import GeneratorKind
from .matcore import as_matrix

HERMITIAN_TOL = 1e-12


def _is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol * max(1.0, np.max(np.abs(a))))


@dataclass(frozen=True)
class QuadraticLindblad:
    h: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("h", "lambda1", "lambda2"):
            a = as_matrix(getattr(self, name), name)
            if not _is_hermitian(a):
                raise ValueError(f"{name} is not Hermitian")
            mats[name] = a
            object.__setattr__(self, name, a)
        shapes = {a.shape for a in mats.values()}
        if len(shapes) != 1:
            raise ValueError(f"h, lambda1, lambda2 must share one shape, got {shapes}")
        for name in ("lambda1", "lambda2"):
            ev = np.linalg.eigvalsh(mats[name])
            if ev.min() < -1e-10 * max(1.0, abs(ev).max()):
                raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {ev.min():.3g})")

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    def to_json(self) -> str:
        """Serialise as ``{"dim", "h", "lambda1", "lambda2"}`` with row-major [re, im] pairs."""
        def pairs(a):
            return [[float(z.real), float(z.imag)] for z in a.ravel()]
        return json.dumps({"dim": self.dim, "h": pairs(self.h), "lambda1": pairs(self.lambda1),
                           "lambda2": pairs(self.lambda2)}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "QuadraticLindblad":
        doc = json.loads(text)
        n = int(doc["dim"])

        def mat(key):
            vals = doc[key]
            if len(vals) != n * n:
                raise ValueError(f"{key}: expected {n * n} entries, got {len(vals)}")
            return np.array([complex(re, im) for re, im in vals]).reshape(n, n)

        return cls(mat("h"), mat("lambda1"), mat("lambda2"))


def lambdas_from_jumps(loss_vectors=(), gain_vectors=()) -> tuple[np.ndarray, np.ndarray]:
    """Assemble ``(lambda1, lambda2)`` from jump-operator coefficient vectors.

    A loss jump ``sum_m l_m c_m`` contributes ``conj(l_m) l_n`` to
    ``lambda1[m, n]``; a gain jump ``sum_m l_m c_m^dagger`` contributes
    ``l_m conj(l_n)`` to ``lambda2[m, n]``. Each jump operator must be pure
    loss or pure gain, which is why they arrive in separate lists.
    """
    vecs = [np.asarray(v, dtype=complex) for v in (*loss_vectors, *gain_vectors)]
    if not vecs:
        raise ValueError("need at least one jump vector")
    n = vecs[0].size
    if any(v.shape != (n,) for v in vecs):
        raise ValueError("jump vectors must share one length")
    lam1 = np.zeros((n, n), dtype=complex)
    lam2 = np.zeros((n, n), dtype=complex)
    for v in loss_vectors:
        v = np.asarray(v, dtype=complex)
        lam1 += np.outer(v.conj(), v)
    for v in gain_vectors:
        v = np.asarray(v, dtype=complex)
        lam2 += np.outer(v, v.conj())
    return lam1, lam2


@dataclass(frozen=True)
class SuperfermionMatrix:
    m: np.ndarray
    k_const: complex

    @property
    def modes(self) -> int:
        return self.m.shape[0] // 2


def sigma1(modes: int) -> np.ndarray:
    z = np.zeros((modes, modes))
    e = np.eye(modes)
    return np.block([[z, e], [e, z]])


def build_M(spec: QuadraticLindblad) -> SuperfermionMatrix:
    h, l1, l2 = spec.h, spec.lambda1, spec.lambda2
    diss = 0.5j * (l1 - l2)
    m = np.block([[h - diss, l2.conj()], [-l1, h + diss]])
    # K sign follows the single-mode constant -eps - i(g1 + g2)/2
    k = -np.trace(h) - 0.5j * np.trace(l1 + l2)
    return SuperfermionMatrix(m, complex(k))


def sigma1_residual(sf: SuperfermionMatrix) -> float:
    s = sigma1(sf.modes)
    return float(np.max(np.abs(sf.m - s @ sf.m.conj().T @ s)))


def reduce_blocks_real_lambda2(spec: QuadraticLindblad) -> np.ndarray:
    """``M' = h - i/2 (lambda1 + lambda2)`` for real ``lambda2``.

    Together with its partner block ``h + i/2 (lambda1 + lambda2)`` it carries
    the whole spectrum of :func:`build_M`.
    """
    if np.max(np.abs(spec.lambda2.imag), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("lambda2 must be real for the block reduction")
    return spec.h - 0.5j * (spec.lambda1 + spec.lambda2)


def partner_block_real_lambda2(spec: QuadraticLindblad) -> np.ndarray:
    reduce_blocks_real_lambda2(spec)
    return spec.h + 0.5j * (spec.lambda1 + spec.lambda2)


# ---------------------------------------------------------------- single mode


def single_mode_spec(eps: float, g1: float, g2: float) -> QuadraticLindblad:
    return QuadraticLindblad(np.array([[eps]]), np.array([[g1]]), np.array([[g2]]))


def single_mode_matrix(eps: float, g1: float, g2: float) -> np.ndarray:
    """``[[eps - i(g1-g2)/2, g2], [-g1, eps + i(g1-g2)/2]]``; eigenvalues ``eps -+ i(g1+g2)/2``."""
    if g1 < 0 or g2 < 0:
        raise ValueError("rates must be nonnegative")
    d = 0.5j * (g1 - g2)
    return np.array([[eps - d, g2], [-g1, eps + d]], dtype=complex)


def single_mode_parameters(l) -> tuple[float, float, float, float]:
    """Read ``(eps, alpha, mu1, mu2)`` off ``[[eps + i alpha, mu2], [-mu1, eps - i alpha]]``."""
    l = np.asarray(l)
    eps = 0.5 * (l[0, 0] + l[1, 1]).real
    alpha = 0.5 * (l[0, 0] - l[1, 1]).imag
    return float(eps), float(alpha), float(-l[1, 0].real), float(l[0, 1].real)


class NoClosedForm(ValueError):
    """The requested closed-form flow does not exist for these parameters."""


def single_mode_analytic_flow(kind, eps: float, g1: float, g2: float, ell):
    """Closed-form ``(alpha, mu1, mu2)`` along the single-mode flow.

    Available for ``WHITE`` whenever ``g1 != g2`` and for the other two
    generators when ``g2 == 0``. ``ell`` may be an array.

    WHITE keeps ``mu_i(0) e^{-l}`` and fixes ``alpha`` through the invariant
    ``alpha^2 + mu1 mu2 = (g1 + g2)^2 / 4``; its sign is that of ``alpha(0)``.
    With ``g2 = 0`` the reduced equations are ``mu1' = -g1^2 mu1``
    (DIAG_ADJOINT) and ``mu1' = -(g1^2 + 2 mu1^2) mu1`` (WEGNER), solved by
    ``g1 e^{-g1^2 l}`` and ``g1 / sqrt(3 e^{2 g1^2 l} - 2)``.
    """
    kind = GeneratorKind.parse(kind)
    ell = np.asarray(ell, dtype=float)
    alpha0 = -(g1 - g2) / 2
    if kind is GeneratorKind.WHITE:
        if g1 == g2:
            raise NoClosedForm("white generator is undefined for g1 == g2 (degenerate diagonal)")
        decay = np.exp(-ell)
        alpha = math.copysign(1.0, alpha0) * np.sqrt((g1 + g2) ** 2 / 4 - g1 * g2 * decay ** 2)
        return alpha, g1 * decay, g2 * decay
    if g2 != 0:
        raise NoClosedForm(f"no closed form for {kind.value} with g2 != 0")
    zero = np.zeros_like(ell)
    if kind is GeneratorKind.DIAG_ADJOINT:
        return alpha0 + zero, g1 * np.exp(-g1 ** 2 * ell), zero
    return alpha0 + zero, g1 / np.sqrt(3 * np.exp(2 * g1 ** 2 * ell) - 2), zero


def single_mode_rhs(kind, alpha: float, mu1: float, mu2: float) -> tuple[float, float, float]:
    """Dedicated right-hand side ``(alpha', mu1', mu2')`` of the single-mode flow."""
    kind = GeneratorKind.parse(kind)
    if kind is GeneratorKind.WEGNER:
        return (4 * mu1 * mu2 * alpha,
                -2 * mu1 * (2 * alpha ** 2 + mu1 ** 2 - mu2 ** 2),
                -2 * mu2 * (2 * alpha ** 2 - mu1 ** 2 + mu2 ** 2))
    if kind is GeneratorKind.DIAG_ADJOINT:
        return 4 * mu1 * mu2 * alpha, -4 * alpha ** 2 * mu1, -4 * alpha ** 2 * mu2
    return mu1 * mu2 / alpha, -mu1, -mu2


def single_mode_alpha_rhs(alpha: float, g1: float, g2: float) -> float:
    """Reduced first-generator equation ``alpha' = ((g1 + g2)^2 - 4 alpha^2) alpha``."""
    return ((g1 + g2) ** 2 - 4 * alpha ** 2) * alpha


STEADY_CONFIG = FlowConfig(generator=GeneratorKind.WHITE, step=1e-2, max_flow=60.0, adaptive=True,
                           error_threshold=1e-14, truncation_fraction=0.0, stop_when=1e-28)


def tilde_index(final_diag) -> int:
    """Index of the diagonal entry ``eps + i(g1 + g2)/2`` (positive imaginary part)."""
    d = np.diag(np.asarray(final_diag))
    return int(np.argmax(d.imag))


def single_mode_steady_density(g1: float, g2: float, eps: float = 0.0,
                               config: FlowConfig = STEADY_CONFIG) -> float:
    """Stationary occupation from the co-flowed charge matrix at the end of the flow.

    The charge ``c^dagger c`` starts as ``[[1, 0], [0, 0]]`` and follows the
    similarity flow. Once the Lindbladian is diagonal the stationary charge
    is the element on the mode whose eigenvalue has positive imaginary part.
    """
    if g1 < 0 or g2 < 0:
        raise ValueError("rates must be nonnegative")
    if g1 + g2 <= 0:
        raise ValueError("g1 + g2 must be positive for a unique steady state")
    n0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    res = run_flow(single_mode_matrix(eps, g1, g2), config, similarity=[n0])
    j = tilde_index(res.final)
    return float(res.similarity[0][j, j].real)


def single_mode_density_evolution(g1: float, g2: float, n0: float, t):
    """``n(t) = n_ss + (n0 - n_ss) exp(-(g1 + g2) t)`` with ``n_ss = g2 / (g1 + g2)``.

    Same curve as ``[g2 + a e^{-(g1+g2)t}(g1 - g2)] / (g1 + g2)`` with
    ``a = (n0 (g1 + g2) - g2) / (g1 - g2)``, written so ``g1 == g2`` is fine.
    """
    gt = g1 + g2
    nss = g2 / gt
    return nss + (n0 - nss) * np.exp(-gt * np.asarray(t, dtype=float))


def single_mode_density_from_flow(g1: float, g2: float, n0: float, t, eps: float = 0.0,
                                  config: FlowConfig = STEADY_CONFIG):
    """``n(t)`` rebuilt from the diagonalised flow instead of the closed form.

    The flowed charge matrix gives the stationary share ``n_jj`` on the
    tilde mode ``j``; the remainder ``n0 - n_jj`` relaxes with the exponent
    read off the flowed eigenvalue gap.
    """
    n_init = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    res = run_flow(single_mode_matrix(eps, g1, g2), config, similarity=[n_init])
    lam = np.diag(res.final)
    j = tilde_index(res.final)
    nss = res.similarity[0][j, j].real
    # exponents 0 on the stationary mode and -(g1 + g2) on the other
    rates = np.diag(-1j * (lam - lam[j]))
    amps = np.where(np.arange(2) == j, nss, n0 - nss)
    return np.exp(np.multiply.outer(np.asarray(t, dtype=float), np.diag(rates))).real @ amps
