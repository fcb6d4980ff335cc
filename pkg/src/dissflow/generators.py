"""The three flow generators ``eta(L)``.

``WEGNER``        eta = [L^dagger, V]
``DIAG_ADJOINT``  eta = [D^dagger, V]
``WHITE``         eta_nk = V_nk / (D_nn - D_kk), zero on (near-)degenerate pairs

``D`` and ``V`` are the diagonal and off-diagonal parts of ``L`` in the
computational basis.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .matcore import as_matrix, offdiag


class GeneratorKind(str, Enum):
    WEGNER = "wegner"
    DIAG_ADJOINT = "diag-adjoint"
    WHITE = "white"

    @classmethod
    def parse(cls, value) -> "GeneratorKind":
        if isinstance(value, cls):
            return value
        aliases = {"1": cls.WEGNER, "2": cls.DIAG_ADJOINT, "3": cls.WHITE,
                   "diag_adjoint": cls.DIAG_ADJOINT, "whitelike": cls.WHITE}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


#: relative degeneracy threshold for WHITE, multiplied by the largest diagonal gap
WHITE_RELATIVE_TOL = 1e-10


def generator_wegner(l) -> np.ndarray:
    l = np.asarray(l)
    v = offdiag(l)
    ld = l.conj().T
    return ld @ v - v @ ld


def generator_diag_adjoint(l) -> np.ndarray:
    """``eta_nk = (d*_nn - d*_kk) V_nk``, i.e. ``[D^dagger, V]``."""
    l = np.asarray(l)
    d = np.diag(l).conj()
    eta = (d[:, None] - d[None, :]) * l
    np.fill_diagonal(eta, 0.0)
    return eta


def white_gaps(l) -> tuple[np.ndarray, np.ndarray]:
    d = np.diag(np.asarray(l))
    gaps = d[:, None] - d[None, :]
    return gaps, np.abs(gaps)


def default_white_tol(l) -> float:
    _, absgap = white_gaps(l)
    return WHITE_RELATIVE_TOL * float(absgap.max(initial=0.0))


def generator_white(l, tol: float | None = None) -> np.ndarray:
    """``eta_nk = V_nk / (D_nn - D_kk)`` where ``|D_nn - D_kk| > tol``, else 0.

    ``tol=None`` uses ``WHITE_RELATIVE_TOL`` times the largest diagonal gap.
    Gaps just above ``tol`` give a very large ``eta``; the flow is then stiff
    and adaptive stepping is the practical remedy.
    """
    l = np.asarray(l)
    gaps, absgap = white_gaps(l)
    if tol is None:
        tol = WHITE_RELATIVE_TOL * float(absgap.max(initial=0.0))
    if tol < 0:
        raise ValueError("degeneracy tolerance must be >= 0")
    mask = absgap > tol
    np.fill_diagonal(mask, False)
    eta = np.zeros_like(l, dtype=complex)
    eta[mask] = l[mask] / gaps[mask]
    return eta


def compute_generator(l, kind, tol: float | None = None) -> np.ndarray:
    kind = GeneratorKind.parse(kind)
    if kind is GeneratorKind.WEGNER:
        return generator_wegner(l)
    if kind is GeneratorKind.DIAG_ADJOINT:
        return generator_diag_adjoint(l)
    return generator_white(l, tol)


def check_sw_relation(l, tol: float = 0.0) -> float:
    """Spectral norm of ``[eta_white, D] + V``; zero when every gap exceeds ``tol``."""
    l = as_matrix(l)
    _, absgap = white_gaps(l)
    off = ~np.eye(l.shape[0], dtype=bool)
    if l.shape[0] > 1 and absgap[off].min() <= tol:
        raise ValueError("degenerate diagonal: some gap does not exceed tol")
    eta = generator_white(l, tol)
    d = np.diag(np.diag(l))
    r = eta @ d - d @ eta + offdiag(l)
    return float(np.linalg.norm(r, 2))
