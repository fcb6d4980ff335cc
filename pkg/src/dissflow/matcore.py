"""Dense complex linear algebra shared by the flow machinery.

Everything here is a pure function on ``numpy`` arrays. Matrices are plain
``(n, n)`` complex arrays; the helpers validate shape and finiteness at the
module boundary and otherwise stay out of the way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


class EigensolverError(RuntimeError):
    """Raised when the reference eigensolver fails to converge."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite, square complex array (a copy is not forced)."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return a


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def commutator(a, b) -> np.ndarray:
    """Return ``a @ b - b @ a``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    _check_same_dim(a, b)
    return a @ b - b @ a


def split_diag_offdiag(m) -> tuple[np.ndarray, np.ndarray]:
    """Split ``m`` into its diagonal part and its zero-diagonal remainder."""
    m = as_matrix(m)
    d = np.diag(np.diag(m))
    return d, m - d


def offdiag(m: np.ndarray) -> np.ndarray:
    v = np.array(m, dtype=complex, copy=True)
    np.fill_diagonal(v, 0.0)
    return v


def frobenius_norm_sq(m) -> float:
    """``tr[m^dagger m]``, the squared Frobenius norm."""
    m = np.asarray(m)
    return float(np.vdot(m, m).real)


def offdiag_norm_sq(m) -> float:
    """``||V||^2`` summed over off-diagonal entries only (never negative)."""
    return frobenius_norm_sq(offdiag(np.asarray(m)))


@dataclass(frozen=True)
class SpectralInvariants:
    """Traces of matrix powers ``I_n = tr[m^n]`` for ``n = 1..nmax``."""

    values: np.ndarray

    @property
    def nmax(self) -> int:
        return len(self.values)

    def __getitem__(self, n: int) -> complex:
        # 1-based, matching the usual I_1, I_2, ... labelling
        if not 1 <= n <= self.nmax:
            raise IndexError(f"invariant index {n} outside 1..{self.nmax}")
        return complex(self.values[n - 1])

    def relative_drift(self, reference: "SpectralInvariants") -> np.ndarray:
        """``|I_n - I_n^ref| / |I_n^ref|`` (absolute where the reference vanishes)."""
        ref = np.asarray(reference.values)
        diff = np.abs(np.asarray(self.values) - ref)
        scale = np.abs(ref)
        return np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)


def trace_power_invariants(m, nmax: int) -> SpectralInvariants:
    """Compute ``tr[m^n]`` for ``n = 1..nmax`` by repeated multiplication."""
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    m = as_matrix(m)
    out = np.empty(nmax, dtype=complex)
    p = m.copy()
    out[0] = np.trace(p)
    for k in range(1, nmax):
        p = p @ m
        out[k] = np.trace(p)
    return SpectralInvariants(out)


def i2_diagonal(m) -> complex:
    """``sum_n m_nn^2``, the diagonal share of ``tr[m^2]``."""
    d = np.diag(np.asarray(m))
    return complex(np.sum(d * d))


def i2_offdiagonal(m) -> complex:
    """``sum_{n != k} m_nk m_kn``, the off-diagonal share of ``tr[m^2]``.

    Evaluated directly from the off-diagonal entries (not as a difference of
    traces) so that it is exactly zero for triangular matrices.
    """
    v = offdiag(np.asarray(m))
    return complex(np.sum(v * v.T))


def random_complex_matrix(dim: int, seed) -> np.ndarray:
    """Matrix with real and imaginary parts i.i.d. uniform on [-1, 1].

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`,
    including a :class:`numpy.random.SeedSequence` spawned for ensembles.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    re = rng.uniform(-1.0, 1.0, size=(dim, dim))
    im = rng.uniform(-1.0, 1.0, size=(dim, dim))
    return re + 1j * im


def random_preconditioner(dim: int, seed, strength: float = 0.1,
                          max_condition: float = 1e3) -> np.ndarray:
    """Random invertible ``R0 = I + strength * G`` with ``||strength * G||_2 < 1``.

    ``G`` is a :func:`random_complex_matrix` draw divided by its spectral
    norm, so ``R0`` is invertible by construction (Neumann series). The
    condition number is checked anyway and the draw repeated on failure.
    """
    if not 0.0 < strength < 1.0:
        raise ValueError("strength must lie in (0, 1)")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for attempt in range(64):
        # explicit spawn keys: repeated calls with one SeedSequence stay identical
        child = np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, attempt))
        g = random_complex_matrix(dim, child)
        g /= np.linalg.norm(g, 2)
        r0 = np.eye(dim) + strength * g
        if np.linalg.cond(r0) < max_condition:
            return r0
    raise RuntimeError("could not draw a well-conditioned preconditioner")  # pragma: no cover


def reference_spectrum(m) -> np.ndarray:
    """All eigenvalues of a general complex matrix via LAPACK ``zgeev``.

    ``zgeev`` reduces to Hessenberg form and runs shifted QR; it shares no
    code with the flow integrator, which is why the tests use it as the
    oracle for flowed diagonals.
    """
    m = as_matrix(m)
    try:
        w = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"QR iteration did not converge: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise EigensolverError("eigensolver returned non-finite eigenvalues")
    return w


def match_eigenvalues(a, b) -> np.ndarray:
    """Permutation ``p`` minimising ``sum_i |a_i - b_{p[i]}|^2``."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("cannot match non-finite eigenvalues")
    # rescale so squaring cannot overflow; the optimal permutation is unchanged
    d = np.abs(a[:, None] - b[None, :])
    top = d.max() if d.size else 0.0
    cost = (d / top) ** 2 if top > 0 else d
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.size, dtype=int)
    perm[rows] = cols
    return perm


def spectral_discrepancy(flow_eigs, exact_eigs) -> float:
    """Root-sum-square eigenvalue distance under the optimal one-to-one matching."""
    a = np.asarray(flow_eigs, dtype=complex).ravel()
    b = np.asarray(exact_eigs, dtype=complex).ravel()
    perm = match_eigenvalues(a, b)
    return float(np.sqrt(np.sum(np.abs(a - b[perm]) ** 2)))
