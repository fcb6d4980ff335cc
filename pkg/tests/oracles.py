"""Deliberately naive reference computations.

Nothing here imports the package: these are loop-level transcriptions used
to cross-check the vectorised implementations.
"""

from __future__ import annotations

import cmath
import itertools
import math

import numpy as np


def naive_matmul(a, b):
    n = len(a)
    out = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            s = 0j
            for k in range(n):
                s += a[i][k] * b[k][j]
            out[i, j] = s
    return out


def naive_commutator(a, b):
    return naive_matmul(a, b) - naive_matmul(b, a)


def charpoly_coefficients(m):
    """Faddeev-LeVerrier: monic coefficients ``[1, c1, ..., cn]`` of det(x - m)."""
    m = np.asarray(m, dtype=complex)
    n = m.shape[0]
    coeffs = [1.0 + 0j]
    mk = np.zeros_like(m)
    eye = np.eye(n)
    for k in range(1, n + 1):
        mk = naive_matmul(m, mk + coeffs[-1] * eye)
        coeffs.append(-np.trace(mk) / k)
    return coeffs


def polynomial_roots(coeffs, iters: int = 2000):
    """Durand-Kerner iteration for a monic polynomial."""
    n = len(coeffs) - 1

    def p(x):
        s = 0j
        for c in coeffs:
            s = s * x + c
        return s

    radius = 1 + max(abs(c) for c in coeffs[1:])
    z = [radius * cmath.exp(2j * math.pi * (k + 0.25) / n) for k in range(n)]
    for _ in range(iters):
        new = []
        for i in range(n):
            den = 1 + 0j
            for j in range(n):
                if j != i:
                    den *= z[i] - z[j]
            new.append(z[i] - p(z[i]) / den)
        shift = max(abs(a - b) for a, b in zip(new, z))
        z = new
        if shift < 1e-15 * radius:
            break
    return np.array(z)


def charpoly_eigenvalues(m):
    return polynomial_roots(charpoly_coefficients(m))


def exhaustive_discrepancy(a, b) -> float:
    """Minimum root-sum-square distance over every permutation (small inputs only)."""
    a = list(a)
    b = list(b)
    best = math.inf
    for perm in itertools.permutations(range(len(b))):
        s = sum(abs(a[i] - b[p]) ** 2 for i, p in enumerate(perm))
        best = min(best, s)
    return math.sqrt(best)


def wegner_eta_loops(l):
    n = len(l)
    ld = [[l[k][i].conjugate() for k in range(n)] for i in range(n)]
    v = [[l[i][k] if i != k else 0j for k in range(n)] for i in range(n)]
    return naive_commutator(ld, v)


def rk4_flow(l0, eta_fn, h: float, ell: float):
    """Classic fixed-step RK4 for ``dL/dl = [eta(L), L]``."""
    y = np.array(l0, dtype=complex)

    def f(m):
        eta = eta_fn(m)
        return eta @ m - m @ eta

    for _ in range(int(round(ell / h))):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def gen2_rhs_loops(g):
    """Coefficient-form diagonal-adjoint flow, one term at a time."""
    n = g.shape[0]
    out = np.zeros_like(g, dtype=complex)
    for k in range(n):
        s = 0j
        for q in range(n):
            if q != k:
                s += (g[k, k].conjugate() - g[q, q].conjugate()) * g[k, q] * g[q, k]
        out[k, k] = -2 * s
    for k in range(n):
        for q in range(n):
            if k == q:
                continue
            s = 0j
            for t in range(n):
                if t != k and t != q:
                    s += g[k, t] * g[t, q] * (g[q, q].conjugate() + g[k, k].conjugate()
                                              - 2 * g[t, t].conjugate())
            out[k, q] = -abs(g[k, k] - g[q, q]) ** 2 * g[k, q] + 1j * s
    return out


def gen3_rhs_loops(g):
    """Coefficient-form White flow, all gaps assumed non-degenerate."""
    n = g.shape[0]
    out = np.zeros_like(g, dtype=complex)
    for k in range(n):
        s = 0j
        for t in range(n):
            if t != k:
                s += g[t, k] * g[k, t] / (g[k, k] - g[t, t])
        out[k, k] = -2 * s
    for k in range(n):
        for q in range(n):
            if k == q:
                continue
            s = 0j
            for t in range(n):
                if t != k and t != q:
                    s += (g[k, t] * g[t, q] * (2 * g[t, t] - g[q, q] - g[k, k])
                          / ((g[t, t] - g[q, q]) * (g[k, k] - g[t, t])))
            out[k, q] = -g[k, q] + 1j * s
    return out


def open_chain_spectrum(n: int, hopping: float):
    return np.array([-2 * hopping * math.cos(math.pi * m / (n + 1)) for m in range(1, n + 1)])
