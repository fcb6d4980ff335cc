"""Second-order dissipative Schrieffer-Wolff reduction.

For ``L = L0 + xi L1`` with ``L0`` diagonalisable and its spectrum split
into well-separated groups, a similarity ``exp(xi eta1 + ...)`` removes the
couplings between groups order by order. To second order the block on
group ``a`` is::

    L_eff^a = P_a L0 P_a + xi P_a L1 P_a + xi^2 / 2 P_a [eta1, L1] P_a

with ``<a,u_j| eta1 |b,v_i> = <a,u_j| L1 |b,v_i> / (lam_aj - lam_bi)`` between
groups and zero inside them. The eigenvalues of the blocks then agree with
the exact spectrum up to ``O(xi^3)``, which makes them an independent check
on flow results for weakly coupled matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .flowengine import FlowConfig, run_flow
from .generators import GeneratorKind
from .matcore import as_matrix, match_eigenvalues, random_complex_matrix, reference_spectrum

#: smallest admissible singular value of a group's left/right overlap matrix
OVERLAP_FLOOR = 1e-8


class PartitionError(ValueError):
    """The unperturbed matrix cannot be split into biorthonormal groups."""


@dataclass(frozen=True)
class SpectralPartition:
    """Eigenvalue groups with biorthonormal right (columns of ``right``) and left vectors.

    ``right[a]`` and ``left[a]`` are ``n x k_a``; ``left[a].conj().T @ right[a]``
    is the identity.
    """

    eigenvalues: np.ndarray
    groups: tuple
    right: tuple
    left: tuple

    @property
    def projectors(self) -> list[np.ndarray]:
        return [v @ u.conj().T for v, u in zip(self.right, self.left)]

    def group_eigenvalues(self, a: int) -> np.ndarray:
        return self.eigenvalues[list(self.groups[a])]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All vectors side by side in group order, with eigenvalues and group labels."""
        v = np.hstack(self.right)
        u = np.hstack(self.left)
        lam = np.concatenate([self.group_eigenvalues(a) for a in range(len(self.groups))])
        label = np.concatenate([np.full(len(g), a) for a, g in enumerate(self.groups)])
        return v, u, lam, label


def partition_spectrum(l0, gap_threshold: float) -> SpectralPartition:
    """Single-linkage grouping of the eigenvalues of ``l0``.

    Two eigenvalues share a group when a chain of eigenvalues, each within
    ``gap_threshold`` of the next, connects them. Left vectors are rescaled
    group by group so that ``<u_j|v_i> = delta_ij``.
    """
    l0 = as_matrix(l0, "l0")
    if not gap_threshold > 0:
        raise ValueError("gap_threshold must be positive")
    n = l0.shape[0]
    w, vl, vr = scipy.linalg.eig(l0, left=True, right=True)
    scale = max(1.0, float(np.max(np.abs(l0))))
    resid = np.max(np.abs(l0 @ vr - vr * w[None, :]))
    if not np.all(np.isfinite(vr)) or resid > 1e-8 * scale:
        raise PartitionError(f"eigendecomposition residual {resid:.3g} too large")
    adj = np.abs(w[:, None] - w[None, :]) <= gap_threshold
    ncomp, lab = connected_components(adj, directed=False)
    # order groups by their smallest member index for reproducibility
    order = sorted(range(ncomp), key=lambda c: int(np.flatnonzero(lab == c)[0]))
    groups, rights, lefts = [], [], []
    for c in order:
        idx = np.flatnonzero(lab == c)
        v = vr[:, idx]
        u = vl[:, idx]
        s = u.conj().T @ v
        smin = np.linalg.svd(s, compute_uv=False).min()
        if smin < OVERLAP_FLOOR * np.linalg.norm(u, 2) * np.linalg.norm(v, 2):
            raise PartitionError(f"group {idx.tolist()} is (near-)defective: overlap {smin:.3g}")
        u = u @ np.linalg.inv(s).conj().T
        groups.append(tuple(int(i) for i in idx))
        rights.append(v)
        lefts.append(u)
    if sum(len(g) for g in groups) != n:  # pragma: no cover - connected_components covers all nodes
        raise PartitionError("grouping lost eigenvalues")
    return SpectralPartition(w, tuple(groups), tuple(rights), tuple(lefts))


def _intergroup_gaps(part: SpectralPartition):
    _, _, lam, label = part.stacked()
    gaps = lam[:, None] - lam[None, :]
    inter = label[:, None] != label[None, :]
    return lam, label, gaps, inter


@dataclass
class SWResult:
    """First-order generator and the second-order blocks it produces.

    ``effective_blocks[a]`` is written in the biorthonormal basis of group
    ``a`` (its eigenvalues are the effective eigenvalues); map it to the
    computational basis with ``right[a] @ block @ left[a]^dagger``.
    """

    eta1: np.ndarray
    xi: float
    partition: SpectralPartition
    effective_blocks: list = field(default_factory=list)

    def effective_eigenvalues(self) -> np.ndarray:
        return np.concatenate([np.linalg.eigvals(b) for b in self.effective_blocks])


def _coupling(l1, part: SpectralPartition) -> np.ndarray:
    v, u, _, _ = part.stacked()
    return u.conj().T @ as_matrix(l1, "l1") @ v


def sw_first_order(l0, l1, part: SpectralPartition) -> SWResult:
    """``eta1`` in the computational basis, zero inside every group."""
    l1 = as_matrix(l1, "l1")
    if l1.shape != np.shape(l0):
        raise ValueError("l0 and l1 must have the same shape")
    v, u, lam, label = part.stacked()
    _, _, gaps, inter = _intergroup_gaps(part)
    if np.any(inter & (gaps == 0)):
        i, j = np.argwhere(inter & (gaps == 0))[0]
        raise ValueError(f"vanishing inter-group gap between eigenvalues {lam[i]} and {lam[j]}")
    a = u.conj().T @ l1 @ v
    e = np.zeros_like(a)
    e[inter] = a[inter] / gaps[inter]
    eta1 = v @ e @ u.conj().T
    return SWResult(eta1=eta1, xi=0.0, partition=part)


def sw_effective_block(l0, l1, part: SpectralPartition, xi: float, alpha: int) -> np.ndarray:
    """Second-order block of group ``alpha`` in its own biorthonormal basis.

    Elements::

        lam_i delta_ij + xi A_ij + xi^2/2 sum_{b != alpha, k} A_ik A_kj
                                   (1/(lam_i - lam_k) + 1/(lam_j - lam_k))

    with ``A = <u| L1 |v>``.
    """
    lam, label, gaps, inter = _intergroup_gaps(part)
    if np.any(inter & (gaps == 0)):
        raise ValueError("vanishing inter-group gap")
    a = _coupling(l1, part)
    ia = np.flatnonzero(label == alpha)
    ob = np.flatnonzero(label != alpha)
    la = lam[ia]
    block = np.diag(la).astype(complex) + xi * a[np.ix_(ia, ia)]
    if ob.size:
        inv = 1.0 / (la[:, None] - lam[ob][None, :])  # (k_a, n_other)
        left = a[np.ix_(ia, ob)]
        right = a[np.ix_(ob, ia)]
        second = (left * inv) @ right + left @ (right * inv.T)
        block = block + 0.5 * xi ** 2 * second
    return block


def sw_degenerate_second_order(l1, part: SpectralPartition, alpha: int) -> np.ndarray:
    """``sum_{b != alpha} P_a L1 P_b L1 P_a / (lam_a - lam_b)`` for an exactly degenerate group.

    Returned in the group basis; ``xi^2`` times it is the second-order term of
    :func:`sw_effective_block` when all eigenvalues of the group coincide.
    """
    lam, label, _, _ = _intergroup_gaps(part)
    ia = np.flatnonzero(label == alpha)
    la = lam[ia]
    if np.max(np.abs(la - la[0])) > 0:
        raise ValueError("group is not exactly degenerate")
    a = _coupling(l1, part)
    out = np.zeros((ia.size, ia.size), dtype=complex)
    for b in range(len(part.groups)):
        if b == alpha:
            continue
        ib = np.flatnonzero(label == b)
        out += (a[np.ix_(ia, ib)] / (la[0] - lam[ib])[None, :]) @ a[np.ix_(ib, ia)]
    return out


def sw_transform(l0, l1, part: SpectralPartition, xi: float) -> SWResult:
    """:func:`sw_first_order` plus all effective blocks at strength ``xi``."""
    res = sw_first_order(l0, l1, part)
    res.xi = float(xi)
    res.effective_blocks = [sw_effective_block(l0, l1, part, xi, a) for a in range(len(part.groups))]
    return res


def _discrepancies(a, b) -> np.ndarray:
    perm = match_eigenvalues(a, b)
    return np.abs(np.asarray(a) - np.asarray(b)[perm])


#: flow settings good to about 1e-13 on weakly coupled matrices
SW_FLOW_CONFIG = FlowConfig(generator=GeneratorKind.WHITE, step=1e-2, max_flow=60.0, adaptive=True,
                            error_threshold=1e-15, truncation_fraction=0.0, stop_when=1e-30)


@dataclass
class FlowSWComparison:
    xi: float
    sw_eigenvalues: np.ndarray
    flow_eigenvalues: np.ndarray
    exact_eigenvalues: np.ndarray
    flow_vs_sw: np.ndarray
    sw_vs_exact: np.ndarray

    @property
    def max_flow_vs_sw(self) -> float:
        return float(self.flow_vs_sw.max(initial=0.0))

    @property
    def max_sw_vs_exact(self) -> float:
        return float(self.sw_vs_exact.max(initial=0.0))


def compare_flow_vs_sw(l0, l1, xi: float, flow_config: FlowConfig = SW_FLOW_CONFIG,
                       gap_threshold: float | None = None) -> FlowSWComparison:
    """White flow on ``l0 + xi l1`` against the second-order effective spectrum.

    ``gap_threshold=None`` puts every eigenvalue of ``l0`` in its own group
    (a threshold below the smallest gap).
    """
    l0 = as_matrix(l0, "l0")
    l1 = as_matrix(l1, "l1")
    if gap_threshold is None:
        w = np.linalg.eigvals(l0)
        d = np.abs(w[:, None] - w[None, :])
        np.fill_diagonal(d, np.inf)
        gap_threshold = 0.5 * float(d.min()) if len(w) > 1 else 1.0
        if gap_threshold == 0:
            raise ValueError("l0 has degenerate eigenvalues; pass gap_threshold explicitly")
    part = partition_spectrum(l0, gap_threshold)
    sw = sw_transform(l0, l1, part, xi).effective_eigenvalues()
    full = l0 + xi * l1
    exact = reference_spectrum(full)
    flowed = run_flow(full, flow_config).eigenvalues
    return FlowSWComparison(float(xi), sw, flowed, exact, _discrepancies(flowed, sw),
                            _discrepancies(sw, exact))


def fit_power(xis, errors) -> float:
    """Least-squares exponent ``p`` of ``errors ~ C xi^p``."""
    return float(np.polyfit(np.log(xis), np.log(errors), 1)[0])


@dataclass
class SWScalingReport:
    xis: list
    max_sw_vs_exact: list
    mean_sw_vs_exact: list
    max_flow_vs_sw: list
    mean_flow_vs_sw: list

    @property
    def sw_exponent(self) -> float:
        return fit_power(self.xis, self.max_sw_vs_exact)

    @property
    def flow_exponent(self) -> float:
        return fit_power(self.xis, self.max_flow_vs_sw)

    def to_dict(self) -> dict:
        rows = [{"xi": x, "max_sw_vs_exact": a, "mean_sw_vs_exact": b,
                 "max_flow_vs_sw": c, "mean_flow_vs_sw": d}
                for x, a, b, c, d in zip(self.xis, self.max_sw_vs_exact, self.mean_sw_vs_exact,
                                         self.max_flow_vs_sw, self.mean_flow_vs_sw)]
        return {"per_xi": rows, "sw_exponent": self.sw_exponent, "flow_exponent": self.flow_exponent}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def sw_scaling(l0, l1, xis, flow_config: FlowConfig = SW_FLOW_CONFIG,
               gap_threshold: float | None = None) -> SWScalingReport:
    xis = [float(x) for x in xis]
    if any(not x > 0 or not math.isfinite(x) for x in xis):
        raise ValueError("xi values must be positive")
    cmp = [compare_flow_vs_sw(l0, l1, x, flow_config, gap_threshold) for x in xis]
    return SWScalingReport(
        xis=xis,
        max_sw_vs_exact=[c.max_sw_vs_exact for c in cmp],
        mean_sw_vs_exact=[float(c.sw_vs_exact.mean()) for c in cmp],
        max_flow_vs_sw=[c.max_flow_vs_sw for c in cmp],
        mean_flow_vs_sw=[float(c.flow_vs_sw.mean()) for c in cmp],
    )


def random_sw_instance(dim: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal ``L0`` and dense ``L1``, both with entries uniform on ``[-1, 1] + i[-1, 1]``."""
    s0, s1 = np.random.SeedSequence(seed).spawn(2)
    l0 = np.diag(np.diag(random_complex_matrix(dim, s0)))
    return l0, random_complex_matrix(dim, s1)
