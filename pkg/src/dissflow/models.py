"""Two many-mode quadratic models and their specialised flow equations.

*Scattering model.* ``2 j_cutoff + 1`` momentum modes ``eps_j = v (2 pi / L) j``
of a linear dispersion, all coupled by a point-like loss of strength
``gamma``. The reduced matrix is the level diagonal with ``-i gamma / (2L)``
added to every entry. Above ``gamma = 4 v`` a single eigenvalue detaches
with a decay rate growing with the cutoff.

*Disordered chain.* Open tight-binding chain, hopping ``J``, on-site
energies uniform on ``[-W, W]`` and loss ``gamma`` on the centre site
``floor(L / 2)``.

Both are written in the coefficient form ``g`` used by the specialised
flow equations: matrix entry ``(k, q)`` is ``i g_kq`` off the diagonal and
``g_kk`` on it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect

from .flowengine import FlowConfig, FlowResult, run_flow, run_flow_with_fallback
from .generators import WHITE_RELATIVE_TOL, GeneratorKind
from .matcore import as_matrix, match_eigenvalues, reference_spectrum, spectral_discrepancy


# ------------------------------------------------------------ coefficient form


@dataclass(frozen=True)
class QuadraticCoefficients:
    """Couplings ``g_kq`` of ``sum_k g_kk c_k^+ c_k + i sum_{k != q} g_kq c_k^+ c_q``."""

    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", as_matrix(self.g, "g"))

    @classmethod
    def from_matrix(cls, m) -> "QuadraticCoefficients":
        m = as_matrix(m)
        g = -1j * m
        np.fill_diagonal(g, np.diag(m))
        return cls(g)

    def to_matrix(self) -> np.ndarray:
        m = 1j * self.g
        np.fill_diagonal(m, np.diag(self.g))
        return m

    @property
    def dim(self) -> int:
        return self.g.shape[0]


def _split(g):
    g = np.asarray(g, dtype=complex)
    d = np.diag(g).copy()
    off = g.copy()
    np.fill_diagonal(off, 0.0)
    return d, off


def flow_rhs_quadratic_gen2(g: QuadraticCoefficients) -> QuadraticCoefficients:
    """Coefficient derivative under the diagonal-adjoint generator.

    ``dg_kk = -2 sum_s (g*_kk - g*_ss) g_ks g_sk`` and, for ``k != q``,
    ``dg_kq = -|g_kk - g_qq|^2 g_kq + i sum_{s != k,q} g_ks g_sq (g*_kk + g*_qq - 2 g*_ss)``.
    """
    d, off = _split(g.g)
    dc = d.conj()
    gap = d[:, None] - d[None, :]
    # off has a zero diagonal, so the products below skip s == k and s == q
    oo = off @ off
    o_d_o = off @ (dc[:, None] * off)
    dg = -np.abs(gap) ** 2 * off + 1j * ((dc[:, None] + dc[None, :]) * oo - 2 * o_d_o)
    pair = off * off.T
    np.fill_diagonal(dg, -2 * np.sum((dc[:, None] - dc[None, :]) * pair, axis=1))
    return QuadraticCoefficients(dg)


@dataclass
class DegeneracyCounter:
    """Number of coupled pairs whose gap fell below the tolerance, over all calls."""

    calls: int = 0
    zeroed_pairs: int = 0


def flow_rhs_quadratic_gen3(g: QuadraticCoefficients, tol: float | None = None,
                            counter: DegeneracyCounter | None = None) -> QuadraticCoefficients:
    """Coefficient derivative under the White generator.

    ``dg_kk = -2 sum_s g_sk g_ks / (g_kk - g_ss)`` and
    ``dg_kq = -g_kq + i sum_s g_ks g_sq (2 g_ss - g_qq - g_kk) / ((g_ss - g_qq)(g_kk - g_ss))``.

    With ``W_ks = 1 / (g_kk - g_ss)`` the double sum is the commutator
    ``(g o W) g - g (g o W)``, which is how it is evaluated. Pairs with
    ``|g_kk - g_ss| <= tol`` get ``W_ks = 0`` and keep their ``g_kq``
    (no generator acts on them); ``tol=None`` uses the same relative rule as
    the generic White generator.
    """
    d, off = _split(g.g)
    gap = d[:, None] - d[None, :]
    absgap = np.abs(gap)
    if tol is None:
        tol = WHITE_RELATIVE_TOL * float(absgap.max(initial=0.0))
    mask = absgap > tol
    np.fill_diagonal(mask, False)
    w = np.zeros_like(gap)
    w[mask] = 1.0 / gap[mask]
    if counter is not None:
        counter.calls += 1
        offmask = ~np.eye(len(d), dtype=bool)
        counter.zeroed_pairs += int(np.count_nonzero(offmask & ~mask & (off != 0)))
    gw = off * w
    c = gw @ off - off @ gw
    dg = 1j * c - np.where(mask, off, 0.0)
    np.fill_diagonal(dg, -np.diag(c))
    return QuadraticCoefficients(dg)


# the real-space chain equations have the same structure with site labels
flow_rhs_real_space_gen2 = flow_rhs_quadratic_gen2
flow_rhs_real_space_gen3 = flow_rhs_quadratic_gen3


def coefficient_derivative(kind, tol: float | None = None, counter: DegeneracyCounter | None = None):
    """Matrix-form derivative ``L -> dL/dl`` routed through the coefficient equations."""
    kind = GeneratorKind.parse(kind)
    if kind is GeneratorKind.WEGNER:
        raise ValueError("no specialised coefficient equations for the wegner generator")

    def derivative(m):
        g = QuadraticCoefficients.from_matrix(m)
        if kind is GeneratorKind.DIAG_ADJOINT:
            dg = flow_rhs_quadratic_gen2(g)
        else:
            dg = flow_rhs_quadratic_gen3(g, tol, counter)
        return dg.to_matrix()

    return derivative


def run_coefficient_flow(initial: QuadraticCoefficients, config: FlowConfig,
                         tol: float | None = None,
                         fallback: bool = True) -> tuple[FlowResult, DegeneracyCounter]:
    """Integrate the specialised equations; the trace is that of the matrix form.

    With ``fallback`` a breakdown is retried once from a preconditioned start
    (see :func:`run_flow_with_fallback`).
    """
    counter = DegeneracyCounter()
    runner = run_flow_with_fallback if fallback else run_flow
    res = runner(initial.to_matrix(), config,
                 derivative=coefficient_derivative(config.generator, tol, counter))
    return res, counter


# ---------------------------------------------------------------- scattering


@dataclass(frozen=True)
class ScatteringSpec:
    v: float = 1.0
    gamma: float = 5.0
    box_size: float = 2 * math.pi
    j_cutoff: int = 15

    def __post_init__(self):
        if not (self.v > 0 and self.box_size > 0):
            raise ValueError("v and box_size must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if int(self.j_cutoff) != self.j_cutoff or self.j_cutoff < 1:
            raise ValueError("j_cutoff must be a positive integer")

    @property
    def dim(self) -> int:
        return 2 * self.j_cutoff + 1

    @property
    def eps0(self) -> float:
        """Level spacing ``2 pi v / L``."""
        return 2 * math.pi * self.v / self.box_size

    @property
    def cutoff(self) -> float:
        return self.eps0 * self.j_cutoff


def build_scattering_matrix(spec: ScatteringSpec) -> np.ndarray:
    j = np.arange(-spec.j_cutoff, spec.j_cutoff + 1)
    m = np.full((spec.dim, spec.dim), -0.5j * spec.gamma / spec.box_size, dtype=complex)
    m[np.diag_indices(spec.dim)] += spec.eps0 * j
    return m


def scattering_coefficients(spec: ScatteringSpec) -> QuadraticCoefficients:
    """``g_kk = eps_k - i gamma / 2L`` and ``g_kq = -gamma / 2L``."""
    return QuadraticCoefficients.from_matrix(build_scattering_matrix(spec))


class DomainError(ValueError):
    """Closed-form estimate requested outside its regime."""


def strongly_dissipative_eigenvalue(spec: ScatteringSpec) -> complex:
    """``i Lambda tan(pi/2 (4v/gamma - 1))`` with ``Lambda = eps0 j_cutoff``; needs ``gamma > 4v``."""
    if not spec.gamma > 4 * spec.v:
        raise DomainError("strong-loss formula needs gamma > 4 v; use weak_coupling_eigenvalue")
    return 1j * spec.cutoff * math.tan(0.5 * math.pi * (4 * spec.v / spec.gamma - 1))


def weak_coupling_eigenvalue(spec: ScatteringSpec) -> complex:
    """``-i (v/L) log[(4v/gamma + 1) / (4v/gamma - 1)]``; needs ``gamma < 4v``.

    Tends to ``-i gamma / (2L)`` for ``gamma << v`` and diverges as
    ``gamma -> 4v``.
    """
    if not 0 < spec.gamma < 4 * spec.v:
        raise DomainError("weak-loss formula needs 0 < gamma < 4 v")
    r = 4 * spec.v / spec.gamma
    return -1j * (spec.v / spec.box_size) * math.log((r + 1) / (r - 1))


def secular_function(x: float, spec: ScatteringSpec) -> float:
    """``coth x + 4v/gamma - (2/pi) arctan(x / (pi j_cutoff))``; decreasing on ``x < 0``."""
    return (1.0 / math.tanh(x) + 4 * spec.v / spec.gamma
            - (2 / math.pi) * math.atan(x / (math.pi * spec.j_cutoff)))


@dataclass(frozen=True)
class SecularRoot:
    x: float
    residual: float
    bracket: tuple[float, float]

    def eigenvalue(self, spec: ScatteringSpec) -> complex:
        return 1j * self.x * spec.eps0 / math.pi


def solve_secular(spec: ScatteringSpec, tol: float = 1e-12) -> SecularRoot:
    """Negative root of :func:`secular_function` by bisection.

    The bracket starts from twice the strong-loss and half the weak-loss
    estimate (whichever exist) and is widened geometrically until ``f``
    changes sign.
    """
    if not spec.gamma > 0:
        raise ValueError("gamma must be positive")
    f = lambda x: secular_function(x, spec)  # noqa: E731
    to_x = math.pi / spec.eps0
    try:
        lo = 2 * strongly_dissipative_eigenvalue(spec).imag * to_x
    except DomainError:
        lo = -1.0
    try:
        hi = 0.5 * weak_coupling_eigenvalue(spec).imag * to_x
    except DomainError:
        hi = -1e-3
    lo, hi = min(lo, hi, -1e-300), min(max(lo, hi), -1e-300)
    for _ in range(2000):
        if f(lo) > 0:
            break
        lo *= 2
    for _ in range(2000):
        if f(hi) < 0:
            break
        hi *= 0.5
    flo, fhi = f(lo), f(hi)
    if not (flo > 0 > fhi):
        raise RuntimeError(f"could not bracket the secular root: f({lo:.6g}) = {flo:.3g}, "
                           f"f({hi:.6g}) = {fhi:.3g}")
    x = bisect(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=4000)
    res = f(x)
    # at machine resolution of x the residual is limited by the slope of f
    csch2 = 1 / math.sinh(x) ** 2 if abs(x) < 300 else 0.0
    slope = csch2 + 2 / (math.pi ** 2 * spec.j_cutoff)
    if abs(res) > max(tol, 8 * np.finfo(float).eps * abs(x) * slope):
        raise RuntimeError(f"secular root residual {res:.3g} above tolerance")
    return SecularRoot(float(x), float(res), (float(lo), float(hi)))


def strongly_dissipative_branch(eigs) -> complex:
    """The eigenvalue with the largest decay rate."""
    eigs = np.asarray(eigs)
    return complex(eigs[np.argmin(eigs.imag)])


def zero_real_part_branch(eigs) -> complex:
    """The eigenvalue closest to the imaginary axis."""
    eigs = np.asarray(eigs)
    return complex(eigs[np.argmin(np.abs(eigs.real))])


# ----------------------------------------------------------- disordered chain


@dataclass(frozen=True)
class DisorderSpec:
    n_sites: int = 10
    hopping: float = 1.0
    disorder_width: float = 1.0
    gamma: float = 1.0
    seed: int = 0
    n_realizations: int = 1

    def __post_init__(self):
        if self.n_sites < 1 or self.n_realizations < 1:
            raise ValueError("n_sites and n_realizations must be >= 1")
        if not self.hopping > 0:
            raise ValueError("hopping must be positive")
        if self.disorder_width < 0 or self.gamma < 0:
            raise ValueError("disorder_width and gamma must be nonnegative")

    @property
    def center(self) -> int:
        return self.n_sites // 2


def onsite_energies(spec: DisorderSpec, realization: int) -> np.ndarray:
    """Uniform draws on ``[-W, W]``, keyed by ``(seed, n_sites, realization)``."""
    if not 0 <= realization < spec.n_realizations:
        raise ValueError(f"realization {realization} outside 0..{spec.n_realizations - 1}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.n_sites, realization]))
    return rng.uniform(-spec.disorder_width, spec.disorder_width, size=spec.n_sites)


def build_disordered_matrix(spec: DisorderSpec, realization: int = 0) -> np.ndarray:
    n = spec.n_sites
    m = np.diag(onsite_energies(spec, realization)).astype(complex)
    hop = -spec.hopping * np.ones(n - 1)
    m += np.diag(hop, 1) + np.diag(hop, -1)
    m[spec.center, spec.center] -= 0.5j * spec.gamma
    return m


def disordered_coefficients(spec: DisorderSpec, realization: int = 0) -> QuadraticCoefficients:
    """``g_jj = h_j - i gamma/2 delta_{j,centre}``, ``g_{j,j+-1} = i J``."""
    return QuadraticCoefficients.from_matrix(build_disordered_matrix(spec, realization))


def asymptotic_decay_rate(m, tol: float = 1e-10, paired: bool = False) -> float:
    """Smallest decay rate ``min(-Im lambda)``.

    Eigenvalues with ``Im lambda > tol * max(1, |m|_max)`` indicate a growing
    mode and are rejected. ``paired=True`` accepts a full superfermion
    matrix, whose spectrum is closed under conjugation: only the lower
    half-plane member of each pair is kept.
    """
    eigs = reference_spectrum(m)
    scale = max(1.0, float(np.max(np.abs(np.asarray(m)))))
    if paired:
        if spectral_discrepancy(eigs, eigs.conj()) > 1e-8 * scale * eigs.size:
            raise ValueError("spectrum is not closed under complex conjugation")
        eigs = 1j * np.sort(eigs.imag)[: (eigs.size + 1) // 2]
    if np.max(eigs.imag) > tol * scale:
        raise ValueError(f"spectrum has a growing mode (Im lambda = {np.max(eigs.imag):.3g})")
    return float(max(0.0, np.min(-eigs.imag)))


def has_strongly_dissipative(eigs, factor: float = 5.0) -> bool:
    """True when the largest ``|Im lambda|`` exceeds ``factor`` times the median."""
    a = np.abs(np.asarray(eigs).imag)
    return bool(a.max() > factor * np.median(a))


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    rss: float


def fit_line(x, y) -> LineFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return LineFit(float("nan"), float(y[0]) if y.size else float("nan"), float("nan"), 0.0)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return LineFit(float(slope), float(intercept), float(r2), rss)


@dataclass
class SizeStats:
    size: int
    mean_rate: float
    stderr: float
    mean_log_rate: float
    rates: list = field(default_factory=list, repr=False)


@dataclass
class ScalingReport:
    """Ensemble-averaged ``Gamma_adr`` per size with two competing fits.

    ``exponential`` regresses ``log mean(Gamma)`` on ``L``, ``algebraic``
    on ``log L``; ``preferred`` names the one with the smaller residual.
    """

    spec: DisorderSpec
    sizes: list
    stats: list
    exponential: LineFit
    algebraic: LineFit
    exponential_log_mean: LineFit

    @property
    def preferred(self) -> str:
        return "exponential" if self.exponential.rss < self.algebraic.rss else "algebraic"

    @property
    def slope(self) -> float:
        return self.exponential.slope

    def to_csv(self, path=None) -> str:
        """Columns: size, mean_rate, stderr, mean_log_rate, fit_slope, fit_intercept, fit_r2."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "mean_rate", "stderr", "mean_log_rate", "fit_slope", "fit_intercept", "fit_r2"])
        e = self.exponential
        for s in self.stats:
            w.writerow([s.size] + [format(x, ".17g") for x in
                                   (s.mean_rate, s.stderr, s.mean_log_rate, e.slope, e.intercept, e.r2)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "sizes": list(self.sizes),
            "per_size": [{"size": s.size, "mean_rate": s.mean_rate, "stderr": s.stderr,
                          "mean_log_rate": s.mean_log_rate} for s in self.stats],
            "exponential_fit": asdict(self.exponential),
            "algebraic_fit": asdict(self.algebraic),
            "exponential_fit_of_mean_log": asdict(self.exponential_log_mean),
            "preferred": self.preferred,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def disorder_scan(spec: DisorderSpec, sizes) -> ScalingReport:
    """``Gamma_adr`` statistics over ``spec.n_realizations`` chains per size.

    Realizations are reduced in index order, so the report does not depend
    on how they were scheduled.
    """
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("sizes must be non-empty")
    stats = []
    for n in sizes:
        sub = DisorderSpec(n, spec.hopping, spec.disorder_width, spec.gamma, spec.seed, spec.n_realizations)
        rates = np.array([asymptotic_decay_rate(build_disordered_matrix(sub, r))
                          for r in range(sub.n_realizations)])
        stderr = float(rates.std(ddof=1) / math.sqrt(rates.size)) if rates.size > 1 else 0.0
        with np.errstate(divide="ignore"):
            mlog = float(np.mean(np.log(rates)))
        stats.append(SizeStats(n, float(rates.mean()), stderr, mlog, rates.tolist()))
    logs = np.log([s.mean_rate for s in stats])
    return ScalingReport(
        spec=spec,
        sizes=sizes,
        stats=stats,
        exponential=fit_line(sizes, logs),
        algebraic=fit_line(np.log(sizes), logs),
        exponential_log_mean=fit_line(sizes, [s.mean_log_rate for s in stats]),
    )


def spectrum_csv(eigs, path=None) -> str:
    """Two columns ``re, im`` with 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re", "im"])
    for z in np.asarray(eigs, dtype=complex):
        w.writerow([format(z.real, ".17g"), format(z.imag, ".17g")])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


@dataclass
class DisorderFlowEnsemble:
    """Flowed versus exact diagonals and the ``||V||^2`` decay over realizations.

    ``mean_flow[j]`` averages the flowed diagonal entry of site ``j``;
    ``mean_exact[j]`` averages the exact eigenvalue matched to it in each
    realization. The decay fits regress ``log mean ||V||^2`` on ``l``
    (exponential) and on ``log l`` (algebraic) over the sampled grid.
    """

    spec: DisorderSpec
    ell_grid: np.ndarray
    mean_flow: np.ndarray
    mean_exact: np.ndarray
    log_mean_off_norm_sq: np.ndarray
    deltas: np.ndarray
    fallbacks: int
    exponential: LineFit
    algebraic: LineFit

    @property
    def max_mean_im_error(self) -> float:
        return float(np.max(np.abs(self.mean_flow.imag - self.mean_exact.imag)))

    @property
    def preferred_decay_law(self) -> str:
        return "exponential" if self.exponential.rss < self.algebraic.rss else "algebraic"

    def summary(self) -> dict:
        return {
            "n_sites": self.spec.n_sites,
            "realizations": self.spec.n_realizations,
            "max_mean_im_error": self.max_mean_im_error,
            "max_delta": float(self.deltas.max()),
            "mean_delta": float(self.deltas.mean()),
            "fallback_preconditioned": self.fallbacks,
            "exponential_fit": asdict(self.exponential),
            "algebraic_fit": asdict(self.algebraic),
            "preferred_decay_law": self.preferred_decay_law,
        }


def flow_disorder_ensemble(spec: DisorderSpec, config: FlowConfig, ell_grid=None) -> DisorderFlowEnsemble:
    """Run the coefficient flow on every realization of ``spec``.

    ``ell_grid`` defaults to 64 log-spaced points on ``[1, max_flow]``; the
    traces are interpolated onto it before averaging.
    """
    if ell_grid is None:
        ell_grid = np.geomspace(1.0, max(config.max_flow, 1.0 + 1e-9), 64)
    ell_grid = np.asarray(ell_grid, dtype=float)
    n, nr = spec.n_sites, spec.n_realizations
    flow_sum = np.zeros(n, dtype=complex)
    exact_sum = np.zeros(n, dtype=complex)
    norm_sum = np.zeros_like(ell_grid)
    deltas = np.empty(nr)
    fallbacks = 0
    for r in range(nr):
        g0 = disordered_coefficients(spec, r)
        exact = reference_spectrum(g0.to_matrix())
        res, _ = run_coefficient_flow(g0, config)
        fallbacks += int(res.trace.preconditioned)
        eigs = res.eigenvalues
        perm = match_eigenvalues(eigs, exact)
        flow_sum += eigs
        exact_sum += exact[perm]
        deltas[r] = spectral_discrepancy(eigs, exact)
        norm_sum += np.interp(ell_grid, res.trace.ell, res.trace.off_norm_sq)
    logs = np.log(np.maximum(norm_sum / nr, np.finfo(float).tiny))
    return DisorderFlowEnsemble(
        spec=spec,
        ell_grid=ell_grid,
        mean_flow=flow_sum / nr,
        mean_exact=exact_sum / nr,
        log_mean_off_norm_sq=logs,
        deltas=deltas,
        fallbacks=fallbacks,
        exponential=fit_line(ell_grid, logs),
        algebraic=fit_line(np.log(ell_grid), logs),
    )
