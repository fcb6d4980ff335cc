"""Integration of the similarity flow ``dL/dl = [eta(L), L]``.

The integrator is the Cash-Karp 5(4) Runge-Kutta pair: six stages, the
fifth-order solution is propagated and the embedded fourth-order solution
only provides the local error estimate used in adaptive mode. ``eta`` is
recomputed from the stage value of ``L`` at every internal stage, so the
scheme integrates one consistent autonomous ODE.

Butcher tableau (stage nodes c, coupling a, weights b5 / b4)::

    0     |
    1/5   | 1/5
    3/10  | 3/40        9/40
    3/5   | 3/10       -9/10     6/5
    1     | -11/54      5/2     -70/27      35/27
    7/8   | 1631/55296  175/512  575/13824  44275/110592  253/4096
    ------+--------------------------------------------------------------
    b5    | 37/378      0        250/621    125/594       0         512/1771
    b4    | 2825/27648  0        18575/48384 13525/55296  277/14336 1/4

Matrices carried along the flow ("passengers") come in three kinds:

* similarity   ``dX/dl = [eta, X]``   (superoperator-form observables)
* adjoint      ``dO/dl = -eta^dagger O``   (observables, Frobenius pairing)
* state        ``drho/dl = eta rho``   (initial states)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .generators import GeneratorKind, compute_generator, white_gaps
from .matcore import (
    as_matrix,
    i2_offdiagonal,
    offdiag_norm_sq,
    random_preconditioner,
    trace_power_invariants,
)


class FlowIntegrationError(RuntimeError):
    """Non-finite values or step-size collapse during integration."""

    def __init__(self, message: str, ell: float):
        super().__init__(f"{message} (at l = {ell:.6g})")
        self.ell = ell


_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
_BERR = _B5 - _B4


@dataclass(frozen=True)
class FlowConfig:
    """Generator choice and integration schedule.

    ``stop_when`` ends the flow once ``||V(l)||^2 / ||V(0)||^2`` drops below
    it. ``truncation_fraction`` pins an off-diagonal entry to zero for the
    rest of the flow once its modulus falls below that fraction of its
    initial modulus (0 disables). ``precondition_seed=None`` disables the
    random similarity applied to inputs on which the flow cannot start;
    ``force_precondition`` applies it unconditionally, which also breaks
    exact symmetries that can drive two diagonal entries of the White flow
    into each other at finite ``l``.
    """

    generator: GeneratorKind = GeneratorKind.WHITE
    step: float = 1e-3
    max_flow: float = 15.0
    adaptive: bool = False
    error_threshold: float = 1e-16
    truncation_fraction: float = 0.01
    stop_when: float = 1e-12
    trace_stride: int = 10
    precondition_seed: int | None = 0
    precondition_strength: float = 0.1
    white_tol: float | None = None
    nmax: int | None = None
    max_step: float | None = None
    frozen_eta: bool = False
    max_steps: int = 10_000_000
    force_precondition: bool = False

    def __post_init__(self):
        object.__setattr__(self, "generator", GeneratorKind.parse(self.generator))
        if not self.step > 0 or not self.max_flow > 0 or not self.error_threshold > 0:
            raise ValueError("step, max_flow and error_threshold must be positive")
        if not 0.0 <= self.truncation_fraction < 1.0:
            raise ValueError("truncation_fraction must lie in [0, 1)")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")
        if self.force_precondition and self.precondition_seed is None:
            raise ValueError("force_precondition needs a precondition_seed")


@dataclass
class FlowState:
    """Flow parameter, current matrix and the co-flowed passengers."""

    ell: float
    current: np.ndarray
    similarity: list = field(default_factory=list)
    adjoint: list = field(default_factory=list)
    state: list = field(default_factory=list)

    def __post_init__(self):
        self.current = as_matrix(self.current, "current")
        n = self.current.shape
        for group in (self.similarity, self.adjoint, self.state):
            for k, p in enumerate(group):
                group[k] = as_matrix(p, "passenger")
                if group[k].shape != n:
                    raise ValueError(f"passenger shape {group[k].shape} does not match {n}")

    def _stack(self) -> np.ndarray:
        return np.stack([self.current, *self.similarity, *self.adjoint, *self.state])

    def _counts(self) -> tuple[int, int, int]:
        return len(self.similarity), len(self.adjoint), len(self.state)

    @classmethod
    def _unstack(cls, ell, y, counts) -> "FlowState":
        ns, na, _ = counts
        rest = list(y[1:])
        return cls(ell, y[0], rest[:ns], rest[ns:ns + na], rest[ns + na:])


def coflow_observable_similarity(state: FlowState, obs0) -> FlowState:
    """Register ``obs0`` to evolve as ``[eta, X]`` alongside the flow."""
    return replace(state, similarity=[*state.similarity, obs0])


def coflow_observable_adjoint(state: FlowState, obs0) -> FlowState:
    """Register ``obs0`` to evolve as ``-eta^dagger O``."""
    return replace(state, adjoint=[*state.adjoint, obs0])


def coflow_state(state: FlowState, rho0) -> FlowState:
    """Register ``rho0`` to evolve as ``eta rho``."""
    return replace(state, state=[*state.state, rho0])


def _make_rhs(generator, white_tol, counts, derivative=None):
    ns, na, nst = counts

    if derivative is not None:
        if ns or na or nst:
            raise ValueError("a custom derivative cannot carry passengers")

        def rhs(y):
            return derivative(y[0])[None]

        return rhs

    def rhs(y, eta=None):
        l = y[0]
        if eta is None:
            eta = compute_generator(l, generator, white_tol)
        out = np.empty_like(y)
        out[0] = eta @ l - l @ eta
        if ns:
            x = y[1:1 + ns]
            out[1:1 + ns] = eta @ x - x @ eta
        if na:
            out[1 + ns:1 + ns + na] = -(eta.conj().T @ y[1 + ns:1 + ns + na])
        if nst:
            out[1 + ns + na:] = eta @ y[1 + ns + na:]
        return out

    return rhs


def _cash_karp(y, h, rhs, ell, frozen=False, generator=None, white_tol=None):
    """One Cash-Karp step; returns (y5, error estimate)."""
    if frozen:
        eta = compute_generator(y[0], generator, white_tol)

        def f(z):
            return rhs(z, eta)
    else:
        f = rhs
    k = []
    for i in range(6):
        z = y
        for j, a in enumerate(_A[i]):
            z = z + (h * a) * k[j]
        ki = f(z)
        if not np.all(np.isfinite(ki)):
            raise FlowIntegrationError(f"non-finite right-hand side at stage {i}", ell)
        k.append(ki)
    y5 = y + h * sum(b * ki for b, ki in zip(_B5, k) if b != 0.0)
    err = h * sum(b * ki for b, ki in zip(_BERR, k))
    return y5, float(np.max(np.abs(err)))


def rk5_step(state: FlowState, h: float, gen, white_tol: float | None = None):
    """Advance ``state`` by one Cash-Karp step of size ``h``.

    Returns the new state and the embedded error estimate (max-norm of the
    difference between the fifth- and fourth-order solutions).
    """
    if not h > 0:
        raise ValueError("h must be positive")
    gen = GeneratorKind.parse(gen)
    counts = state._counts()
    rhs = _make_rhs(gen, white_tol, counts)
    y5, err = _cash_karp(state._stack(), h, rhs, state.ell)
    return FlowState._unstack(state.ell + h, y5, counts), err


@dataclass
class FlowTrace:
    """Diagnostics sampled along the flow.

    ``drift[:, n-1]`` is ``|I_n(l) - I_n(0)| / |I_n(0)|``.
    """

    ell: np.ndarray
    diag: np.ndarray
    off_norm_sq: np.ndarray
    abs_i2_off: np.ndarray
    drift: np.ndarray
    anomalies: list = field(default_factory=list)
    steps: int = 0
    rejected: int = 0
    stop_reason: str = ""
    preconditioned: bool = False
    matrices: np.ndarray | None = None

    @property
    def nmax(self) -> int:
        return self.drift.shape[1]

    def max_drift(self) -> float:
        return float(np.max(self.drift[-1])) if self.drift.size else 0.0

    def csv_header(self) -> list[str]:
        n = self.diag.shape[1]
        return (["ell"] + [f"re_{k}" for k in range(n)] + [f"im_{k}" for k in range(n)]
                + ["off_norm_sq", "abs_i2_off"] + [f"dI_{m}" for m in range(2, self.nmax + 1)])

    def to_csv(self, path=None) -> str:
        """Columns: ell, re_0..re_{n-1}, im_0..im_{n-1}, off_norm_sq,
        abs_i2_off, dI_2..dI_nmax. Floats are written with 17 significant
        digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        for i in range(len(self.ell)):
            row = [self.ell[i], *self.diag[i].real, *self.diag[i].imag,
                   self.off_norm_sq[i], self.abs_i2_off[i], *self.drift[i, 1:]]
            w.writerow([format(float(x), ".17g") for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class FlowResult:
    final: np.ndarray
    trace: FlowTrace
    similarity: list
    adjoint: list
    state: list
    preconditioner: np.ndarray | None = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.diag(self.final).copy()

    @property
    def passengers(self) -> tuple[list, list, list]:
        return self.similarity, self.adjoint, self.state


def needs_preconditioning(l0, generator, white_tol=None, rtol: float = 1e-12) -> bool:
    """True when the flow from ``l0`` cannot start or cannot be certified.

    This covers ``D(0) = 0``, a vanishing ``I_2^off(0)`` with nonzero
    ``V(0)`` (e.g. triangular input), a generator that vanishes identically
    at ``l = 0`` and, for ``WHITE``, coupled pairs with degenerate diagonal.
    """
    l0 = np.asarray(l0)
    v2 = offdiag_norm_sq(l0)
    if v2 == 0.0:
        return False
    scale = max(float(np.max(np.abs(l0))), 1e-300)
    d = np.diag(l0)
    if np.all(np.abs(d) <= rtol * scale):
        return True
    if abs(i2_offdiagonal(l0)) <= rtol * v2:
        return True
    gen = GeneratorKind.parse(generator)
    eta = compute_generator(l0, gen, white_tol)
    if np.max(np.abs(eta)) <= rtol * scale:
        return True
    if gen is GeneratorKind.WHITE:
        _, absgap = white_gaps(l0)
        tol = white_tol if white_tol is not None else 1e-10 * float(absgap.max())
        coupled = (np.abs(l0) > rtol * scale) | (np.abs(l0.T) > rtol * scale)
        np.fill_diagonal(coupled, False)
        if np.any(coupled & (absgap <= tol)):
            return True
    return False


def run_flow(initial, config: FlowConfig = FlowConfig(), *, similarity: Sequence = (),
             adjoint: Sequence = (), states: Sequence = (),
             derivative: Callable[[np.ndarray], np.ndarray] | None = None,
             keep_matrices: bool = False) -> FlowResult:
    """Integrate the flow from ``initial`` to ``config.max_flow`` or until converged.

    ``derivative`` optionally replaces the generic right-hand side with a
    specialised one (``L -> dL/dl``); passengers are then not supported.
    ``keep_matrices`` stores the full ``L(l)`` at every trace sample in
    ``trace.matrices`` (in the preconditioned frame, if one was applied).
    """
    l0 = as_matrix(initial, "initial").copy()
    n = l0.shape[0]
    gen = config.generator
    r0 = None
    sim = [as_matrix(x).copy() for x in similarity]
    adj = [as_matrix(x).copy() for x in adjoint]
    sts = [as_matrix(x).copy() for x in states]
    for p in (*sim, *adj, *sts):
        if p.shape != l0.shape:
            raise ValueError(f"passenger shape {p.shape} does not match {l0.shape}")

    if config.force_precondition or (config.precondition_seed is not None
                                     and needs_preconditioning(l0, gen, config.white_tol)):
        r0 = random_preconditioner(n, config.precondition_seed, config.precondition_strength)
        r0inv = np.linalg.inv(r0)
        l0 = r0 @ l0 @ r0inv
        sim = [r0 @ x @ r0inv for x in sim]
        adj = [r0inv.conj().T @ x for x in adj]
        sts = [r0 @ x for x in sts]

    counts = (len(sim), len(adj), len(sts))
    y = np.stack([l0, *sim, *adj, *sts])
    rhs = _make_rhs(gen, config.white_tol, counts, derivative)

    nmax = config.nmax if config.nmax is not None else min(n, 32)
    inv0 = trace_power_invariants(l0, nmax)
    v0 = offdiag_norm_sq(l0)
    if not np.isfinite(v0):
        raise FlowIntegrationError("initial off-diagonal norm is not finite", 0.0)
    abs0 = np.abs(l0)
    offmask = ~np.eye(n, dtype=bool)
    pinned = np.zeros((n, n), dtype=bool)

    samples_ell, samples_diag, samples_v, samples_i2, samples_drift = [], [], [], [], []
    samples_m = []
    anomalies = []

    def sample(ell, l):
        vnorm = offdiag_norm_sq(l)
        if gen is GeneratorKind.WEGNER and samples_v:
            prev = samples_v[-1]
            if vnorm > prev * (1 + 1e-8) + 1e-300:
                anomalies.append((ell, prev, vnorm))
        samples_ell.append(ell)
        samples_diag.append(np.diag(l).copy())
        samples_v.append(vnorm)
        samples_i2.append(abs(i2_offdiagonal(l)))
        samples_drift.append(trace_power_invariants(l, nmax).relative_drift(inv0))
        if keep_matrices:
            samples_m.append(l.copy())

    sample(0.0, y[0])
    ell = 0.0
    steps = rejected = 0
    stop_reason = "max_flow"
    h = config.step
    hmax = config.max_step if config.max_step is not None else config.max_flow
    fixed_total = max(1, int(math.ceil(config.max_flow / config.step - 1e-9)))
    last_sampled = True

    if v0 == 0.0:
        stop_reason = "diagonal"
    while v0 > 0.0:
        if config.adaptive:
            h = min(h, hmax, config.max_flow - ell)
            y_new, err = _cash_karp(y, h, rhs, ell, config.frozen_eta, gen, config.white_tol)
            floor = 8 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(y))))
            thr = max(config.error_threshold, floor)
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (thr / err) ** 0.2))
            if err > thr:
                rejected += 1
                h *= factor
                if h < 1e-14 * max(1.0, ell):
                    raise FlowIntegrationError("adaptive step size collapsed", ell)
                continue
            ell = min(ell + h, config.max_flow)
            h *= factor
        else:
            y_new, err = _cash_karp(y, config.step, rhs, ell, config.frozen_eta, gen, config.white_tol)
            ell = (steps + 1) * config.step
        y = y_new
        steps += 1

        if config.truncation_fraction > 0:
            pinned |= offmask & (np.abs(y[0]) < config.truncation_fraction * abs0) & (abs0 > 0)
            y[0][pinned] = 0.0

        vnorm = offdiag_norm_sq(y[0])
        done_flow = ell >= config.max_flow - 1e-12 or (not config.adaptive and steps >= fixed_total)
        converged = vnorm <= config.stop_when * v0
        last_sampled = False
        if steps % config.trace_stride == 0 or done_flow or converged:
            sample(ell, y[0])
            last_sampled = True
        if converged:
            stop_reason = "converged"
            break
        if done_flow:
            break
        if steps >= config.max_steps:
            stop_reason = "max_steps"
            break
    if not last_sampled:
        sample(ell, y[0])

    trace = FlowTrace(
        ell=np.array(samples_ell),
        diag=np.array(samples_diag),
        off_norm_sq=np.array(samples_v),
        abs_i2_off=np.array(samples_i2),
        drift=np.array(samples_drift),
        anomalies=anomalies,
        steps=steps,
        rejected=rejected,
        stop_reason=stop_reason,
        preconditioned=r0 is not None,
        matrices=np.array(samples_m) if keep_matrices else None,
    )
    ns, na, _ = counts
    rest = list(y[1:])
    return FlowResult(y[0].copy(), trace, rest[:ns], rest[ns:ns + na], rest[ns + na:], r0)


def time_evolution_diagonal(final_diag, amplitudes, t, tol: float = 1e-8):
    """``sum_i amplitudes_i * exp(lambda_i t)`` for the diagonal of ``final_diag``.

    ``t`` may be a scalar or an array; the result has the shape of ``t``.
    """
    m = as_matrix(final_diag, "final_diag")
    scale = max(float(np.max(np.abs(m))), 1e-300)
    if math.sqrt(offdiag_norm_sq(m)) > tol * scale:
        raise ValueError("final_diag is not diagonal within tolerance")
    lam = np.diag(m)
    c = np.asarray(amplitudes, dtype=complex)
    if c.shape != lam.shape:
        raise ValueError(f"expected {lam.size} amplitudes, got {c.size}")
    t = np.asarray(t, dtype=float)
    return np.exp(np.multiply.outer(t, lam)) @ c


def run_flow_with_fallback(initial, config: FlowConfig = FlowConfig(), **kwargs) -> FlowResult:
    """:func:`run_flow`, retried once with a forced preconditioner on breakdown.

    Accidental near-degeneracies of the diagonal make the White generator
    blow up and the adaptive step collapse; a random similarity moves the
    diagonal off the near-crossing. ``trace.preconditioned`` records whether
    the retry was needed.
    """
    try:
        return run_flow(initial, config, **kwargs)
    except FlowIntegrationError:
        if config.force_precondition:
            raise
        seed = config.precondition_seed if config.precondition_seed is not None else 0
        return run_flow(initial, replace(config, force_precondition=True, precondition_seed=seed), **kwargs)
