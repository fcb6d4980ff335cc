"""``dissflow`` command line.

Every subcommand computes all of its outputs in memory and writes them only
once the whole computation has succeeded, next to a ``manifest.json`` that
records every resolved parameter. Seeded runs are deterministic, so the same
manifest reproduces byte-identical files.

Exit status: 0 on success, 1 for invalid input, 2 for numerical failure.

Matrix files (``flow-file``) hold the dimension on the first line followed
by ``dim * dim`` lines ``re im`` in row-major order.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .flowengine import FlowConfig, FlowIntegrationError, run_flow
from .generators import GeneratorKind
from .matcore import (
    EigensolverError,
    match_eigenvalues,
    random_complex_matrix,
    reference_spectrum,
    spectral_discrepancy,
)
from .models import (
    DisorderSpec,
    DomainError,
    ScatteringSpec,
    build_disordered_matrix,
    build_scattering_matrix,
    disorder_scan,
    flow_disorder_ensemble,
    run_coefficient_flow,
    scattering_coefficients,
    solve_secular,
    spectrum_csv,
    strongly_dissipative_branch,
    strongly_dissipative_eigenvalue,
    weak_coupling_eigenvalue,
    zero_real_part_branch,
)
from .superfermion import (
    NoClosedForm,
    single_mode_analytic_flow,
    single_mode_density_evolution,
    single_mode_density_from_flow,
    single_mode_matrix,
    single_mode_parameters,
    single_mode_steady_density,
)
from .swtransform import random_sw_instance, sw_scaling

OUT_ENV = "DISSFLOW_OUT"
DEFAULT_OUT = "dissflow-out"


class InputError(ValueError):
    """Bad command-line arguments or input files (exit status 1)."""


class MatrixFileError(InputError):
    pass


def _g(x) -> str:
    return format(float(x), ".17g")


# ------------------------------------------------------------------ matrix IO


def parse_matrix_text(text: str, source: str = "<matrix>") -> np.ndarray:
    """Parse the ``dim`` / ``re im`` format; errors name line and column."""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MatrixFileError(f"{source}:1:1: empty matrix file")

    def fail(lineno, col, msg):
        raise MatrixFileError(f"{source}:{lineno}:{col}: {msg}")

    head = lines[0]
    tok = head.split()
    if len(tok) != 1:
        fail(1, 1, f"expected a single dimension, got {head.strip()!r}")
    try:
        dim = int(tok[0])
    except ValueError:
        fail(1, head.index(tok[0]) + 1, f"dimension {tok[0]!r} is not an integer")
    if dim < 1:
        fail(1, head.index(tok[0]) + 1, "dimension must be >= 1")
    body = lines[1:]
    if len(body) != dim * dim:
        where = len(lines) + (1 if len(body) < dim * dim else 0)
        fail(min(where, len(lines) + 1), 1, f"expected {dim * dim} entry lines, found {len(body)}")
    vals = np.empty(dim * dim, dtype=complex)
    for k, line in enumerate(body):
        lineno = k + 2
        parts = line.split()
        if len(parts) != 2:
            fail(lineno, 1, f"expected 're im', got {line.strip()!r}")
        nums = []
        pos = 0
        for p in parts:
            pos = line.index(p, pos)
            try:
                x = float(p)
            except ValueError:
                fail(lineno, pos + 1, f"cannot parse {p!r} as a number")
            if not math.isfinite(x):
                fail(lineno, pos + 1, f"non-finite value {p!r}")
            nums.append(x)
            pos += len(p)
        vals[k] = complex(nums[0], nums[1])
    return vals.reshape(dim, dim)


def read_matrix_file(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MatrixFileError(f"{path}: {exc.strerror or exc}") from exc
    return parse_matrix_text(text, str(path))


def format_matrix(m) -> str:
    m = np.asarray(m, dtype=complex)
    rows = [str(m.shape[0])] + [f"{_g(z.real)} {_g(z.imag)}" for z in m.ravel()]
    return "\n".join(rows) + "\n"


# ------------------------------------------------------------------ helpers


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else (str(x) if isinstance(x, (int, np.integer)) else _g(x))
                    for x in r])
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(_plain(doc), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _plain(x):
    """Recursively turn numpy scalars / complex numbers into JSON-friendly values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, GeneratorKind):
        return x.value
    return x


def _eigen_table(flow_eigs, exact) -> str:
    perm = match_eigenvalues(flow_eigs, exact)
    ex = np.asarray(exact)[perm]
    rows = [(i, a.real, a.imag, b.real, b.imag, abs(a - b)) for i, (a, b) in enumerate(zip(flow_eigs, ex))]
    return _csv(["index", "flow_re", "flow_im", "exact_re", "exact_im", "abs_diff"], rows)


def _flow_config(args, **defaults) -> FlowConfig:
    """Resolve common flow flags against per-command defaults."""
    def pick(name, key=None):
        v = getattr(args, name, None)
        return defaults[key or name] if v is None else v

    precondition = pick("precondition")
    cfg = FlowConfig(
        generator=GeneratorKind.parse(pick("generator")),
        step=pick("dl"),
        max_flow=pick("lmax"),
        adaptive=pick("adaptive"),
        error_threshold=pick("err_threshold"),
        truncation_fraction=pick("truncate_frac"),
        stop_when=pick("stop_when"),
        trace_stride=pick("trace_stride"),
        precondition_seed=None if precondition == "never" else pick("precondition_seed"),
        force_precondition=precondition == "always",
    )
    return cfg


FLOW_DEFAULTS = dict(generator="white", dl=1e-3, lmax=15.0, adaptive=False, err_threshold=1e-16,
                     truncate_frac=0.01, stop_when=1e-12, trace_stride=10, precondition="auto",
                     precondition_seed=0)


def _config_dict(cfg: FlowConfig) -> dict:
    d = asdict(cfg)
    d["generator"] = cfg.generator.value
    return d


def _generic_flow_outputs(a, cfg: FlowConfig) -> tuple[dict, dict]:
    exact = reference_spectrum(a)
    res = run_flow(a, cfg)
    tr = res.trace
    eigs = res.eigenvalues
    summary = {
        "dim": a.shape[0],
        "delta": spectral_discrepancy(eigs, exact),
        "drift": tr.drift[-1].tolist(),
        "max_drift": tr.max_drift(),
        "final_ell": float(tr.ell[-1]),
        "final_off_norm_sq": float(tr.off_norm_sq[-1]),
        "steps": tr.steps,
        "rejected_steps": tr.rejected,
        "stop_reason": tr.stop_reason,
        "preconditioned": tr.preconditioned,
        "norm_increases": len(tr.anomalies),
    }
    if cfg.generator is GeneratorKind.WHITE:
        sel = (tr.ell >= 0.1) & (tr.ell <= 5.0) & (tr.abs_i2_off > 0)
        if np.count_nonzero(sel) >= 2:
            summary["i2_off_log_slope"] = float(np.polyfit(tr.ell[sel], np.log(tr.abs_i2_off[sel]), 1)[0])
    files = {"trace.csv": tr.to_csv(), "eigenvalues.csv": _eigen_table(eigs, exact)}
    return files, summary


# ------------------------------------------------------------------ commands


def cmd_random(args):
    if args.dim < 1:
        raise InputError("--dim must be >= 1")
    cfg = _flow_config(args, **FLOW_DEFAULTS)
    a = random_complex_matrix(args.dim, args.seed)
    files, summary = _generic_flow_outputs(a, cfg)
    files["matrix.txt"] = format_matrix(a)
    summary["seed"] = args.seed
    files["summary.json"] = _json(summary)
    params = {"dim": args.dim, "seed": args.seed, "flow": _config_dict(cfg)}
    return files, params, f"delta={summary['delta']:.3e} max_drift={summary['max_drift']:.3e}"


def cmd_flow_file(args):
    a = read_matrix_file(args.matrix)
    cfg = _flow_config(args, **FLOW_DEFAULTS)
    files, summary = _generic_flow_outputs(a, cfg)
    summary["source"] = str(args.matrix)
    files["summary.json"] = _json(summary)
    params = {"matrix": str(args.matrix), "flow": _config_dict(cfg)}
    return files, params, f"delta={summary['delta']:.3e} max_drift={summary['max_drift']:.3e}"


def cmd_single_mode(args):
    eps, g1, g2 = args.eps, args.g1, args.g2
    if g1 < 0 or g2 < 0:
        raise InputError("--g1 and --g2 must be nonnegative")
    if g1 + g2 <= 0:
        raise InputError("g1 + g2 must be positive")
    if args.t_points < 1 or not args.t_max >= 0:
        raise InputError("--t-points must be >= 1 and --t-max >= 0")
    # triangular start (g2 = 0) is flowed as is, so it can be compared with the closed forms
    defaults = dict(FLOW_DEFAULTS, adaptive=True, err_threshold=1e-14, truncate_frac=0.0, stop_when=0.0,
                    trace_stride=1, precondition="never" if g2 == 0 else "auto")
    cfg = _flow_config(args, **defaults)
    m = single_mode_matrix(eps, g1, g2)
    res = run_flow(m, cfg, keep_matrices=True)
    tr = res.trace
    rows = []
    for ell, mat in zip(tr.ell, tr.matrices):
        _, alpha, mu1, mu2 = single_mode_parameters(mat)
        try:
            exact = single_mode_analytic_flow(cfg.generator, eps, g1, g2, ell)
            exact = tuple(float(x) for x in exact)
        except NoClosedForm:
            exact = (math.nan,) * 3
        if tr.preconditioned:
            exact = (math.nan,) * 3
        rows.append((ell, alpha, mu1, mu2, *exact))
    flow_csv = _csv(["ell", "alpha", "mu1", "mu2", "alpha_exact", "mu1_exact", "mu2_exact"], rows)
    t = np.linspace(0.0, args.t_max, args.t_points)
    n_formula = single_mode_density_evolution(g1, g2, args.n0, t)
    n_flow = single_mode_density_from_flow(g1, g2, args.n0, t, eps)
    density_csv = _csv(["t", "n_formula", "n_flow"], zip(t, n_formula, n_flow))
    nss = single_mode_steady_density(g1, g2, eps)
    expected = np.array([eps - 0.5j * (g1 + g2), eps + 0.5j * (g1 + g2)])
    max_dev = [abs(r[k] - r[k + 3]) for r in rows for k in (1, 2, 3) if not math.isnan(r[k + 3])]
    summary = {
        "eigenvalues": res.eigenvalues.tolist(),
        "expected_eigenvalues": expected.tolist(),
        "delta": spectral_discrepancy(res.eigenvalues, expected),
        "steady_density": nss,
        "steady_density_expected": g2 / (g1 + g2),
        "closed_form_max_deviation": max(max_dev) if max_dev else None,
        "density_max_deviation": float(np.max(np.abs(n_formula - n_flow))),
        "preconditioned": tr.preconditioned,
        "stop_reason": tr.stop_reason,
    }
    files = {"flow.csv": flow_csv, "density.csv": density_csv, "summary.json": _json(summary)}
    params = {"eps": eps, "g1": g1, "g2": g2, "n0": args.n0, "t_max": args.t_max, "t_points": args.t_points,
              "flow": _config_dict(cfg)}
    return files, params, f"delta={summary['delta']:.3e} steady_density={nss:.12g}"


def _secular_report(spec: ScatteringSpec, exact) -> dict:
    if spec.gamma <= 0:
        return {"gamma": spec.gamma, "note": "no loss, no secular root"}
    root = solve_secular(spec)
    lam = root.eigenvalue(spec)
    out = {"x": root.x, "residual": root.residual, "secular_eigenvalue": lam}
    if spec.gamma > 4 * spec.v:
        dense = strongly_dissipative_branch(exact)
        closed = strongly_dissipative_eigenvalue(spec)
        out["branch"] = "strong"
    else:
        dense = zero_real_part_branch(exact)
        try:
            closed = weak_coupling_eigenvalue(spec)
        except DomainError:
            closed = None
        out["branch"] = "weak"
    out["dense_eigenvalue"] = dense
    out["closed_form_eigenvalue"] = closed
    out["secular_rel_error"] = abs(lam - dense) / abs(dense)
    out["closed_form_rel_error"] = None if closed is None else abs(closed - dense) / abs(dense)
    return out


def cmd_scattering(args):
    try:
        spec = ScatteringSpec(args.v, args.gamma, args.box, args.j_cutoff)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    gen = GeneratorKind.parse(args.generator or "white")
    # the symmetric level scheme drives two White diagonals into each other; a random
    # similarity at the start avoids that crossing
    defaults = dict(FLOW_DEFAULTS, lmax=25.0, adaptive=True, err_threshold=1e-14, truncate_frac=0.0,
                    stop_when=0.0, trace_stride=20,
                    precondition="always" if gen is GeneratorKind.WHITE else "auto")
    cfg = _flow_config(args, **defaults)
    m = build_scattering_matrix(spec)
    exact = reference_spectrum(m)
    files = {"spectrum.csv": spectrum_csv(exact)}
    if cfg.generator is GeneratorKind.WEGNER:
        res = run_flow(m, cfg)
        zeroed = 0
    else:
        res, counter = run_coefficient_flow(scattering_coefficients(spec), cfg)
        zeroed = counter.zeroed_pairs
    tr = res.trace
    files["trace.csv"] = tr.to_csv()
    files["eigenvalues.csv"] = _eigen_table(res.eigenvalues, exact)
    files["secular.json"] = _json(_secular_report(spec, exact))
    summary = {
        "dim": spec.dim,
        "delta": spectral_discrepancy(res.eigenvalues, exact),
        "drift_top": float(tr.drift[-1][-1]),
        "max_drift": tr.max_drift(),
        "final_off_norm_sq": float(tr.off_norm_sq[-1]),
        "steps": tr.steps,
        "stop_reason": tr.stop_reason,
        "preconditioned": tr.preconditioned,
        "zeroed_pair_evaluations": zeroed,
        "trace_imag_sum": float(np.sum(exact.imag)),
    }
    files["summary.json"] = _json(summary)
    params = {"v": spec.v, "gamma": spec.gamma, "box": spec.box_size, "j_cutoff": spec.j_cutoff,
              "flow": _config_dict(cfg)}
    return files, params, f"delta={summary['delta']:.3e} drift_top={summary['drift_top']:.3e}"


def cmd_disordered(args):
    sizes = args.sites
    if any(s < 1 for s in sizes):
        raise InputError("--sites values must be >= 1")
    try:
        base = DisorderSpec(sizes[0], args.J, args.W, args.gamma, args.seed, args.realizations)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    files = {}
    params = {"sites": sizes, "J": args.J, "W": args.W, "gamma": args.gamma,
              "realizations": args.realizations, "seed": args.seed, "mode": args.mode}
    if args.mode == "exact":
        rep = disorder_scan(base, sizes)
        files["scan.csv"] = rep.to_csv()
        files["scan.json"] = rep.to_json()
        rows = []
        for n in sizes:
            sub = replace(base, n_sites=n)
            for r in range(sub.n_realizations):
                for z in reference_spectrum(build_disordered_matrix(sub, r)):
                    rows.append((n, r, z.real, z.imag))
        files["spectra.csv"] = _csv(["size", "realization", "re", "im"], rows)
        msg = f"slope={rep.slope:.4g} preferred={rep.preferred}"
    else:
        gen = GeneratorKind.parse(args.generator or "white")
        lmax = 16.0 if gen is GeneratorKind.WHITE else 200.0
        defaults = dict(FLOW_DEFAULTS, lmax=lmax, adaptive=True, err_threshold=1e-10, truncate_frac=0.0,
                        stop_when=0.0, trace_stride=1)
        cfg = _flow_config(args, **defaults)
        if cfg.generator is GeneratorKind.WEGNER:
            raise InputError("flow mode supports the diag-adjoint and white generators")
        params["flow"] = _config_dict(cfg)
        diag_rows, norm_rows, per_size = [], [], {}
        for n in sizes:
            ens = flow_disorder_ensemble(replace(base, n_sites=n), cfg)
            for j in range(n):
                diag_rows.append((n, j, ens.mean_flow[j].real, ens.mean_flow[j].imag,
                                  ens.mean_exact[j].real, ens.mean_exact[j].imag))
            for ell, y in zip(ens.ell_grid, ens.log_mean_off_norm_sq):
                norm_rows.append((n, ell, y))
            per_size[str(n)] = ens.summary()
        files["flow_diagonals.csv"] = _csv(
            ["size", "site", "mean_re_flow", "mean_im_flow", "mean_re_exact", "mean_im_exact"], diag_rows)
        files["offnorm.csv"] = _csv(["size", "ell", "log_mean_off_norm_sq"], norm_rows)
        files["summary.json"] = _json(per_size)
        last = per_size[str(sizes[-1])]
        msg = f"max_mean_im_error={last['max_mean_im_error']:.3e} decay={last['preferred_decay_law']}"
    return files, params, msg


def cmd_sw_compare(args):
    if args.dim < 2:
        raise InputError("--dim must be >= 2")
    xis = args.xi
    if any(not x > 0 for x in xis):
        raise InputError("--xi values must be positive")
    l0, l1 = random_sw_instance(args.dim, args.seed)
    rep = sw_scaling(l0, l1, xis)
    files = {"sw.json": rep.to_json()}
    params = {"dim": args.dim, "seed": args.seed, "xi": xis}
    return files, params, f"sw_exponent={rep.sw_exponent:.3f} flow_exponent={rep.flow_exponent:.3f}"


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _flow_flags(p):
    g = p.add_argument_group("flow schedule")
    g.add_argument("--generator", choices=[k.value for k in GeneratorKind])
    g.add_argument("--dl", type=float, help="(initial) flow step")
    g.add_argument("--lmax", type=float, help="final flow parameter")
    g.add_argument("--adaptive", action=argparse.BooleanOptionalAction, default=None,
                   help="embedded-error step control")
    g.add_argument("--err-threshold", type=float, help="accepted local error per adaptive step")
    g.add_argument("--truncate-frac", type=float,
                   help="pin off-diagonal entries below this fraction of their start value (0 disables)")
    g.add_argument("--stop-when", type=float, help="stop once ||V||^2 / ||V(0)||^2 drops below this")
    g.add_argument("--trace-stride", type=int, help="record diagnostics every N steps")
    g.add_argument("--precondition", choices=["auto", "always", "never"],
                   help="random similarity at the start of the flow")
    g.add_argument("--precondition-seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dissflow", description="Flow-equation diagonalisation of dissipative models.")
    parser.add_argument("--version", action="version", version=f"dissflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_flag(p):
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")

    p = sub.add_parser("random", help="flow a random complex matrix")
    p.add_argument("--dim", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    _flow_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_random)

    p = sub.add_parser("flow-file", help="flow a matrix read from a file")
    p.add_argument("matrix", help="matrix file: dim, then dim*dim lines 're im'")
    p.add_argument("--seed", type=int, default=0, help="unused; recorded in the manifest")
    _flow_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_flow_file)

    p = sub.add_parser("single-mode", help="single fermionic mode with loss and gain")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--g1", type=float, default=1.0, help="loss rate")
    p.add_argument("--g2", type=float, default=0.5, help="gain rate")
    p.add_argument("--n0", type=float, default=1.0, help="initial occupation")
    p.add_argument("--t-max", type=float, default=5.0)
    p.add_argument("--t-points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="unused; recorded in the manifest")
    _flow_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_single_mode)

    p = sub.add_parser("scattering", help="momentum modes with a point loss")
    p.add_argument("--v", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=5.0)
    p.add_argument("--j-cutoff", type=int, default=15)
    p.add_argument("--box", type=float, default=2 * math.pi)
    p.add_argument("--seed", type=int, default=0, help="unused; recorded in the manifest")
    _flow_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_scattering)

    p = sub.add_parser("disordered", help="disordered chain with a lossy centre site")
    p.add_argument("--sites", type=int, nargs="+", default=[6, 8, 10, 12])
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--W", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--realizations", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["exact", "flow"], default="exact")
    _flow_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_disordered)

    p = sub.add_parser("sw-compare", help="flow against second-order Schrieffer-Wolff")
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--xi", type=float, nargs="+", default=[1e-3, 3e-3, 1e-2])
    out_flag(p)
    p.set_defaults(func=cmd_sw_compare)
    return parser


def _write_outputs(out_dir: Path, files: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        with open(out_dir / name, "w", newline="") as fh:
            fh.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        out_dir = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        files, params, msg = args.func(args)
    except (InputError, ValueError) as exc:
        print(f"dissflow: error: {exc}", file=sys.stderr)
        return 1
    except (FlowIntegrationError, EigensolverError, RuntimeError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"dissflow: numerical failure: {exc}", file=sys.stderr)
        return 2
    manifest = {"command": args.command, "parameters": params, "output_dir": str(out_dir),
                "seed": getattr(args, "seed", None), "version": __version__}
    files["manifest.json"] = _json(manifest)
    try:
        _write_outputs(out_dir, files)
    except OSError as exc:
        print(f"dissflow: error: cannot write outputs: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: {msg} -> {out_dir}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
