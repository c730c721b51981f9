"""Command-line driver: validate | certify | simulate | verify | appendix-a.

Exit codes: 0 = accepted / all enabled checks passed, 1 = a condition or check
failed, 2 = config/parse error, 3 = under-resolved quadrature. Output files
(CSV with fixed column order and %.17g decimals, SVG with a fixed hash salt
and no timestamps) are byte-identical across runs of the same config.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys

import numpy as np

from . import __version__
from . import config as cfgmod
from . import functionals as fn
from . import matrix_core as mc
from . import nonquadratic as nq
from . import propagator as pr
from . import verifier as vf
from .errors import (
    CertificateInfeasibleError,
    ConfigError,
    HypodecayError,
    ParameterError,
    PreconditionError,
    UnderResolvedError,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RESOLUTION = 3

_CONFIG_HELP = """\
config keys (defaults in brackets):
  system:     D, C (rows 'a,b; c,d'), tolerance [1e-9]
  data:       f0 = mixture: w,mean..,cov-upper..  (original frame)
              g0 = mixture: ... | hermite: a1 .. ad coeff; ...  (normalized frame)
  functional: p [2], P = identity | certificate(nu) [identity],
              grid_degree [60 for d<=2, 30 for d=3], hermite_degree [8]
  time:       t_max [15/mu], samples [200]
  checks:     checks = all | comma list [all]; eta [0.5], eps [0.25],
              p1 [p], p2 [p]
  output:     out [out]
  appendix-a: phi, diffusion (expressions in x: +,-,*,/,^,exp,sin),
              domain [-8, 8], cells [2048], a1_pts [2001], dt [5e-4],
              f0 = gaussian: mean,var, g0 = poly_equilibrium: c0,c1,..,
              p, t_max [5], samples [11]
"""


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return "%.17g" % float(v)


def _matrix_str(M):
    return "; ".join(",".join(_fmt(v) for v in row) for row in np.atleast_2d(M))


def _ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def write_trajectory_csv(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(vf.TRAJECTORY_COLUMNS) + "\n")
        for i in range(report.times.shape[0]):
            fh.write(
                ",".join(_fmt(report.columns[c][i]) for c in vf.TRAJECTORY_COLUMNS)
                + "\n"
            )


def write_checks_csv(path, checks):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("check,time,lhs,rhs,margin,passed\n")
        for chk in checks:
            rows = chk.rows or [
                (chk.worst_time if chk.worst_time is not None else math.nan,
                 math.nan, math.nan, chk.margin, chk.passed)
            ]
            for t, lhs, rhs, margin, ok in rows:
                fh.write(
                    "%s,%s,%s,%s,%s,%s\n"
                    % (chk.name, _fmt(t), _fmt(lhs), _fmt(rhs), _fmt(margin),
                       str(bool(ok)).lower())
                )


def write_manifest(path, cfg, extras):
    digest = hashlib.sha256(cfg.raw_text.encode("utf-8")).hexdigest()
    lines = [
        f"package_version = {__version__}",
        f"config_sha256 = {digest}",
        f"tolerance = {_fmt(cfg.tolerance)}",
    ]
    lines += [f"{k} = {v}" for k, v in extras.items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _plot_setup():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "hypodecay"
    return plt


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_entropy_decay(path, report, bundle, fit=None, column="e_2"):
    plt = _plot_setup()
    t = report.times
    vals = report.column(column)
    mask = np.isfinite(vals) & (vals > 0)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(t[mask], vals[mask], label=column, color="C0")
    env = bundle.envelope(t)
    ratio = np.max(vals[mask] / env[mask]) if mask.any() else 1.0
    ax.semilogy(t, ratio * env, "--", color="C1",
                label="envelope (1+t^%d) e^{-%.3g t}" % (2 * bundle.n, 2 * bundle.mu))
    if fit is not None:
        ax.set_title(
            "rate fit %.4g, order fit %.3g (residual %.2g)"
            % (fit.rate_fit, fit.poly_order_fit, fit.residual)
        )
    ax.set_xlabel("t")
    ax.set_ylabel("entropy")
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def plot_fisher_decay(path, report):
    plt = _plot_setup()
    t = report.times
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for col, color in (("I_p_P", "C0"), ("genI_p", "C2"), ("I2_f2", "C3")):
        vals = report.column(col)
        mask = np.isfinite(vals) & (vals > 0)
        if mask.any():
            ax.semilogy(t[mask], vals[mask], label=col, color=color)
    ax.set_xlabel("t")
    ax.set_ylabel("Fisher functionals")
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# runner assembly
# ---------------------------------------------------------------------------


def build_runner(cfg, grid_degree=None):
    if cfg.D is None or cfg.C is None:
        raise ConfigError("scenario needs both D and C")
    system = mc.FPSystem(D=cfg.D, C=cfg.C, tolerance=cfg.tolerance)
    norm = mc.normalize_system(system)
    spectral = mc.analyze_drift_spectrum(norm.C_tilde, cfg.tolerance)
    d = system.d
    degree = grid_degree or cfg.grid_degree or fn.default_degree(d)
    grid = fn.QuadratureGrid.build(d, degree)
    f0 = cfgmod.state_from_spec(cfg.f0_spec, d, norm, cfg.hermite_degree)
    if f0 is None:
        f0 = pr.GaussianMixture.single(np.zeros(d), np.eye(d))
    g0 = cfgmod.state_from_spec(cfg.g0_spec, d, norm, cfg.hermite_degree)
    if cfg.P_mode[0] == "certificate":
        cert = mc.build_certificate(norm.C_tilde, cfg.P_mode[1], cfg.tolerance)
        P, lam = cert.P, cert.lam
    else:
        P = np.eye(d)
        lam = float(np.min(np.linalg.eigvalsh(norm.D_tilde)))
    runner = vf.TrajectoryRunner(
        norm, spectral, f0, g0=g0, p=cfg.p, P=P, grid=grid,
        hermite_degree=cfg.hermite_degree,
    )
    return runner, lam


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(cfg):
    if cfg.D is None or cfg.C is None:
        raise ConfigError("validate needs both D and C")
    report = mc.validate_system(cfg.D, cfg.C, cfg.tolerance)
    print(report.to_text())
    if not report.accepted:
        return EXIT_CHECK_FAILED
    system = mc.FPSystem(D=cfg.D, C=cfg.C, tolerance=cfg.tolerance, report=report)
    norm = mc.normalize_system(system)
    spectral = mc.analyze_drift_spectrum(norm.C_tilde, cfg.tolerance)
    print("T = " + _matrix_str(norm.T))
    print("D_tilde = " + _matrix_str(norm.D_tilde))
    print("C_tilde = " + _matrix_str(norm.C_tilde))
    print("K = " + _matrix_str(norm.K))
    print("mu = " + _fmt(spectral.mu))
    print("defect n = %d" % spectral.n)
    print(
        "R_mu = "
        + "; ".join(
            "%.17g%+.17gj (alg %d, geom %d)"
            % (c.value.real, c.value.imag, c.algebraic, c.geometric)
            for c in spectral.R_mu
        )
    )
    print("c_tilde = " + _fmt(spectral.c_tilde) + "  (grid estimate)")
    return EXIT_OK


def cmd_certify(cfg, nu_override=None):
    if cfg.C is None:
        raise ConfigError("certify needs C")
    nu = nu_override
    if nu is None:
        nu = cfg.nu
    if nu is None and cfg.P_mode[0] == "certificate":
        nu = cfg.P_mode[1]
    if nu is None:
        nu = 0.0
    try:
        cert = mc.build_certificate(cfg.C, nu, cfg.tolerance)
    except (CertificateInfeasibleError, ParameterError) as exc:
        print(f"infeasible: {exc}")
        return EXIT_CHECK_FAILED
    print(cert.to_text())
    ok = cert.lmi_residual >= -cfg.tolerance * max(cert.p_max, 1.0)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _trajectory_times(cfg, mu):
    t_max = cfg.t_max if cfg.t_max is not None else 15.0 / mu
    samples = cfg.samples if cfg.samples is not None else 200
    return vf.default_time_grid(mu, t_max=t_max, samples=samples), t_max


def cmd_simulate(cfg, out_dir):
    runner, _ = build_runner(cfg)
    times, t_max = _trajectory_times(cfg, runner.bundle.mu)
    report = runner.run(times)
    out = _ensure_outdir(out_dir)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), report)
    write_manifest(
        os.path.join(out, "manifest.txt"),
        cfg,
        {
            "grid_degree": runner.grid.degree,
            "mu": _fmt(runner.bundle.mu),
            "n": runner.bundle.n,
            "c_tilde": _fmt(runner.bundle.c_tilde),
            "c_hat": _fmt(runner.bundle.c_hat),
            "t_max": _fmt(t_max),
            "samples": times.shape[0],
        },
    )
    column = "e_2" if np.isfinite(report.column("e_2")).any() else "e_p"
    plot_entropy_decay(
        os.path.join(out, "entropy_decay.svg"), report, runner.bundle,
        column=column,
    )
    plot_fisher_decay(os.path.join(out, "fisher_decay.svg"), report)
    print(f"trajectory written to {out}")
    return EXIT_OK


def _run_checks(cfg, runner, lam, report, times, t_max):
    bundle = runner.bundle
    mu = bundle.mu
    checks = []
    fit = None

    def guarded(name, fnc):
        try:
            checks.append(fnc())
        except (PreconditionError, ParameterError, HypodecayError) as exc:
            checks.append(
                vf.CheckResult(
                    name=name, passed=False, margin=-math.inf,
                    details={"error": str(exc)},
                )
            )

    enabled = set(cfg.checks)
    if "fisher_differential" in enabled:
        fd_times = np.linspace(max(0.05, 2e-3), min(t_max, 5.0 / mu), 50)
        guarded(
            "fisher_differential",
            lambda: vf.check_fisher_differential(runner, lam, fd_times),
        )
    if "improved_decay" in enabled:
        id_times = np.linspace(0.5 / mu, 3.0 / mu, 12)
        guarded(
            "improved_decay",
            lambda: vf.check_improved_decay(runner, lam, id_times),
        )
    if "interpolation" in enabled:
        def interp():
            margins = []
            f_state = runner.f_at(0.5 / mu)
            g_state = runner.g_at(0.5 / mu)
            for p_i in (1.1, 1.5, 1.9):
                margins.append(
                    vf.check_interpolation(f_state, g_state, p_i, runner.P,
                                           runner.grid)
                )
            worst = min(margins, key=lambda c: c.margin)
            return vf.CheckResult(
                name="interpolation",
                passed=all(c.passed for c in margins),
                margin=worst.margin,
                details={"p_sweep": (1.1, 1.5, 1.9)},
                rows=[r for c in margins for r in c.rows],
            )

        guarded("interpolation", interp)
    if "lower_bound" in enabled:
        guarded(
            "lower_bound",
            lambda: vf.check_lower_bound(runner, cfg.eta, cfg.eps),
        )
    if "contractivity" in enabled:
        p1 = cfg.p1 if cfg.p1 is not None else (cfg.p if cfg.p > 1 else 2.0)
        p2 = cfg.p2 if cfg.p2 is not None else p1
        guarded(
            "contractivity",
            lambda: vf.check_contractivity(runner, p1, p2, cfg.eta),
        )
    if "main_theorems" in enabled:
        def main_check():
            nonlocal fit
            column = "e_2" if np.isfinite(report.column("e_2")).all() else "e_p"
            window = (min(8.0 / mu, 0.55 * t_max), min(15.0 / mu, t_max))
            res, fit = vf.check_main_theorems(
                report, mu, bundle.n, window=window, column=column
            )
            return res

        guarded("main_theorems", main_check)
    if "log_sobolev" in enabled:
        guarded(
            "log_sobolev",
            lambda: vf.check_log_sobolev(runner, times[:: max(1, len(times) // 40)]),
        )
    if "entropy_monotone" in enabled:
        guarded("entropy_monotone", lambda: vf.check_entropy_monotone(report))
    if "splitting" in enabled:
        guarded("splitting", lambda: vf.check_splitting(report))
    return checks, fit


def cmd_verify(cfg, out_dir):
    runner, lam = build_runner(cfg)
    times, t_max = _trajectory_times(cfg, runner.bundle.mu)
    try:
        report = runner.run(times)
    except UnderResolvedError as exc:
        print(f"under-resolved: {exc}")
        return EXIT_RESOLUTION
    checks, fit = _run_checks(cfg, runner, lam, report, times, t_max)
    for chk in checks:
        report.add_check(chk)

    out = _ensure_outdir(out_dir)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), report)
    write_checks_csv(os.path.join(out, "checks.csv"), checks)
    lines = [
        f"hypodecay verify report",
        f"mu = {_fmt(runner.bundle.mu)}, defect n = {runner.bundle.n}",
        f"lambda (certified decay rate) = {_fmt(lam)}",
        "envelope constants are grid estimates: "
        f"c_tilde = {_fmt(runner.bundle.c_tilde)}, c_hat = {_fmt(runner.bundle.c_hat)}",
        "",
    ]
    for chk in checks:
        status = "PASS" if chk.passed else "FAIL"
        lines.append(f"[{status}] {chk.name}: margin = {_fmt(chk.margin)}")
        if chk.worst_time is not None:
            lines.append(f"         worst time = {_fmt(chk.worst_time)}")
        for key, val in chk.details.items():
            lines.append(f"         {key} = {val}")
    if fit is not None:
        lines.append("")
        lines.append(
            "fit: rate = %s, poly order = %s, residual = %s (window %s)"
            % (_fmt(fit.rate_fit), _fmt(fit.poly_order_fit),
               _fmt(fit.residual), fit.window)
        )
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(
        os.path.join(out, "manifest.txt"),
        cfg,
        {
            "grid_degree": runner.grid.degree,
            "mu": _fmt(runner.bundle.mu),
            "n": runner.bundle.n,
            "c_tilde": _fmt(runner.bundle.c_tilde),
            "c_hat": _fmt(runner.bundle.c_hat),
            "lambda": _fmt(lam),
            "t_max": _fmt(t_max),
            "samples": times.shape[0],
        },
    )
    column = "e_2" if np.isfinite(report.column("e_2")).all() else "e_p"
    plot_entropy_decay(
        os.path.join(out, "entropy_decay.svg"), report, runner.bundle, fit=fit,
        column=column,
    )
    plot_fisher_decay(os.path.join(out, "fisher_decay.svg"), report)
    print("\n".join(lines))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


def cmd_appendix(cfg, out_dir):
    problem = cfgmod.scalar_problem_from_config(cfg)
    a1 = nq.check_condition_a1(problem, pts_per_axis=cfg.a1_pts)
    out = _ensure_outdir(out_dir)
    with open(os.path.join(out, "a1_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(a1.to_text() + "\n")
    print(a1.to_text())
    if cfg.f0_spec is None or cfg.g0_spec is None:
        return EXIT_OK if a1.lambda1 > 0 else EXIT_CHECK_FAILED

    phi1d = lambda x: problem.phi(np.asarray(x, dtype=float)[:, None])  # noqa: E731
    f0 = cfgmod.line_data_from_spec(cfg.f0_spec, phi1d)
    g0 = cfgmod.line_data_from_spec(cfg.g0_spec, phi1d)
    t_max = cfg.t_max if cfg.t_max is not None else 5.0
    samples = cfg.samples if cfg.samples is not None else 11
    t_grid = np.linspace(0.0, t_max, samples)
    try:
        chk = nq.verify_generalized_fisher_decay_1d(
            problem, f0, g0, cfg.p, t_grid, cells=cfg.cells, dt=cfg.dt,
            a1_pts=cfg.a1_pts,
        )
    except PreconditionError as exc:
        print(f"precondition failure: {exc}")
        return EXIT_CHECK_FAILED
    with open(os.path.join(out, "decay.csv"), "w", encoding="utf-8") as fh:
        fh.write("t,genI,bound,margin,passed\n")
        for t, lhs, rhs, margin, ok in chk.rows:
            fh.write(
                ",".join([_fmt(t), _fmt(lhs), _fmt(rhs), _fmt(margin),
                          str(bool(ok)).lower()])
                + "\n"
            )
    plt = _plot_setup()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    rows = np.array([r[:3] for r in chk.rows], dtype=float)
    positive = rows[:, 1] > 0
    ax.semilogy(rows[positive, 0], rows[positive, 1], "o-", label="genI")
    ax.semilogy(rows[:, 0], rows[:, 2], "--", label="bound e^{-2 lambda1 t}")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, os.path.join(out, "decay.svg"))
    plt.close(fig)
    write_manifest(
        os.path.join(out, "manifest.txt"),
        cfg,
        {
            "lambda1": _fmt(a1.lambda1),
            "cells": cfg.cells,
            "a1_pts": cfg.a1_pts,
            "dt": _fmt(cfg.dt),
        },
    )
    status = "PASS" if chk.passed else "FAIL"
    print(f"[{status}] decay bound: margin = {_fmt(chk.margin)}")
    return EXIT_OK if chk.passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------


def make_parser():
    parser = argparse.ArgumentParser(
        prog="hypodecay",
        description=__doc__,
        epilog=_CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("validate", "check admissibility conditions and print the spectrum"),
        ("certify", "construct a decay certificate for the drift"),
        ("simulate", "run a trajectory and write CSV/SVG outputs"),
        ("verify", "run a trajectory plus all enabled theorem checks"),
        ("appendix-a", "certify a scalar-diffusion problem and verify decay"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="scenario config path")
        p.add_argument("--out", default=None, help="output directory [config 'out']")
        p.add_argument(
            "--grid-degree", type=int, default=None,
            help="override quadrature points per axis",
        )
        p.add_argument(
            "--nu", type=float, default=None,
            help="certificate slack (certify subcommand)",
        )
        p.add_argument(
            "--seedless", action="store_true",
            help="accepted for CLI-contract compatibility; every computation "
            "here is deterministic already",
        )
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        if args.grid_degree is not None:
            cfg.grid_degree = args.grid_degree
        out_dir = args.out or cfg.out
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "certify":
            return cmd_certify(cfg, nu_override=args.nu)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "verify":
            return cmd_verify(cfg, out_dir)
        if args.command == "appendix-a":
            return cmd_appendix(cfg, out_dir)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnderResolvedError as exc:
        print(f"under-resolved: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except HypodecayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
