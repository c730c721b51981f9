"""Plain-text scenario configs (key = value lines) and their parsing.

Matrices are written as semicolon-separated rows of comma-separated entries
(`C = 1,1; 0,1`). Initial data comes in three forms:

* ``f0 = mixture: w,m1..md,s11,s12,..; ...`` - weight, mean, covariance upper
  triangle per component, components separated by semicolons, interpreted in
  the original frame and pushed through the normalization transform;
* ``g0 = hermite: a1 .. ad coeff; ...`` - multi-index and coefficient of the
  polynomial-times-equilibrium basis, interpreted in the normalized frame;
* appendix mode: ``f0 = gaussian: mean, variance`` and
  ``g0 = poly_equilibrium: c0, c1, ...`` (polynomial in x times e^{-phi}).

Unknown keys are rejected with their line number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_KNOWN_KEYS = {
    "D", "C", "tolerance", "f0", "g0", "p", "p1", "p2", "P", "grid_degree",
    "hermite_degree", "t_max", "samples", "checks", "out", "nu", "eta", "eps",
    "phi", "diffusion", "domain", "cells", "a1_pts", "dt",
}

ALL_CHECKS = (
    "fisher_differential",
    "improved_decay",
    "interpolation",
    "lower_bound",
    "contractivity",
    "main_theorems",
    "log_sobolev",
    "entropy_monotone",
    "splitting",
)


@dataclass
class ScenarioConfig:
    """Fully resolved experiment description."""

    D: np.ndarray = None
    C: np.ndarray = None
    tolerance: float = 1e-9
    f0_spec: tuple = None  # ("mixture", components) / ("gaussian", ...) ...
    g0_spec: tuple = None
    p: float = 2.0
    p1: float = None
    p2: float = None
    P_mode: tuple = ("identity",)  # or ("certificate", nu)
    grid_degree: int = None
    hermite_degree: int = 8
    t_max: float = None
    samples: int = None  # 200 for trajectories, 11 for the appendix mode
    checks: tuple = ALL_CHECKS
    out: str = "out"
    nu: float = None
    eta: float = 0.5
    eps: float = 0.25
    # appendix mode
    phi_expr: str = None
    diffusion_expr: str = None
    domain: tuple = (-8.0, 8.0)
    cells: int = 2048
    a1_pts: int = 2001
    dt: float = 5e-4
    raw_text: str = field(default="", repr=False)

    @property
    def d(self):
        return self.C.shape[0] if self.C is not None else 1


def _parse_matrix(value, line):
    try:
        rows = [
            [float(x) for x in row.split(",") if x.strip() != ""]
            for row in value.split(";")
            if row.strip() != ""
        ]
    except ValueError as exc:
        raise ConfigError(f"malformed matrix entry: {exc}", line) from exc
    if not rows:
        raise ConfigError("empty matrix", line)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError("matrix rows have inconsistent lengths", line)
    return np.asarray(rows, dtype=float)


def _parse_float(value, line, name):
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{name} must be a number, got {value!r}", line) from exc


def _parse_int(value, line, name):
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {value!r}", line) from exc


def _parse_initial(value, line):
    head, _, body = value.partition(":")
    kind = head.strip().lower()
    body = body.strip()
    if kind == "mixture":
        comps = []
        for chunk in body.split(";"):
            if not chunk.strip():
                continue
            try:
                nums = [float(x) for x in chunk.split(",") if x.strip() != ""]
            except ValueError as exc:
                raise ConfigError(f"malformed mixture component: {exc}", line) from exc
            comps.append(nums)
        if not comps:
            raise ConfigError("mixture needs at least one component", line)
        return ("mixture", comps)
    if kind == "hermite":
        terms = []
        for chunk in body.split(";"):
            if not chunk.strip():
                continue
            parts = chunk.split()
            if len(parts) < 2:
                raise ConfigError(
                    "hermite term needs indices and a coefficient", line
                )
            try:
                alpha = tuple(int(v) for v in parts[:-1])
                coeff = float(parts[-1])
            except ValueError as exc:
                raise ConfigError(f"malformed hermite term: {exc}", line) from exc
            terms.append((alpha, coeff))
        if not terms:
            raise ConfigError("hermite data needs at least one term", line)
        return ("hermite", terms)
    if kind == "gaussian":
        try:
            nums = [float(x) for x in body.split(",") if x.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"malformed gaussian data: {exc}", line) from exc
        if len(nums) != 2 or nums[1] <= 0:
            raise ConfigError("gaussian data is mean, variance (> 0)", line)
        return ("gaussian", tuple(nums))
    if kind == "poly_equilibrium":
        try:
            nums = [float(x) for x in body.split(",") if x.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"malformed polynomial data: {exc}", line) from exc
        if not nums:
            raise ConfigError("polynomial needs at least one coefficient", line)
        return ("poly_equilibrium", tuple(nums))
    raise ConfigError(
        f"unknown initial-data form {head.strip()!r} (want mixture:, hermite:, "
        "gaussian: or poly_equilibrium:)",
        line,
    )


def _parse_P(value, line):
    v = value.strip().lower()
    if v == "identity":
        return ("identity",)
    m = re.fullmatch(r"certificate\(([^)]*)\)", v)
    if m:
        return ("certificate", _parse_float(m.group(1), line, "nu"))
    raise ConfigError(
        f"P must be 'identity' or 'certificate(nu)', got {value!r}", line
    )


def parse_config_text(text):
    cfg = ScenarioConfig(raw_text=text)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {raw!r}", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key == "D":
            cfg.D = _parse_matrix(value, lineno)
        elif key == "C":
            cfg.C = _parse_matrix(value, lineno)
        elif key == "tolerance":
            cfg.tolerance = _parse_float(value, lineno, "tolerance")
        elif key == "f0":
            cfg.f0_spec = _parse_initial(value, lineno)
        elif key == "g0":
            cfg.g0_spec = _parse_initial(value, lineno)
        elif key == "p":
            cfg.p = _parse_float(value, lineno, "p")
        elif key == "p1":
            cfg.p1 = _parse_float(value, lineno, "p1")
        elif key == "p2":
            cfg.p2 = _parse_float(value, lineno, "p2")
        elif key == "P":
            cfg.P_mode = _parse_P(value, lineno)
        elif key == "grid_degree":
            cfg.grid_degree = _parse_int(value, lineno, "grid_degree")
        elif key == "hermite_degree":
            cfg.hermite_degree = _parse_int(value, lineno, "hermite_degree")
        elif key == "t_max":
            cfg.t_max = _parse_float(value, lineno, "t_max")
        elif key == "samples":
            cfg.samples = _parse_int(value, lineno, "samples")
        elif key == "checks":
            names = tuple(
                c.strip() for c in value.split(",") if c.strip()
            )
            if names == ("all",):
                names = ALL_CHECKS
            unknown = [c for c in names if c not in ALL_CHECKS]
            if unknown:
                raise ConfigError(
                    f"unknown checks {unknown}; known: {', '.join(ALL_CHECKS)}",
                    lineno,
                )
            cfg.checks = names
        elif key == "out":
            cfg.out = value
        elif key == "nu":
            cfg.nu = _parse_float(value, lineno, "nu")
        elif key == "eta":
            cfg.eta = _parse_float(value, lineno, "eta")
        elif key == "eps":
            cfg.eps = _parse_float(value, lineno, "eps")
        elif key == "phi":
            cfg.phi_expr = value
        elif key == "diffusion":
            cfg.diffusion_expr = value
        elif key == "domain":
            parts = [p for p in value.split(",") if p.strip()]
            if len(parts) != 2:
                raise ConfigError("domain is 'lo, hi'", lineno)
            lo = _parse_float(parts[0], lineno, "domain lo")
            hi = _parse_float(parts[1], lineno, "domain hi")
            if hi <= lo:
                raise ConfigError("domain needs hi > lo", lineno)
            cfg.domain = (lo, hi)
        elif key == "cells":
            cfg.cells = _parse_int(value, lineno, "cells")
        elif key == "a1_pts":
            cfg.a1_pts = _parse_int(value, lineno, "a1_pts")
        elif key == "dt":
            cfg.dt = _parse_float(value, lineno, "dt")
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# Initial-data realisation
# ---------------------------------------------------------------------------


def mixture_from_spec(spec, d, norm_sys=None):
    """Build a GaussianMixture from config numbers; push to normalized frame."""
    from .propagator import GaussianMixture

    kind, comps = spec
    if kind != "mixture":
        raise ConfigError(f"expected mixture data, got {kind}")
    n_cov = d * (d + 1) // 2
    weights, means, covs = [], [], []
    for nums in comps:
        if len(nums) != 1 + d + n_cov:
            raise ConfigError(
                f"mixture component needs 1 + {d} + {n_cov} numbers for d={d}, "
                f"got {len(nums)}"
            )
        w = nums[0]
        m = np.asarray(nums[1 : 1 + d])
        S = np.zeros((d, d))
        k = 1 + d
        for i in range(d):
            for j in range(i, d):
                S[i, j] = S[j, i] = nums[k]
                k += 1
        if norm_sys is not None:
            m, S = norm_sys.push_mean_cov(m, S)
        weights.append(w)
        means.append(m)
        covs.append(S)
    return GaussianMixture(weights, means, covs)


def hermite_from_spec(spec, d, max_degree):
    from .propagator import HermiteExpansion

    kind, terms = spec
    if kind != "hermite":
        raise ConfigError(f"expected hermite data, got {kind}")
    coeffs = {}
    degree = 0
    for alpha, c in terms:
        if len(alpha) != d:
            raise ConfigError(
                f"hermite multi-index {alpha} has wrong length for d={d}"
            )
        degree = max(degree, sum(alpha))
        coeffs[alpha] = coeffs.get(alpha, 0.0) + c
    return HermiteExpansion(d, max(degree, max_degree), coeffs)


def state_from_spec(spec, d, norm_sys, hermite_degree):
    if spec is None:
        return None
    if spec[0] == "mixture":
        return mixture_from_spec(spec, d, norm_sys)
    if spec[0] == "hermite":
        return hermite_from_spec(spec, d, hermite_degree)
    raise ConfigError(f"initial-data form {spec[0]!r} is not valid here")


# ---------------------------------------------------------------------------
# Expression grammar for the appendix mode (variable x; +,-,*,/,^, exp, sin)
# ---------------------------------------------------------------------------

_EXPR_TOKEN_RE = re.compile(r"^[0-9xXeE+\-*/^().,\s]*$")
_EXPR_WORD_RE = re.compile(r"[A-Za-z_]+")
_ALLOWED_WORDS = {"x", "exp", "sin", "e", "E"}


def parse_scalar_expression(expr):
    """Parse a 1-D expression into (value, first, second) derivative callables.

    The grammar is deliberately tiny: +, -, *, /, ^, exp, sin and the
    variable x. Tokens outside the whitelist are rejected before the string
    reaches sympy, and differentiation is symbolic.
    """
    import sympy

    for word in _EXPR_WORD_RE.findall(expr):
        if word not in _ALLOWED_WORDS:
            raise ConfigError(f"symbol {word!r} is not in the expression grammar")
    residue = _EXPR_WORD_RE.sub("", expr)
    if not _EXPR_TOKEN_RE.match(residue):
        raise ConfigError(
            f"expression contains characters outside the grammar: {expr!r}"
        )
    x = sympy.Symbol("x", real=True)
    try:
        sym = sympy.sympify(
            expr.replace("^", "**"),
            locals={"x": x, "exp": sympy.exp, "sin": sympy.sin, "e": sympy.E,
                    "E": sympy.E},
        )
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc}") from exc
    d1 = sympy.diff(sym, x)
    d2 = sympy.diff(d1, x)

    def vectorize(e):
        f = sympy.lambdify(x, e, modules="numpy")

        def wrapped(values):
            values = np.asarray(values, dtype=float)
            out = f(values)
            return np.broadcast_to(np.asarray(out, dtype=float), values.shape).copy()

        return wrapped

    return vectorize(sym), vectorize(d1), vectorize(d2)


def scalar_problem_from_config(cfg):
    """ScalarDiffusionProblem for the appendix mode (1-D expressions)."""
    from .nonquadratic import ScalarDiffusionProblem

    if cfg.phi_expr is None or cfg.diffusion_expr is None:
        raise ConfigError("appendix mode needs both 'phi' and 'diffusion'")
    phi, dphi, d2phi = parse_scalar_expression(cfg.phi_expr)
    dif, ddif, d2dif = parse_scalar_expression(cfg.diffusion_expr)
    lo, hi = cfg.domain
    return ScalarDiffusionProblem(
        d=1,
        phi=lambda X: phi(X[:, 0]),
        grad_phi=lambda X: dphi(X[:, 0])[:, None],
        hess_phi=lambda X: d2phi(X[:, 0])[:, None, None],
        diffusion=lambda X: dif(X[:, 0]),
        grad_diffusion=lambda X: ddif(X[:, 0])[:, None],
        hess_diffusion=lambda X: d2dif(X[:, 0])[:, None, None],
        lo=lo,
        hi=hi,
    )


def line_data_from_spec(spec, phi):
    """Realise appendix-mode initial data as a callable on cell centers.

    gaussian: explicit normal density; poly_equilibrium: polynomial in x
    times e^{-phi(x)} (tails adapted to the problem's own equilibrium).
    """
    if spec[0] == "gaussian":
        mean, var = spec[1]

        def build(x):
            return (
                np.exp(-((x - mean) ** 2) / (2.0 * var))
                / np.sqrt(2.0 * np.pi * var)
            )

        return build
    if spec[0] == "poly_equilibrium":
        coeffs = spec[1]

        def build(x):
            poly = np.zeros_like(x)
            for k, c in enumerate(coeffs):
                poly = poly + c * x**k
            return poly * np.exp(-phi(x))

        return build
    raise ConfigError(f"initial-data form {spec[0]!r} is not valid here")
