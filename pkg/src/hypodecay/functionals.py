"""Entropy and Fisher-information functionals over a Gauss-Hermite grid.

The quadrature weight is the standard Gaussian (normalized frame), so every
functional here is an integral of "something(nodes) * f_inf" and is computed
as a plain weighted sum. All evaluations are pure; the grid is reused across
times and functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e as heme

from .errors import (
    DivergentMomentError,
    DomainError,
    InconsistencyError,
    ParameterError,
    SingularIntegrandError,
)

# Convex-Sobolev constant of the standard Gaussian for the whole p-family:
# Hess(-log f_inf) = I, so the Bakry-Emery criterion gives 1/2.
LOG_SOBOLEV_CONSTANT = 0.5

# psi''(f/f_inf) below this ratio is treated as a caller bug, not clipped.
RATIO_FLOOR = 1e-300


def default_degree(d):
    return 60 if d <= 2 else 30


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor Gauss-Hermite rule adapted to the weight e^{-|x|^2/2}.

    Integrates polynomials of (total) degree <= 2*degree - 1 against the
    standard Gaussian exactly; weights are normalized to sum to one.
    """

    d: int
    degree: int
    nodes: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)

    @classmethod
    def build(cls, d, degree=None):
        if degree is None:
            degree = default_degree(d)
        if d < 1 or degree < 1:
            raise ParameterError("need d >= 1 and degree >= 1")
        if d > 3:
            raise ParameterError("tensor quadrature is desk-scale: d <= 3")
        x, w = heme.hermegauss(degree)
        w = w / math.sqrt(2.0 * math.pi)
        grids = np.meshgrid(*([x] * d), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        weights = np.ones(nodes.shape[0])
        for i in range(d):
            weights = weights * w[
                np.meshgrid(*([np.arange(degree)] * d), indexing="ij")[i].ravel()
            ]
        return cls(d=d, degree=degree, nodes=nodes, weights=weights)

    def integrate(self, values):
        """Integral of values(x) against f_inf, values sampled on the nodes."""
        return float(self.weights @ np.asarray(values))

    def refined(self, factor=2):
        return QuadratureGrid.build(self.d, self.degree * factor)


class PEntropy:
    """Generating function of the p-entropy family, 1 <= p <= 2.

    p = 1 is the Boltzmann member y log y - y + 1, included exactly (not as a
    numerical limit). The admissibility inequality (psi''')^2 <= psi'' psi''''/2
    reduces to p >= 1 for this family.
    """

    def __init__(self, p):
        p = float(p)
        if not (1.0 <= p <= 2.0):
            raise ParameterError(f"p must lie in [1, 2], got {p}")
        self.p = p

    def psi(self, y):
        y = np.asarray(y, dtype=float)
        if self.p == 1.0:
            out = np.where(y > 0.0, y * np.log(np.maximum(y, RATIO_FLOOR)) - y + 1.0, 1.0)
            return np.where(y == 0.0, 1.0, out)
        p = self.p
        return (np.power(y, p) - p * (y - 1.0) - 1.0) / (p * (p - 1.0))

    def d2(self, y):
        """psi''(y) = y^(p-2); constant one for p = 2."""
        y = np.asarray(y, dtype=float)
        if self.p == 2.0:
            return np.ones_like(y)
        return np.power(y, self.p - 2.0)

    def admissibility_margin(self, y):
        """psi'' psi''''/2 - (psi''')^2, >= 0 on the family's domain."""
        y = np.asarray(y, dtype=float)
        p = self.p
        if p == 1.0:
            d2, d3, d4 = 1.0 / y, -1.0 / y**2, 2.0 / y**3
        else:
            d2 = np.power(y, p - 2.0)
            d3 = (p - 2.0) * np.power(y, p - 3.0)
            d4 = (p - 2.0) * (p - 3.0) * np.power(y, p - 4.0)
        return 0.5 * d2 * d4 - d3**2


def _ratio_on_grid(state, grid, force_abs=False, strict=False, tolerance=1e-12):
    r = state.ratio(grid.nodes)
    if force_abs:
        return np.abs(r)
    if strict:
        worst = r.min()
        if worst < -tolerance:
            raise DomainError(
                f"density is negative ({worst:.3e}) at a quadrature node"
            )
        return np.maximum(r, 0.0)
    return r


def entropy_p(state, p, grid, force_abs=False, tolerance=1e-12):
    """Relative p-entropy against the equilibrium, general-mass convention.

    The integrand psi_p(f/f_inf) is non-negative, so the value is too (up to
    node-level roundoff). force_abs evaluates e_p(|f| | f_inf), the convention
    used for signed states. p = 2 accepts signed states directly (psi_2 is a
    plain quadratic); for p < 2 a negative density beyond tolerance raises.
    """
    fam = PEntropy(p)
    strict = (not force_abs) and fam.p < 2.0
    r = _ratio_on_grid(state, grid, force_abs=force_abs, strict=strict,
                       tolerance=tolerance)
    return grid.integrate(fam.psi(r))


def _check_positive_ratio(r, p, grid):
    if p < 2.0:
        bad = np.nonzero(r < RATIO_FLOOR)[0]
        if bad.size:
            node = grid.nodes[bad[0]]
            raise SingularIntegrandError(
                f"f/f_inf = {r[bad[0]]:.3e} at node {node} makes psi_p'' "
                f"singular for p = {p}",
                node=node,
            )


def fisher_p(state, p, P, grid):
    """Modified Fisher information with weight matrix P (psi_p'' weighting)."""
    P = np.asarray(P, dtype=float)
    r = state.ratio(grid.nodes)
    _check_positive_ratio(r, float(p), grid)
    v = state.ratio_gradient(grid.nodes)
    quad = np.einsum("ni,ij,nj->n", v, P, v)
    return grid.integrate(PEntropy(p).d2(r) * quad)


def generalized_fisher(f_state, g_state, p, P, grid):
    """Two-argument Fisher information: psi'' on f/f_inf, gradient on g/f_inf.

    f must be positive on the grid when p < 2; g may be signed.
    """
    P = np.asarray(P, dtype=float)
    rf = f_state.ratio(grid.nodes)
    _check_positive_ratio(rf, float(p), grid)
    v = g_state.ratio_gradient(grid.nodes)
    quad = np.einsum("ni,ij,nj->n", v, P, v)
    return grid.integrate(PEntropy(p).d2(rf) * quad)


def weighted_l2_norm_sq(state, grid):
    """||state||^2 in L^2(f_inf^{-1}), i.e. the integral of ratio^2 * f_inf."""
    r = state.ratio(grid.nodes)
    return grid.integrate(r * r)


@dataclass(frozen=True)
class MomentResult:
    """Exponential moment int e^{eps|x|^2} |f| dx with its entropy bound."""

    value: float
    eps: float
    bound: float = None  # None when eps does not map back into the p-family
    bound_p: float = None
    within_bound: bool = None
    unit_mass: bool = False


def _mixture_moment_closed_form(state, eps):
    total = 0.0
    d = state.d
    for w, m, S in state.components():
        A = np.eye(d) - 2.0 * eps * S
        eig = np.linalg.eigvalsh(0.5 * (A + A.T))
        if eig.min() <= 1e-12:
            raise DivergentMomentError(
                f"exponential moment diverges: component covariance violates "
                f"I - 2 eps Sigma > 0 at eps = {eps}"
            )
        x = np.linalg.solve(A, m)
        total += abs(w) * math.exp(eps * float(m @ x)) / math.sqrt(
            float(np.linalg.det(A))
        )
    return total


def entropy_moment_bound(e_p_abs, p, d, unit_mass):
    """Closed-form bound on the exponential moment at eps = (p-1)/(2(2p-1))."""
    if not 1.0 < p <= 2.0:
        raise ParameterError("bound defined for p in (1, 2]")
    base = ((2 * p - 1) / (p - 1)) ** (d * (p - 1) / (2 * p))
    body = (p * (p - 1) * e_p_abs + 1.0) ** (1.0 / p)
    if unit_mass:
        return base * body
    return base * (2 * p) ** (1.0 / (p - 1)) * body


def exponential_moment(state, eps, grid):
    """int e^{eps |x|^2} |f(x)| dx, closed form where possible.

    Non-negative Gaussian mixtures use the analytic Gaussian-moment formula;
    everything else integrates |ratio| e^{eps|x|^2} on the grid (requires
    eps < 1/2 for integrability). When eps equals (p-1)/(2(2p-1)) for some
    p in (1, 2], the matching entropy bound and the comparison outcome are
    attached to the result.
    """
    eps = float(eps)
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    if eps >= 0.5 - 1e-9:
        raise DivergentMomentError("eps must stay below 1/2 for integrability")
    from .propagator import GaussianMixture  # local import avoids a cycle

    if isinstance(state, GaussianMixture) and np.all(state.weights >= 0):
        value = _mixture_moment_closed_form(state, eps)
    else:
        r = np.abs(state.ratio(grid.nodes))
        boost = np.exp(eps * np.sum(grid.nodes**2, axis=1))
        value = grid.integrate(r * boost)

    bound = bound_p = within = None
    unit_mass = abs(state.mass - 1.0) <= 1e-9
    if 0.0 < eps <= 1.0 / 6.0 + 1e-15:
        p = (1.0 - 2.0 * eps) / (1.0 - 4.0 * eps)
        if 1.0 < p <= 2.0 + 1e-12:
            p = min(p, 2.0)
            e_abs = entropy_p(state, p, grid, force_abs=True)
            bound = entropy_moment_bound(e_abs, p, state.d, unit_mass)
            bound_p = p
            within = bool(value <= bound * (1.0 + 1e-9) + 1e-12)
    return MomentResult(
        value=float(value), eps=eps, bound=bound, bound_p=bound_p,
        within_bound=within, unit_mass=unit_mass,
    )


def log_sobolev_ratio(state, p, grid, tolerance=1e-14):
    """e_p / I_p^I; 0/0 is defined as 0, and must not exceed 1/2 + 1e-6."""
    e = entropy_p(state, p, grid)
    fisher = fisher_p(state, p, np.eye(grid.d), grid)
    if fisher <= tolerance:
        if e > 1e-10:
            raise InconsistencyError(
                f"vanishing Fisher information with entropy {e:.3e}"
            )
        return 0.0
    return e / fisher


def convergence_check(evaluate, grid, rel_tol=1e-6):
    """Doubling test: evaluate(grid) vs evaluate(grid.refined()).

    Returns (value, refined_value, relative_change); the caller decides
    whether the run counts as under-resolved.
    """
    v = evaluate(grid)
    v2 = evaluate(grid.refined())
    scale = max(abs(v), abs(v2), 1e-30)
    return v, v2, abs(v - v2) / scale
