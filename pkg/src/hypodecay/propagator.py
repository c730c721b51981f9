"""Closed-form evolution of solution states in the normalized frame.

Two exact representations are carried through the whole package:

* Gaussian mixtures, evolved by the explicit transition kernel
  (mean -> E(t) mean, covariance -> W(t) + E(t) cov E(t)^T with
  E(t) = e^{-Ct}, W(t) = K - E(t) K E(t)^T);
* Hermite expansions q(x) f_inf(x), evolved by the exact finite generator
  matrix on polynomial coefficients.

Everything here assumes the normalized frame (equilibrium = standard
Gaussian); Gaussian data in original coordinates is pushed through the
normalization transform first. Pointwise density and ratio-gradient
evaluation is analytic for both representations - no finite differencing
anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e as heme
from scipy import linalg as sla

from .errors import (
    CapacityError,
    DimensionError,
    InvalidInputError,
    ParameterError,
)
from .matrix_core import NormalizedSystem

_LOG_2PI = math.log(2.0 * math.pi)

MAX_COEFFICIENTS = 20000


@dataclass(frozen=True)
class Equilibrium:
    """Gaussian equilibrium density c_K exp(-x^T K^{-1} x / 2)."""

    K_inv: np.ndarray
    log_norm: float

    @classmethod
    def standard(cls, d):
        return cls(K_inv=np.eye(d), log_norm=-0.5 * d * _LOG_2PI)

    def log_density(self, X):
        X = _as_points(X, self.K_inv.shape[0])
        quad = np.einsum("ni,ij,nj->n", X, self.K_inv, X)
        return self.log_norm - 0.5 * quad

    def density(self, X):
        return np.exp(self.log_density(X))


def _as_points(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        if X.shape[0] != d:
            raise DimensionError(f"point has dimension {X.shape[0]}, expected {d}")
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionError(f"points must have shape (N, {d})")
    return X


def _log_gaussian(X, mean, cov_chol, log_det):
    z = sla.solve_triangular(cov_chol, (X - mean).T, lower=True)
    quad = np.sum(z * z, axis=0)
    d = X.shape[1]
    return -0.5 * (quad + log_det + d * _LOG_2PI)


class GaussianMixture:
    """Weighted sum of Gaussian components; weights may be signed (g slot)."""

    def __init__(self, weights, means, covariances):
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        covariances = np.asarray(covariances, dtype=float)
        if covariances.ndim == 2:
            covariances = covariances[None, :, :]
        self.covariances = covariances
        k = self.weights.shape[0]
        if self.means.shape[0] != k or self.covariances.shape[0] != k:
            raise DimensionError("weights, means, covariances disagree in length")
        if not (
            np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.means))
            and np.all(np.isfinite(self.covariances))
        ):
            raise InvalidInputError("mixture contains NaN or Inf entries")
        self.d = self.means.shape[1]
        self._chols = []
        self._log_dets = []
        for S in self.covariances:
            if np.linalg.norm(S - S.T) > 1e-12 * max(1.0, np.linalg.norm(S)):
                raise InvalidInputError("component covariance is not symmetric")
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError as exc:
                raise InvalidInputError(
                    "component covariance is not positive definite"
                ) from exc
            self._chols.append(L)
            self._log_dets.append(2.0 * float(np.sum(np.log(np.diag(L)))))

    @classmethod
    def single(cls, mean, cov, weight=1.0):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls([weight], [mean], [np.asarray(cov, dtype=float)])

    @property
    def mass(self):
        return float(np.sum(self.weights))

    def components(self):
        return list(zip(self.weights, self.means, self.covariances))

    def density(self, X):
        X = _as_points(X, self.d)
        out = np.zeros(X.shape[0])
        for w, m, L, ld in zip(self.weights, self.means, self._chols, self._log_dets):
            out += w * np.exp(_log_gaussian(X, m, L, ld))
        return out

    def ratio(self, X):
        """f / f_inf against the standard Gaussian (normalized frame)."""
        X = _as_points(X, self.d)
        log_finf = -0.5 * np.sum(X * X, axis=1) - 0.5 * self.d * _LOG_2PI
        out = np.zeros(X.shape[0])
        for w, m, L, ld in zip(self.weights, self.means, self._chols, self._log_dets):
            out += w * np.exp(_log_gaussian(X, m, L, ld) - log_finf)
        return out

    def ratio_gradient(self, X):
        """Gradient of f / f_inf: (grad f + x f) / f_inf, componentwise exact."""
        X = _as_points(X, self.d)
        log_finf = -0.5 * np.sum(X * X, axis=1) - 0.5 * self.d * _LOG_2PI
        out = np.zeros_like(X)
        for w, m, L, ld in zip(self.weights, self.means, self._chols, self._log_dets):
            r = w * np.exp(_log_gaussian(X, m, L, ld) - log_finf)
            grad_log = -sla.cho_solve((L, True), (X - m).T).T  # grad log N
            out += r[:, None] * (grad_log + X)
        return out


def multi_index_basis(d, max_degree):
    """All exponent tuples with total degree <= max_degree, by degree then lex."""
    if max_degree < 0:
        raise ParameterError("max_degree must be >= 0")
    idx = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            idx.append(tuple(prefix + [remaining]))
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    out = []
    for m in range(max_degree + 1):
        idx.clear()
        rec([], m, d)
        out.extend(sorted(idx, reverse=True))
    return out


def _hermite_tables(x, max_degree):
    """Rows k = 0..max_degree of He_k(x)/sqrt(k!) for a 1-D array x."""
    x = np.asarray(x, dtype=float)
    V = np.empty((max_degree + 1, x.shape[0]))
    V[0] = 1.0
    if max_degree >= 1:
        V[1] = x
    for k in range(1, max_degree):
        V[k + 1] = x * V[k] - k * V[k - 1]
    for k in range(2, max_degree + 1):
        V[k] /= math.sqrt(math.factorial(k))
    return V


class HermiteExpansion:
    """Polynomial-times-equilibrium state sum_a c_a He~_a(x) f_inf(x).

    He~_a is the product of normalized probabilists' Hermite polynomials, an
    orthonormal family in L^2(f_inf^{-1}) against the standard Gaussian. The
    degree-0 coefficient is the total mass.
    """

    def __init__(self, d, max_degree, coefficients):
        if max_degree < 0:
            raise ParameterError("max_degree must be >= 0")
        n_coeffs = math.comb(max_degree + d, d)
        if n_coeffs > MAX_COEFFICIENTS:
            raise CapacityError(
                f"degree {max_degree} in dimension {d} needs {n_coeffs} "
                f"coefficients (budget {MAX_COEFFICIENTS})"
            )
        self.d = d
        self.max_degree = max_degree
        self.coefficients = {}
        for alpha, c in dict(coefficients).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != d or min(alpha) < 0:
                raise InvalidInputError(f"bad multi-index {alpha}")
            if sum(alpha) > max_degree:
                raise InvalidInputError(
                    f"multi-index {alpha} exceeds max_degree {max_degree}"
                )
            if not np.isfinite(c):
                raise InvalidInputError("coefficient is not finite")
            if c != 0.0:
                self.coefficients[alpha] = float(c)

    @classmethod
    def from_vector(cls, d, max_degree, vector, basis=None):
        basis = basis or multi_index_basis(d, max_degree)
        return cls(d, max_degree, dict(zip(basis, vector)))

    def vector(self, basis=None):
        basis = basis or multi_index_basis(self.d, self.max_degree)
        return np.array([self.coefficients.get(a, 0.0) for a in basis])

    @property
    def mass(self):
        return self.coefficients.get((0,) * self.d, 0.0)

    def ratio(self, X):
        X = _as_points(X, self.d)
        tables = [_hermite_tables(X[:, i], self.max_degree) for i in range(self.d)]
        out = np.zeros(X.shape[0])
        for alpha, c in self.coefficients.items():
            term = np.full(X.shape[0], c)
            for i, a in enumerate(alpha):
                if a:
                    term = term * tables[i][a]
            out += term
        return out

    def density(self, X):
        X = _as_points(X, self.d)
        log_finf = -0.5 * np.sum(X * X, axis=1) - 0.5 * self.d * _LOG_2PI
        return self.ratio(X) * np.exp(log_finf)

    def ratio_gradient(self, X):
        X = _as_points(X, self.d)
        tables = [_hermite_tables(X[:, i], self.max_degree) for i in range(self.d)]
        out = np.zeros_like(X)
        for alpha, c in self.coefficients.items():
            for i, a in enumerate(alpha):
                if a == 0:
                    continue
                term = np.full(X.shape[0], c * math.sqrt(a))
                for j, b in enumerate(alpha):
                    k = b - 1 if j == i else b
                    if k:
                        term = term * tables[j][k]
                out[:, i] += term
        return out


class SubtractedState:
    """Lazily evaluated difference minuend - subtrahend of two states."""

    def __init__(self, minuend, subtrahend):
        if minuend.d != subtrahend.d:
            raise DimensionError("states live in different dimensions")
        self.minuend = minuend
        self.subtrahend = subtrahend
        self.d = minuend.d

    @property
    def mass(self):
        return self.minuend.mass - self.subtrahend.mass

    def density(self, X):
        return self.minuend.density(X) - self.subtrahend.density(X)

    def ratio(self, X):
        return self.minuend.ratio(X) - self.subtrahend.ratio(X)

    def ratio_gradient(self, X):
        return self.minuend.ratio_gradient(X) - self.subtrahend.ratio_gradient(X)


@dataclass(frozen=True)
class PropagatorCache:
    """Frozen (t, e^{-Ct}, W(t)) triple shared by per-time evaluations."""

    t: float
    E: np.ndarray
    W: np.ndarray


def transition_covariance(C, t, K=None):
    """Covariance W(t) of the transition kernel, in closed form.

    W(t) = K - e^{-Ct} K e^{-C^T t}; differentiating reproduces the defining
    integral 2 int_0^t e^{-Cs} D e^{-C^T s} ds via the Lyapunov identity.
    """
    if t < 0:
        raise ParameterError("t must be >= 0")
    C = np.asarray(C, dtype=float)
    d = C.shape[0]
    if K is None:
        K = np.eye(d)
    E = sla.expm(-C * float(t))
    W = K - E @ K @ E.T
    return 0.5 * (W + W.T)


def propagator_cache(C, t, K=None):
    C = np.asarray(C, dtype=float)
    if t < 0:
        raise ParameterError("t must be >= 0")
    E = sla.expm(-C * float(t))
    d = C.shape[0]
    if K is None:
        K = np.eye(d)
    W = K - E @ K @ E.T
    return PropagatorCache(t=float(t), E=E, W=0.5 * (W + W.T))


def evolve_mixture(mixture, C, t, K=None, cache=None):
    """Exact mixture-to-mixture evolution; weights (masses) are unchanged."""
    if cache is None:
        cache = propagator_cache(C, t, K)
    E, W = cache.E, cache.W
    means = mixture.means @ E.T
    covs = np.array([W + E @ S @ E.T for S in mixture.covariances])
    covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
    return GaussianMixture(mixture.weights.copy(), means, covs)


# ---------------------------------------------------------------------------
# Generator matrix on Hermite coefficients
# ---------------------------------------------------------------------------


def _herm_to_mono(max_degree):
    """Matrix H[k, j] = x^j coefficient of He_k(x)/sqrt(k!)."""
    H = np.zeros((max_degree + 1, max_degree + 1))
    for k in range(max_degree + 1):
        e = np.zeros(k + 1)
        e[k] = 1.0
        H[k, : k + 1] = heme.herme2poly(e) / math.sqrt(math.factorial(k))
    return H


def _mono_to_herm(max_degree):
    """Matrix M[k, j]: normalized Hermite coefficients of the monomial x^j."""
    M = np.zeros((max_degree + 1, max_degree + 1))
    for j in range(max_degree + 1):
        e = np.zeros(j + 1)
        e[j] = 1.0
        c = heme.poly2herme(e)
        for k in range(c.shape[0]):
            M[k, j] = c[k] * math.sqrt(math.factorial(k))
    return M


def _tensor_axis_apply(T, M, axis):
    return np.moveaxis(np.tensordot(M, T, axes=([1], [axis])), 0, axis)


def _diff_axis(T, axis):
    """d/dx along one axis of a dense monomial-coefficient tensor."""
    n = T.shape[axis]
    D = np.zeros((n, n))
    for j in range(1, n):
        D[j - 1, j] = j
    return _tensor_axis_apply(T, D, axis)


def _shift_up_axis(T, axis):
    """Multiply by x along one axis (degree cap: top row drops, unused here)."""
    n = T.shape[axis]
    S = np.zeros((n, n))
    for j in range(n - 1):
        S[j + 1, j] = 1.0
    return _tensor_axis_apply(T, S, axis)


@dataclass(frozen=True)
class GeneratorMatrix:
    """Finite matrix of the drift-diffusion generator on Hermite coefficients.

    Column alpha holds the expansion of L(He~_alpha f_inf); in the normalized
    frame the matrix is block-diagonal in total degree (each degree layer is
    flow-invariant) and the degree-1 block is exactly minus the drift matrix.
    """

    matrix: np.ndarray
    basis: tuple
    max_degree: int
    d: int
    degree_offsets: tuple = field(default=None)

    def block(self, m):
        """Square sub-matrix coupling the degree-m layer to itself."""
        sel = [i for i, a in enumerate(self.basis) if sum(a) == m]
        return self.matrix[np.ix_(sel, sel)]


def build_generator_matrix(norm_sys: NormalizedSystem, max_degree):
    """Exact generator matrix on the Hermite basis up to total degree M.

    Each basis polynomial q is mapped through tr(D Hess q) - x^T C grad q by
    integer-exponent monomial algebra and re-expanded; no numerical
    differentiation is involved, so block spectra are exact up to re-expansion
    roundoff.
    """
    D = norm_sys.D_tilde
    C = norm_sys.C_tilde
    d = norm_sys.d
    sym_gap = np.linalg.norm(0.5 * (C + C.T) - D)
    if sym_gap > 1e-6 * max(1.0, np.linalg.norm(C)):
        raise InvalidInputError(
            "generator requires the normalized frame (sym part of drift must "
            "equal the diffusion matrix)"
        )
    basis = multi_index_basis(d, max_degree)
    if len(basis) > MAX_COEFFICIENTS:
        raise CapacityError(
            f"degree {max_degree} in dimension {d} exceeds coefficient budget"
        )
    pos = {a: i for i, a in enumerate(basis)}
    H2M = _herm_to_mono(max_degree)
    M2H = _mono_to_herm(max_degree)
    shape = (max_degree + 1,) * d
    G = np.zeros((len(basis), len(basis)))
    for col, alpha in enumerate(basis):
        # monomial tensor of the basis polynomial He~_alpha: outer product of
        # the per-axis coefficient vectors
        acc = H2M[alpha[0], : max_degree + 1]
        for a in alpha[1:]:
            acc = np.multiply.outer(acc, H2M[a, : max_degree + 1])
        T = acc.reshape(shape)
        # apply q -> tr(D Hess q) - x^T C grad q
        out = np.zeros(shape)
        grads = [_diff_axis(T, i) for i in range(d)]
        for i in range(d):
            for j in range(d):
                if D[i, j] != 0.0:
                    out += D[i, j] * _diff_axis(grads[j], i)
                if C[i, j] != 0.0:
                    out -= C[i, j] * _shift_up_axis(grads[j], i)
        # re-expand in the Hermite basis
        for axis in range(d):
            out = _tensor_axis_apply(out, M2H, axis)
        nz = np.argwhere(np.abs(out) != 0.0)
        for idx in nz:
            beta = tuple(int(v) for v in idx)
            if sum(beta) <= max_degree:
                G[pos[beta], col] += out[tuple(idx)]
    offsets = tuple(
        sum(1 for a in basis if sum(a) < m) for m in range(max_degree + 2)
    )
    return GeneratorMatrix(
        matrix=G, basis=tuple(basis), max_degree=max_degree, d=d,
        degree_offsets=offsets,
    )


def evolve_hermite(expansion, norm_sys, t, generator=None):
    """Advance Hermite coefficients by the exact matrix exponential e^{Gt}."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    if generator is None:
        generator = build_generator_matrix(norm_sys, expansion.max_degree)
    if generator.max_degree < expansion.max_degree:
        raise ParameterError("generator degree is smaller than the expansion's")
    basis = list(generator.basis)
    c0 = np.array([expansion.coefficients.get(a, 0.0) for a in basis])
    ct = sla.expm(generator.matrix * float(t)) @ c0
    coeffs = {a: v for a, v in zip(basis, ct)}
    return HermiteExpansion(expansion.d, generator.max_degree, coeffs)


def evolve_state(state, norm_sys, t, generator=None):
    """Evolve any supported state representation by time t (exactly)."""
    if isinstance(state, GaussianMixture):
        return evolve_mixture(state, norm_sys.C_tilde, t)
    if isinstance(state, HermiteExpansion):
        return evolve_hermite(state, norm_sys, t, generator=generator)
    if isinstance(state, SubtractedState):
        return SubtractedState(
            evolve_state(state.minuend, norm_sys, t, generator),
            evolve_state(state.subtrahend, norm_sys, t, generator),
        )
    raise InvalidInputError(f"cannot evolve state of type {type(state).__name__}")


def evaluate_density(state, x):
    """Pointwise density; accepts a single point or an (N, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = state.density(x)
    return float(out[0]) if single else out


def evaluate_ratio_gradient(state, x):
    """Pointwise gradient of state/f_inf; exact for both representations."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = state.ratio_gradient(x)
    return out[0] if single else out
