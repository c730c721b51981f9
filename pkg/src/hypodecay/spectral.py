"""Projection onto the slowest (degree-1) invariant layer and the
f = f1 + f2 decomposition, with closed-form evolution of the layer.

The functions x_i f_inf form an orthonormal basis of the degree-1 layer in
L^2(f_inf^{-1}); the generator restricted to that layer is minus the drift
matrix, so the coefficient vector obeys a(t) = e^{-Ct} a(0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import InvalidInputError, ParameterError, SpectralConsistencyError
from .propagator import (
    GaussianMixture,
    GeneratorMatrix,
    HermiteExpansion,
    SubtractedState,
    multi_index_basis,
)


@dataclass(frozen=True)
class V1Coefficients:
    """Coefficients a_i = <f, x_i f_inf> = int x_i f(x) dx."""

    a: np.ndarray

    @property
    def norm(self):
        """Equals ||f1|| in L^2(f_inf^{-1}) by orthonormality of the basis."""
        return float(np.linalg.norm(self.a))


def project_v1(state, grid=None):
    """First-moment vector of the state, in closed form per representation.

    Mixtures: weighted means. Hermite expansions: coefficient read-off.
    Differences: recurse. The grid argument is accepted for interface
    symmetry but never needed (both representations have exact moments).
    """
    if isinstance(state, GaussianMixture):
        a = state.weights @ state.means
    elif isinstance(state, HermiteExpansion):
        a = np.zeros(state.d)
        for i in range(state.d):
            e_i = tuple(1 if j == i else 0 for j in range(state.d))
            a[i] = state.coefficients.get(e_i, 0.0)
    elif isinstance(state, SubtractedState):
        a = project_v1(state.minuend).a - project_v1(state.subtrahend).a
    else:
        raise InvalidInputError(f"cannot project state of type {type(state).__name__}")
    return V1Coefficients(a=np.asarray(a, dtype=float))


def degree1_expansion(coeffs: V1Coefficients, d=None):
    """The state sum_i a_i x_i f_inf as a Hermite expansion (mass zero)."""
    a = coeffs.a
    d = d or a.shape[0]
    terms = {}
    for i, v in enumerate(a):
        e_i = tuple(1 if j == i else 0 for j in range(d))
        terms[e_i] = float(v)
    return HermiteExpansion(d, 1, terms)


@dataclass(frozen=True)
class Decomposition:
    """f = f1 + f2 with f1 the degree-1 layer part and f2 evaluated lazily.

    f2 is kept as (f minus f1), evaluable pointwise, rather than re-fitted;
    this keeps projection truncation error out of the two-argument Fisher
    functionals downstream.
    """

    f1: HermiteExpansion
    f2: SubtractedState
    coefficients: V1Coefficients


def decompose(state, grid=None):
    coeffs = project_v1(state, grid)
    f1 = degree1_expansion(coeffs, d=state.d)
    return Decomposition(f1=f1, f2=SubtractedState(state, f1), coefficients=coeffs)


def evolve_v1(coeffs: V1Coefficients, C, t):
    """a(t) = e^{-Ct} a(0)."""
    if t < 0:
        raise ParameterError("t must be >= 0")
    C = np.asarray(C, dtype=float)
    return V1Coefficients(a=sla.expm(-C * float(t)) @ coeffs.a)


def predicted_block_spectrum(drift_eigenvalues, m):
    """Multiset {-sum_i alpha_i lambda_i : |alpha| = m} with multiplicity.

    drift_eigenvalues must list the d eigenvalues with multiplicity
    (clustered values for defective drifts).
    """
    lam = [complex(v) for v in drift_eigenvalues]
    d = len(lam)
    out = []
    for alpha in multi_index_basis(d, m):
        if sum(alpha) == m:
            out.append(-sum(a * l for a, l in zip(alpha, lam)))
    return out


@dataclass(frozen=True)
class BlockSpectrumCheck:
    degree: int
    predicted: tuple
    power_sum_error: float
    computed_eigenvalues: tuple
    passed: bool


def check_generator_spectrum(generator: GeneratorMatrix, drift_eigenvalues,
                             max_degree=None, tol=1e-8, raise_on_failure=False):
    """Certify each degree block's spectrum against the predicted multiset.

    Multiset equality is checked through Newton power sums tr(B^k) for
    k = 1..dim(B): power sums determine the characteristic polynomial, and
    traces stay well-conditioned where direct eigenvalues of a defective
    block lose half the digits. Eigenvalues are attached for diagnostics.
    """
    if max_degree is None:
        max_degree = generator.max_degree
    results = []
    for m in range(1, max_degree + 1):
        B = generator.block(m)
        predicted = predicted_block_spectrum(drift_eigenvalues, m)
        if len(predicted) != B.shape[0]:
            raise SpectralConsistencyError(
                f"degree-{m} block has size {B.shape[0]}, predicted "
                f"{len(predicted)} eigenvalues"
            )
        err = 0.0
        Bk = np.eye(B.shape[0])
        for k in range(1, B.shape[0] + 1):
            Bk = Bk @ B
            ps_pred = sum(z**k for z in predicted)
            if abs(ps_pred.imag) > 1e-9 * max(1.0, abs(ps_pred.real)):
                raise SpectralConsistencyError(
                    "predicted multiset is not conjugate-symmetric"
                )
            scale = max(1.0, sum(abs(z) ** k for z in predicted))
            err = max(err, abs(np.trace(Bk) - ps_pred.real) / scale)
        eigs = np.sort_complex(np.linalg.eigvals(B))
        passed = err <= tol
        if not passed and raise_on_failure:
            raise SpectralConsistencyError(
                f"degree-{m} block spectrum off by {err:.3e}; computed "
                f"eigenvalues {eigs}"
            )
        results.append(
            BlockSpectrumCheck(
                degree=m,
                predicted=tuple(predicted),
                power_sum_error=float(err),
                computed_eigenvalues=tuple(eigs),
                passed=passed,
            )
        )
    return results


def drift_eigenvalue_list(spectral_data):
    """Clustered drift eigenvalues repeated by algebraic multiplicity."""
    out = []
    for cluster in spectral_data.eigenvalues:
        out.extend([cluster.value] * cluster.algebraic)
    return out
