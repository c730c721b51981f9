import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad

from hypodecay import functionals as fn
from hypodecay import propagator as pr
from hypodecay.errors import (
    DivergentMomentError,
    DomainError,
    ParameterError,
    SingularIntegrandError,
)


def gaussian(mean, cov=None, weight=1.0):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if cov is None:
        cov = np.eye(mean.shape[0])
    return pr.GaussianMixture.single(mean, cov, weight)


EQ2 = gaussian([0.0, 0.0])


# ---------------------------------------------------------------------------
# quadrature grid
# ---------------------------------------------------------------------------


def test_weights_normalized(grid1, grid2):
    assert abs(grid1.weights.sum() - 1.0) <= 1e-12
    assert abs(grid2.weights.sum() - 1.0) <= 1e-12


def gaussian_moment_1d(k):
    # E|X^k| for standard normal, even k: (k-1)!!
    if k % 2 == 1:
        return 0.0
    out = 1.0
    for j in range(k - 1, 0, -2):
        out *= j
    return out


@pytest.mark.parametrize("powers", [(4, 2), (6, 0), (0, 8), (3, 3), (10, 10)])
def test_polynomial_exactness(grid2, powers):
    i, j = powers
    vals = grid2.nodes[:, 0] ** i * grid2.nodes[:, 1] ** j
    expected = gaussian_moment_1d(i) * gaussian_moment_1d(j)
    got = grid2.integrate(vals)
    assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected))


def test_grid_rejects_bad_args():
    with pytest.raises(ParameterError):
        fn.QuadratureGrid.build(0, 10)
    with pytest.raises(ParameterError):
        fn.QuadratureGrid.build(2, 0)
    with pytest.raises(ParameterError):
        fn.QuadratureGrid.build(4, 10)


# ---------------------------------------------------------------------------
# generating family
# ---------------------------------------------------------------------------


def test_family_normalization_points():
    for p in (1.0, 1.3, 1.7, 2.0):
        fam = fn.PEntropy(p)
        assert fam.psi(1.0) == pytest.approx(0.0, abs=1e-15)
        y = np.array([0.3, 1.0, 2.5])
        assert np.all(fam.d2(y) > 0)


def test_family_rejects_out_of_range():
    with pytest.raises(ParameterError):
        fn.PEntropy(0.5)
    with pytest.raises(ParameterError):
        fn.PEntropy(2.5)


@pytest.mark.parametrize("p", [1.0, 1.2, 1.5, 1.8, 2.0])
def test_admissibility_inequality(p):
    # (psi''')^2 <= psi'' psi''''/2 for the whole family on a log grid;
    # both sides scale like y^{2p-6}, so the roundoff floor does too
    fam = fn.PEntropy(p)
    y = np.geomspace(1e-4, 1e4, 200)
    scale = np.maximum(y ** (2.0 * p - 6.0), 1e-300)
    assert np.all(fam.admissibility_margin(y) >= -1e-12 * scale)


# ---------------------------------------------------------------------------
# entropies against closed forms
# ---------------------------------------------------------------------------


def test_entropy_of_equilibrium_zero(grid2):
    for p in (1.0, 1.5, 2.0):
        assert abs(fn.entropy_p(EQ2, p, grid2)) <= 1e-12


@pytest.mark.parametrize("m", [0.25, 0.5, 1.0])
def test_entropy2_shifted_gaussian(grid2, m):
    # oracle: the squared-ratio integral of N(m e_1, I) is e^{|m|^2}
    f = gaussian([m, 0.0])
    expected = (math.exp(m * m) - 1.0) / 2.0
    assert fn.entropy_p(f, 2.0, grid2) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("m", [0.25, 0.5, 1.0])
def test_entropy1_shifted_gaussian(grid2, m):
    # oracle: KL divergence of two unit Gaussians at distance m is m^2/2
    f = gaussian([m, 0.0])
    assert fn.entropy_p(f, 1.0, grid2) == pytest.approx(m * m / 2.0, rel=1e-10)


def test_entropy2_against_independent_quadrature(grid2):
    # independent adaptive integration of psi_2(f/f_inf) f_inf over the plane
    m = 0.5
    f = gaussian([m, 0.0])

    def integrand(y, x):
        X = np.array([[x, y]])
        r = f.ratio(X)[0]
        finf = math.exp(-(x * x + y * y) / 2.0) / (2.0 * math.pi)
        return 0.5 * (r - 1.0) ** 2 * finf

    oracle, err = dblquad(integrand, -8, 8, -8, 8, epsabs=1e-11, epsrel=1e-11)
    assert fn.entropy_p(f, 2.0, grid2) == pytest.approx(oracle, abs=1e-8)


def test_entropy_general_mass_formula(grid2):
    # a mass-0.7 state: value matches the explicit general-mass expression
    f = gaussian([0.3, 0.0], weight=0.7)
    p = 1.5
    r = f.ratio(grid2.nodes)
    s_p = grid2.integrate(np.maximum(r, 0.0) ** p)
    s_1 = grid2.integrate(r)
    expected = (s_p - p * (s_1 - 1.0) - 1.0) / (p * (p - 1.0))
    assert fn.entropy_p(f, p, grid2) == pytest.approx(expected, rel=1e-12)
    assert fn.entropy_p(f, p, grid2) >= -1e-10


def test_entropy_negative_state_raises(grid2):
    g = pr.GaussianMixture(
        [1.0, -0.8], [[0.0, 0.0], [0.5, 0.0]], [np.eye(2), 0.5 * np.eye(2)]
    )
    with pytest.raises(DomainError):
        fn.entropy_p(g, 1.5, grid2)
    # |g| convention and p = 2 both work for signed states
    assert fn.entropy_p(g, 1.5, grid2, force_abs=True) >= 0.0
    assert np.isfinite(fn.entropy_p(g, 2.0, grid2))


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------


def test_fisher_of_equilibrium_zero(grid2):
    for p in (1.0, 1.5, 2.0):
        assert abs(fn.fisher_p(EQ2, p, np.eye(2), grid2)) <= 1e-12


@pytest.mark.parametrize("m", [0.25, 0.5, 1.0])
def test_fisher2_shifted_gaussian(grid2, m):
    f = gaussian([m, 0.0])
    expected = m * m * math.exp(m * m)
    assert fn.fisher_p(f, 2.0, np.eye(2), grid2) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("m", [0.25, 0.5, 1.0])
def test_fisher1_shifted_gaussian(grid2, m):
    f = gaussian([m, 0.0])
    assert fn.fisher_p(f, 1.0, np.eye(2), grid2) == pytest.approx(m * m, rel=1e-10)


def test_fisher_weight_matrix(grid2):
    f = gaussian([0.5, 0.0])
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    direct = fn.fisher_p(f, 2.0, P, grid2)
    # gradient is m * ratio, so the value is m^T P m * e^{|m|^2}
    m = np.array([0.5, 0.0])
    assert direct == pytest.approx(float(m @ P @ m) * math.exp(0.25), rel=1e-10)


def test_fisher_singular_integrand_error(grid2):
    g = pr.GaussianMixture(
        [1.0, -0.8], [[0.0, 0.0], [0.5, 0.0]], [np.eye(2), 0.5 * np.eye(2)]
    )
    with pytest.raises(SingularIntegrandError) as err:
        fn.fisher_p(g, 1.5, np.eye(2), grid2)
    assert err.value.node is not None


def test_generalized_fisher_identity_with_fisher(grid2):
    f = gaussian([0.5, 0.0])
    for p in (1.0, 1.5, 2.0):
        a = fn.generalized_fisher(f, f, p, np.eye(2), grid2)
        b = fn.fisher_p(f, p, np.eye(2), grid2)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_generalized_fisher_p2_ignores_first_argument(grid2):
    g = pr.HermiteExpansion(2, 1, {(1, 0): 1.0})
    f1 = gaussian([0.5, 0.0])
    f2 = gaussian([0.0, 0.3], cov=0.7 * np.eye(2))
    a = fn.generalized_fisher(f1, g, 2.0, np.eye(2), grid2)
    b = fn.generalized_fisher(f2, g, 2.0, np.eye(2), grid2)
    assert a == pytest.approx(b, rel=1e-12)
    assert a == pytest.approx(fn.fisher_p(g, 2.0, np.eye(2), grid2), rel=1e-12)


def test_generalized_fisher_linear_mode(grid2):
    g = pr.HermiteExpansion(2, 1, {(1, 0): 1.0})
    assert fn.generalized_fisher(EQ2, g, 1.0, np.eye(2), grid2) == pytest.approx(
        1.0, rel=1e-12
    )


def test_generalized_fisher_nonnegative(grid2):
    f = gaussian([0.4, -0.2])
    g = pr.HermiteExpansion(2, 2, {(1, 0): 0.3, (0, 2): -0.2})
    for p in (1.0, 1.4, 2.0):
        assert fn.generalized_fisher(f, g, p, np.eye(2), grid2) >= -1e-10


# ---------------------------------------------------------------------------
# exponential moments
# ---------------------------------------------------------------------------


def test_moment_equilibrium(grid2):
    res = fn.exponential_moment(EQ2, 1.0 / 6.0, grid2)
    assert res.value == pytest.approx(1.5, rel=1e-12)
    assert res.bound_p == pytest.approx(2.0)
    # unit-mass bound: 3^{d/4} sqrt(2 e_2 + 1) with e_2 = 0
    assert res.bound == pytest.approx(3.0 ** (2 / 4), rel=1e-12)
    assert res.within_bound


def test_moment_closed_form_gaussian(grid2):
    eps = 0.25
    m = 1.0
    f = gaussian([m, 0.0])
    res = fn.exponential_moment(f, eps, grid2)
    expected = math.exp(eps * m * m / (1 - 2 * eps)) / (1 - 2 * eps)
    assert res.value == pytest.approx(expected, rel=1e-12)


def test_moment_closed_form_matches_quadrature(grid2):
    # quadrature route (used for Hermite states) agrees with the closed form
    eps = 1.0 / 8.0
    f = gaussian([0.4, 0.1], cov=0.8 * np.eye(2))
    closed = fn.exponential_moment(f, eps, grid2).value
    boost = np.exp(eps * np.sum(grid2.nodes**2, axis=1))
    quad = grid2.integrate(np.abs(f.ratio(grid2.nodes)) * boost)
    assert quad == pytest.approx(closed, rel=1e-8)


def test_moment_bound_holds_for_unit_mass_states(grid2):
    for m in (0.25, 0.75):
        res = fn.exponential_moment(gaussian([m, 0.0]), 1.0 / 6.0, grid2)
        assert res.within_bound


def test_moment_divergence_guard(grid2):
    wide = gaussian([0.0, 0.0], cov=3.0 * np.eye(2))
    with pytest.raises(DivergentMomentError):
        fn.exponential_moment(wide, 0.25, grid2)
    with pytest.raises(DivergentMomentError):
        fn.exponential_moment(EQ2, 0.5, grid2)


# ---------------------------------------------------------------------------
# log-Sobolev ratio
# ---------------------------------------------------------------------------


def test_log_sobolev_equality_family(grid2):
    for m in (0.25, 0.5, 1.0):
        ratio = fn.log_sobolev_ratio(gaussian([m, 0.0]), 1.0, grid2)
        assert ratio == pytest.approx(0.5, abs=1e-10)


def test_log_sobolev_zero_over_zero(grid2):
    assert fn.log_sobolev_ratio(EQ2, 1.5, grid2) == 0.0


@pytest.mark.parametrize("m", [0.25, 0.5, 1.0, 1.5, 2.0])
def test_log_sobolev_p2_below_half(grid2, m):
    ratio = fn.log_sobolev_ratio(gaussian([m, 0.0]), 2.0, grid2)
    assert ratio <= 0.5 + 1e-6


# ---------------------------------------------------------------------------
# structural inequalities (property tests)
# ---------------------------------------------------------------------------


@st.composite
def small_mixtures(draw):
    k = draw(st.integers(1, 3))
    weights = [draw(st.floats(0.2, 1.0)) for _ in range(k)]
    total = sum(weights)
    comps = []
    for w in weights:
        mx = draw(st.floats(-0.8, 0.8))
        my = draw(st.floats(-0.8, 0.8))
        s = draw(st.floats(0.5, 1.4))
        comps.append((w / total, [mx, my], s * np.eye(2)))
    return pr.GaussianMixture(
        [c[0] for c in comps], [c[1] for c in comps], [c[2] for c in comps]
    )


@settings(max_examples=25, deadline=None, derandomize=True)
@given(
    mix=small_mixtures(),
    p1=st.floats(1.0, 2.0),
    p2=st.floats(1.0, 2.0),
)
def test_entropy_monotonicity(grid2, mix, p1, p2):
    lo, hi = sorted((p1, p2))
    e_lo = fn.entropy_p(mix, lo, grid2)
    e_hi = fn.entropy_p(mix, hi, grid2)
    assert e_lo <= (hi / lo) * e_hi + 1e-8


@settings(max_examples=20, deadline=None, derandomize=True)
@given(mix=small_mixtures())
def test_l1_controlled_by_weighted_lp(grid2, mix):
    for p in (1.2, 1.7, 2.0):
        r = mix.ratio(grid2.nodes)
        l1 = grid2.integrate(np.abs(r))
        lp = grid2.integrate(np.abs(r) ** p) ** (1.0 / p)
        assert l1 <= lp * (1.0 + 1e-8)


def test_convergence_doubling(grid2):
    f = gaussian([0.5, 0.0])
    v, v2, rel = fn.convergence_check(
        lambda g: fn.entropy_p(f, 1.5, g), grid2
    )
    assert rel < 1e-6
