import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypodecay import functionals as fn
from hypodecay import matrix_core as mc
from hypodecay import propagator as pr
from hypodecay import verifier as vf
from hypodecay.errors import ParameterError, PreconditionError, UnderResolvedError


def gaussian(mean, cov=None, weight=1.0):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if cov is None:
        cov = np.eye(mean.shape[0])
    return pr.GaussianMixture.single(mean, cov, weight)


def make_runner(norm, f0=None, g0=None, p=2.0, P=None):
    ns, sp = norm
    if f0 is None:
        f0 = gaussian([0.5, 0.0])
    return vf.TrajectoryRunner(ns, sp, f0, g0=g0, p=p, P=P)


# ---------------------------------------------------------------------------
# explicit constants against hand evaluations
# ---------------------------------------------------------------------------


def bundle(d=2, mu=1.0, n=0, c_tilde=1.0, c_hat=1.0, p_max=1.0):
    return vf.BoundsBundle(d=d, mu=mu, n=n, c_tilde=c_tilde, c_hat=c_hat,
                           p_max=p_max)


def test_hyper_l2_constant_hand_values():
    # d=2, p2=2: (8/3)^2 * 3 * 16 = 3072/9
    assert bundle(d=2).hyper_l2_constant(2.0) == pytest.approx(3072.0 / 9.0)
    # d=1, p2=3/2: (8/3) * 4^{1/3} * 3^4 = 216 * 4^{1/3}
    assert bundle(d=1).hyper_l2_constant(1.5) == pytest.approx(
        216.0 * 4.0 ** (1.0 / 3.0)
    )


def test_hyper_fisher_constant_hand_value():
    # d=2, p2=2: 2^3 * 3 * 16 = 384, scaled by p_max
    assert bundle(d=2, p_max=2.5).hyper_fisher_constant(2.0) == pytest.approx(
        384.0 * 2.5
    )


def test_lower_fisher_constant_hand_value():
    # d=2, p=3/2, p1=p2=2, eta=1/2:
    # 2^{(1/2)(1/2)+5} * 3^{1/2} * 4^2 * 3^{1/8} * 3 = 2^{21/4} * 16 * 3^{13/8}
    expected = 2.0 ** (21.0 / 4.0) * 16.0 * 3.0 ** (13.0 / 8.0)
    assert bundle(d=2).lower_fisher_constant(1.5, 2.0, 2.0, 0.5) == pytest.approx(
        expected
    )


def test_improved_fisher_constant_hand_value():
    # d=2: 2^{3+1} * 3 = 48
    assert bundle(d=2).improved_fisher_constant() == pytest.approx(48.0)


def test_moment_eps_values():
    assert vf.BoundsBundle.moment_eps(2.0) == pytest.approx(1.0 / 6.0)
    assert vf.BoundsBundle.moment_eps(1.5) == pytest.approx(1.0 / 8.0)
    with pytest.raises(ParameterError):
        vf.BoundsBundle.moment_eps(1.0)


def test_drift_time_hand_value():
    # mu=1, n=0, c_tilde=1: (2/1) log(2/eps)
    assert bundle().time_drift_small(0.25) == pytest.approx(2.0 * math.log(8.0))


def test_cov_time_hand_value():
    # mu=1, n=0, c_hat=1: log((1+eps) * 2 / eps)
    assert bundle().time_cov_settled(0.25) == pytest.approx(math.log(10.0))


def test_defect_pow_convention():
    assert mc.defect_pow(0, 1.0, 0) == 1.0
    assert mc.defect_pow(1, 1.0, 2) == pytest.approx((2.0 / math.e) ** 2)


def test_gaussian_floor_constant_hand_value():
    # d=2, eta=1/2, eps=1/4, moment=2:
    # (4)^{-0.5*1.5*2/2} / (2 pi * 2.5) = 4^{-3/4} / (5 pi)
    expected = 4.0 ** (-0.75) / (5.0 * math.pi)
    assert bundle().gaussian_floor_constant(0.5, 0.25, 2.0) == pytest.approx(expected)


def test_eps1_solves_constraint():
    for eps in (0.03, 1.0 / 8.0, 1.0 / 6.0, 0.3):
        x = vf.BoundsBundle._eps1_for(eps)
        assert x <= 0.125 + 1e-12
        assert x + (1 - 2 * x) / (1 - 4 * x) * x * x / 2 <= eps + 1e-10


def test_composite_times_ordering():
    b = bundle(c_tilde=1.1, c_hat=1.0)
    assert b.tau0(1.5, 0.1) >= b.tau1(1.5, 0.1)
    assert b.tau0(1.5, 0.1) >= b.tau2(1.5, 0.1)
    assert b.lower_bound_time(0.5) == max(
        b.time_cov_settled(0.25), b.time_drift_small(0.25)
    )
    assert b.tau3() == b.hyper_time_for_moment(1.0 / 6.0)


def test_bundle_rejects_bad_gap():
    with pytest.raises(ParameterError):
        bundle(mu=0.0)


def test_envelope_values():
    b = bundle(n=1)
    assert b.envelope(0.0) == pytest.approx(1.0)
    assert b.envelope(2.0) == pytest.approx(5.0 * math.exp(-4.0))


# ---------------------------------------------------------------------------
# trajectory runner
# ---------------------------------------------------------------------------


def test_trajectory_closed_form_entropy(norm_A):
    runner = make_runner(norm_A)
    times = np.linspace(0.0, 5.0, 30)
    report = runner.run(times)
    expected = (np.exp(0.25 * np.exp(-2.0 * times)) - 1.0) / 2.0
    assert np.abs(report.column("e_2") - expected).max() <= 1e-12
    for col in vf.TRAJECTORY_COLUMNS:
        assert len(report.columns[col]) == times.shape[0]


def test_trajectory_stationary_all_zero(norm_A):
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]))
    report = runner.run(np.linspace(0.0, 3.0, 7))
    for col in ("e_p", "e_2", "I_p_P", "genI_1", "genI_p", "a_norm"):
        assert np.abs(report.column(col)).max() <= 1e-10


def test_trajectory_flags_infinite_e2(norm_A):
    wide = gaussian([0.0, 0.0], cov=2.5 * np.eye(2))
    runner = make_runner(norm_A, f0=wide, p=1.5)
    report = runner.run(np.array([0.0, 1.0]), resolution_check=False)
    assert math.isinf(report.column("e_2")[0])
    assert math.isfinite(report.column("e_2")[1])


def test_trajectory_under_resolved_aborts(norm_A):
    ns, sp = norm_A
    runner = vf.TrajectoryRunner(
        ns, sp, gaussian([2.0, 0.0], cov=0.5 * np.eye(2)), p=2.0,
        grid=fn.QuadratureGrid.build(2, 8),
    )
    with pytest.raises(UnderResolvedError):
        runner.run(np.linspace(0.0, 3.0, 10))


def test_default_time_grid_shape():
    times = vf.default_time_grid(2.0, samples=100)
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(7.5)
    assert np.all(np.diff(times) > 0)


# ---------------------------------------------------------------------------
# checks on closed-form trajectories
# ---------------------------------------------------------------------------


def test_fisher_differential_equality_family(norm_A):
    # p=1 on a shifted Gaussian: genI(t) = |m|^2 e^{-2t}, exact equality
    runner = make_runner(norm_A, p=1.0)
    times = np.linspace(0.1, 3.0, 20)
    chk = vf.check_fisher_differential(runner, lam=1.0, times=times)
    assert chk.passed
    vals = np.array([runner.gen_fisher_at(t) for t in times])
    assert np.abs(vals - 0.25 * np.exp(-2 * times)).max() <= 1e-10


def test_fisher_differential_stationary(norm_A):
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]))
    chk = vf.check_fisher_differential(runner, lam=1.0,
                                       times=np.linspace(0.1, 2.0, 5))
    assert chk.passed


def test_fisher_integrated_pairwise(norm_A):
    runner = make_runner(norm_A, p=2.0)
    chk = vf.check_fisher_differential(runner, lam=1.0,
                                       times=np.linspace(0.1, 4.0, 15))
    assert chk.passed
    assert chk.margin > -1e-10


def test_improved_decay_second_layer(norm_A):
    g0 = pr.HermiteExpansion(2, 2, {(2, 0): 1.0})
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]), g0=g0)
    times = np.linspace(0.5, 3.0, 15)
    chk = vf.check_improved_decay(runner, lam=1.0, times=times)
    assert chk.passed
    assert chk.details["rate"] == pytest.approx(4.0)
    # the decay is exactly e^{-4t} here: log-slope of I_2 over the window
    I2 = [fn.fisher_p(runner.g_at(t), 2.0, np.eye(2), runner.grid) for t in times]
    slope = np.polyfit(times, np.log(I2), 1)[0]
    assert slope == pytest.approx(-4.0, abs=1e-8)


def test_improved_decay_diag_mix(norm_DIAG):
    # second-layer mix on the anisotropic system: the slowest mode there
    # still decays at least at the improved rate 2(lam + d_min)
    ns, sp = norm_DIAG
    g0 = pr.HermiteExpansion(2, 2, {(2, 0): 0.7, (1, 1): 0.2, (0, 2): 0.1})
    f0 = gaussian([0.0, 0.0])
    runner = vf.TrajectoryRunner(ns, sp, f0, g0=g0, p=2.0)
    lam = float(np.min(np.linalg.eigvalsh(ns.D_tilde)))
    times = np.linspace(0.5, 3.0, 15)
    chk = vf.check_improved_decay(runner, lam=lam, times=times)
    assert chk.passed
    I2 = [fn.fisher_p(runner.g_at(t), 2.0, np.eye(2), runner.grid) for t in times]
    slope = np.polyfit(times, np.log(I2), 1)[0]
    assert -slope >= 2.0 * (lam + runner.system.d_min) - 0.05


def test_improved_decay_requires_orthogonality(norm_A):
    runner = make_runner(norm_A)  # g = f has a first moment
    with pytest.raises(PreconditionError):
        vf.check_improved_decay(runner, lam=1.0, times=np.linspace(0.5, 2.0, 5))


def test_improved_decay_zero_state(norm_A):
    g0 = pr.HermiteExpansion(2, 2, {})
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]), g0=g0)
    chk = vf.check_improved_decay(runner, lam=1.0,
                                  times=np.linspace(0.5, 2.0, 5))
    assert chk.passed


def test_interpolation_linear_mode(grid2):
    # both factors equal one, the p = 3/2 constant is exactly 2
    finf = gaussian([0.0, 0.0])
    g = pr.HermiteExpansion(2, 1, {(1, 0): 1.0})
    chk = vf.check_interpolation(finf, g, 1.5, np.eye(2), grid2)
    assert chk.passed
    assert vf.interpolation_constant(1.5) == pytest.approx(2.0)
    assert chk.details["genI_p"] == pytest.approx(1.0, rel=1e-10)


def test_interpolation_constant_limits():
    assert vf.interpolation_constant(1.0 + 1e-9) == pytest.approx(1.0, rel=1e-6)
    assert vf.interpolation_constant(2.0 - 1e-9) == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("p", [1.1, 1.5, 1.9])
def test_interpolation_sweep(grid2, p):
    f = gaussian([0.5, 0.0])
    chk = vf.check_interpolation(f, f, p, np.eye(2), grid2)
    assert chk.passed


def test_interpolation_zero_state(grid2):
    f = gaussian([0.3, 0.0])
    g = pr.HermiteExpansion(2, 2, {})
    chk = vf.check_interpolation(f, g, 1.5, np.eye(2), grid2)
    assert chk.passed


@settings(max_examples=15, deadline=None, derandomize=True)
@given(
    mx=st.floats(-0.7, 0.7),
    sigma=st.floats(0.6, 1.3),
    c1=st.floats(-0.5, 0.5),
    c2=st.floats(-0.5, 0.5),
    p=st.floats(1.05, 1.95),
)
def test_interpolation_random_states(grid2, mx, sigma, c1, c2, p):
    f = gaussian([mx, 0.1], cov=sigma * np.eye(2))
    g = pr.HermiteExpansion(2, 2, {(1, 0): c1, (0, 2): c2})
    chk = vf.check_interpolation(f, g, p, np.eye(2), grid2)
    assert chk.passed


def test_lower_bound_equilibrium(norm_A):
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]))
    chk = vf.check_lower_bound(runner, eta=0.5, eps=0.25, pts=33)
    assert chk.passed
    # the floor constant must sit below the equilibrium peak 1/(2 pi)
    assert chk.details["constant"] < 1.0 / (2.0 * math.pi)


def test_lower_bound_at_origin_scalar_comparison(norm_A):
    runner = make_runner(norm_A, f0=gaussian([1.0, 0.0], cov=0.5 * np.eye(2)))
    bundleA = runner.bundle
    t = bundleA.lower_bound_time(0.5)
    moment = fn.exponential_moment(runner.f0, 0.25, runner.grid).value
    const = bundleA.gaussian_floor_constant(0.5, 0.25, moment)
    assert runner.f_at(t).density(np.zeros((1, 2)))[0] >= const


def test_lower_bound_rejects_early_times(norm_A):
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]))
    with pytest.raises(PreconditionError):
        vf.check_lower_bound(runner, eta=0.5, eps=0.25, times=[0.1], pts=9)


def test_contractivity_identity(norm_A):
    runner = make_runner(norm_A)
    chk = vf.check_contractivity(runner, p1=2.0, p2=2.0, eta=0.5, n_times=5)
    assert chk.passed
    assert set(chk.details["margins"]) >= {
        "hyper_l2", "hyper_e2", "upper_fisher", "lower_fisher",
    }
    # the explicit time is conservative: the scan finds an earlier passing time
    assert chk.details["earliest_passing"] <= chk.details["t1"]


def test_contractivity_stationary_trivial(norm_A):
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]))
    chk = vf.check_contractivity(runner, p1=1.5, p2=1.5, eta=0.5, n_times=4)
    assert chk.passed
    # at the equilibrium the weighted L^2 norm is one and Fisher is zero
    t1 = runner.bundle.hyper_time(1.5)
    assert fn.weighted_l2_norm_sq(runner.g_at(t1), runner.grid) == pytest.approx(1.0)


def test_log_sobolev_check(norm_A):
    runner = make_runner(norm_A, p=1.0)
    chk = vf.check_log_sobolev(runner, np.linspace(0.0, 3.0, 7))
    assert chk.passed


def test_entropy_monotone_and_splitting(norm_A):
    runner = make_runner(norm_A)
    report = runner.run(np.linspace(0.0, 5.0, 40))
    assert vf.check_entropy_monotone(report).passed
    assert vf.check_splitting(report).passed


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------


def test_fit_rate_pure_exponential():
    t = np.linspace(0.0, 15.0, 200)
    fit = vf.fit_decay(t, 0.3 * np.exp(-2.0 * t), 1.0, (8.0, 15.0))
    assert fit.rate_fit == pytest.approx(2.0, rel=1e-10)
    assert fit.conclusive


def test_fit_poly_order_defective_shape():
    t = np.linspace(0.0, 15.0, 200)
    vals = (1.0 + t**2) * np.exp(-2.0 * t)
    fit = vf.fit_decay(t, vals, 1.0, (8.0, 15.0))
    assert abs(fit.poly_order_fit - 2.0) < 0.1


def test_fit_needs_enough_samples():
    with pytest.raises(ParameterError):
        vf.fit_decay(np.array([1.0, 2.0]), np.array([1.0, 0.5]), 1.0, (0.5, 3.0))


def test_main_theorems_identity(norm_A):
    runner = make_runner(norm_A)
    report = runner.run(vf.default_time_grid(1.0, t_max=15.0, samples=200))
    chk, fit = vf.check_main_theorems(report, mu=1.0, n=0)
    assert chk.passed
    assert abs(fit.rate_fit - 2.0) <= 0.04
    assert math.isfinite(chk.details["sup_ratio"])


def test_main_theorems_vacuous_for_equilibrium(norm_A):
    runner = make_runner(norm_A, f0=gaussian([0.0, 0.0]))
    report = runner.run(np.linspace(0.0, 15.0, 100))
    chk, fit = vf.check_main_theorems(report, mu=1.0, n=0)
    assert chk.passed
    assert chk.details.get("vacuous")
