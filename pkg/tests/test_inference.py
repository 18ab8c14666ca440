import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import breslow_grid
from profile_sampler.core import m_n
from profile_sampler.cox_current import generate_current_status
from profile_sampler.cox_right import breslow_profile, generate_right_censored
from profile_sampler.data import CoxData
from profile_sampler.inference import (BracketError, DegeneracyError, FitConfig, InfoEstimate,
                                       InfoEstimateError, IntervalEstimate, StaleMleError,
                                       UnboundedIntervalError, build_report, credible_quantile,
                                       info_directional, info_matrix, mle_maximize, plr_interval,
                                       plr_samples, plr_threshold, posterior_info,
                                       posterior_mean, wald_interval)
from profile_sampler.sampler import Chain, metropolis_run

TN_RIGHT = 4.247948431040832
TN_CURRENT = 0.7672485013117682  # calibrate_tn(1.0, 0.5, seed=0)

FIVE = dict(y=[0.5, 1.1, 1.7, 2.3, 3.0], delta=[1, 1, 0, 1, 1], z=[0.9, 0.2, 0.6, 0.1, 0.4])


def quadratic(center, curvature, n, const=0.0):
    center = np.atleast_1d(np.asarray(center, float))
    a = np.atleast_2d(np.asarray(curvature, float))
    return lambda t: const - 0.5 * n * float((t - center) @ a @ (t - center))


@pytest.fixture(scope="module")
def five():
    d = CoxData(FIVE["y"], FIVE["delta"], FIVE["z"])
    return d, (lambda t: breslow_profile(t, d).log_pl)


def test_mle_examples():
    assert mle_maximize(lambda t: -(t[0] - 0.7) ** 2, (-2, 2))[0] == pytest.approx(0.7, abs=1e-6)
    assert mle_maximize(lambda t: -abs(t[0]), (-2, 2))[0] == pytest.approx(0.0, abs=1e-6)


def test_mle_grid_oracle(five):
    d, f = five
    grid = np.arange(-10, 10, 1e-4)
    best = grid[np.argmax(breslow_grid(grid, d.y, d.delta, d.z))]
    assert mle_maximize(f, (-10, 10))[0] == pytest.approx(best, abs=2e-4)


def test_mle_vector():
    f = quadratic([0.3, -1.2], [[2.0, 0.4], [0.4, 1.0]], 1)
    assert np.allclose(mle_maximize(f, [0.0, 0.0], tol=1e-9, scalar=False), [0.3, -1.2],
                       atol=1e-6)


def test_mle_bracket_errors():
    with pytest.raises(BracketError):
        mle_maximize(lambda t: -np.inf, (-1, 1))
    with pytest.raises(BracketError):
        mle_maximize(lambda t: 0.0, (1, 1))


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-1e4, 1e4), st.floats(0.01, 100))
def test_mle_shift_and_scale_invariant(center, shift, scale):
    f = lambda t: -(t[0] - center) ** 2 - 0.1 * (t[0] - center) ** 4
    base = mle_maximize(f, (-5, 5))
    assert np.array_equal(mle_maximize(lambda t: f(t) + shift, (-5, 5)), base) or \
        abs(mle_maximize(lambda t: f(t) + shift, (-5, 5))[0] - base[0]) <= 1e-6
    assert abs(mle_maximize(lambda t: scale * f(t), (-5, 5))[0] - base[0]) <= 1e-6


def test_info_directional_examples():
    n = 37
    f = lambda t: -(n / 2) * 4 * (t[0] - 0.2) ** 2
    for s in (1e-3, 0.1, 2.0):
        assert info_directional(f, [0.2], [1.0], s, n) == pytest.approx(4.0, rel=1e-10)
    assert info_directional(lambda t: 3.0, [0.0], [1.0], 0.1, n) == 0.0


def test_info_directional_cox_oracle():
    d = generate_right_censored(200, [1.0], TN_RIGHT, 0)
    f = lambda t: breslow_profile(t, d).log_pl
    th = mle_maximize(f, (-10, 10))
    s = 200 ** -0.5
    h = s / 2
    oracle = -(f(th + h) - 2 * f(th) + f(th - h)) / (h * h) / 200
    assert info_directional(f, th, [1.0], s, 200) == pytest.approx(oracle, rel=0.1)


def test_info_nonfinite():
    with pytest.raises(InfoEstimateError):
        info_directional(lambda t: -np.inf if t[0] > 0 else 0.0, [0.0], [1.0], 0.1, 5)
    with pytest.raises(InfoEstimateError, match="theta"):
        info_matrix(lambda t: -np.inf if t[0] > 0 else 0.0, [0.0], 0.1, 5)


CURV = np.array([[1.0, 0.5], [0.5, 2.0]])


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_info_matrix_quadratic_exact(n):
    for s in (n ** (-1 / 3), n ** -0.5, 0.1):
        est = info_matrix(quadratic([0.3, -0.4], CURV, n), [0.3, -0.4], s, n)
        assert np.allclose(est.matrix, CURV, rtol=1e-10, atol=0)
        assert np.array_equal(est.matrix, est.matrix.T)
        assert est.method == "numeric" and est.step == s and est.positive_definite
        for i, e in enumerate(np.eye(2)):
            direct = info_directional(quadratic([0.3, -0.4], CURV, n), [0.3, -0.4], e, s, n)
            assert direct == pytest.approx(est.matrix[i, i], rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(-1e3, 1e3), st.floats(1e-3, 1.0),
       st.integers(1, 1000))
def test_info_shift_invariant_and_scalar_reduction(center, curv, shift, s, n):
    f = quadratic([center], [[curv]], n)
    g = lambda t: f(t) + shift
    a = info_matrix(f, [center], s, n).matrix[0, 0]
    assert a == pytest.approx(curv, rel=1e-8)
    assert info_matrix(g, [center], s, n).matrix[0, 0] == pytest.approx(a, rel=1e-6)
    assert a == pytest.approx(info_directional(f, [center], [1.0], s, n), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.01, 50))
def test_info_scales_linearly(curv, scale):
    f = quadratic([0.0], [[curv]], 50)
    a = info_matrix(f, [0.0], 0.1, 50).matrix[0, 0]
    b = info_matrix(lambda t: scale * f(t), [0.0], 0.1, 50).matrix[0, 0]
    assert b == pytest.approx(scale * a, rel=1e-10)


def test_info_matrix_current_status_vs_mcmc():
    d = generate_current_status(100, [1.0], TN_CURRENT, 0)
    rep = build_report("cox_current", d, FitConfig(seed=0))
    num, mc = rep.extra["info_numeric"][0, 0], rep.extra["info_mcmc"][0, 0]
    assert rep.extra["step"] == pytest.approx(100 ** (-1 / 3))
    assert num == pytest.approx(mc, rel=0.25)


def test_info_estimate_pd_flag():
    assert not InfoEstimate.build([[-1.0]], 0.1, "numeric").positive_definite
    assert InfoEstimate.build([[2.0]], 0.1, "numeric").positive_definite


def test_posterior_mean():
    assert posterior_mean(Chain.from_samples(np.full(20, 1.5)))[0] == 1.5
    assert posterior_mean(Chain.from_samples([0.0, 1.0]))[0] == 0.5
    x = np.random.default_rng(1).normal(0.7, 0.1, 10_000)
    assert posterior_mean(Chain.from_samples(x))[0] == pytest.approx(0.7, abs=0.003)


def test_posterior_info():
    with pytest.raises(DegeneracyError):
        posterior_info(Chain.from_samples(np.full(50, 2.0)), 10)
    x = np.random.default_rng(2).normal(size=200)
    est = posterior_info(Chain.from_samples(x), 40)
    assert est.matrix[0, 0] == 1.0 / (40 * np.var(x, ddof=1))
    assert est.method == "mcmc"
    sigma = np.array([[0.04, 0.01], [0.01, 0.09]])
    draws = np.random.default_rng(3).multivariate_normal([1.0, -1.0], sigma, 100_000)
    got = posterior_info(Chain.from_samples(draws), 100).matrix
    assert np.allclose(got, np.linalg.inv(100 * sigma), rtol=0.05)


def test_credible_quantile():
    assert credible_quantile(Chain.from_samples([1.0, 2.0, 3.0]), 0.5) == 2.0
    x = np.random.default_rng(4).standard_normal(100_000)
    assert credible_quantile(Chain.from_samples(x), 0.975) == pytest.approx(1.96, abs=0.03)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_credible_quantile_monotone(xs):
    ch = Chain.from_samples(xs)
    assert credible_quantile(ch, 0.9) >= credible_quantile(ch, 0.1)


def test_wald_examples():
    info = InfoEstimate.build([[1.0]], 0.1, "numeric")
    iv = wald_interval([0.0], info, 100, 0.05)
    assert iv.lower == pytest.approx(-0.1959964, abs=1e-6)
    assert iv.upper == pytest.approx(0.1959964, abs=1e-6)
    assert iv.method == "wald_numeric"
    point = wald_interval([0.3], info, 100, 1.0)
    assert point.lower == point.upper == 0.3
    assert wald_interval([0.0], InfoEstimate.build([[1.0]], np.nan, "mcmc"), 10,
                         0.05).method == "wald_mcmc"
    with pytest.raises(InfoEstimateError):
        wald_interval([0.0], InfoEstimate.build([[0.0]], 0.1, "numeric"), 10, 0.05)


@given(st.integers(1, 10**6), st.floats(0.01, 100), st.floats(0.01, 0.5))
def test_wald_width_scaling(n, info, alpha):
    est = InfoEstimate.build([[info]], 0.1, "numeric")
    a = wald_interval([0.0], est, n, alpha)
    b = wald_interval([0.0], est, 4 * n, alpha)
    assert (b.upper - b.lower) == pytest.approx((a.upper - a.lower) / 2, rel=1e-12)


def test_interval_validation():
    with pytest.raises(ValueError):
        IntervalEstimate(1.0, 0.0, 0.95, "plr")


def test_plr_samples_examples():
    ch = Chain.from_samples(np.zeros(5), log_pl_values=np.full(5, -3.0))
    assert np.array_equal(plr_samples(ch, -3.0), np.zeros(5))
    one = Chain.from_samples([0.0], log_pl_values=[-10.0 - 1.9205])
    assert plr_samples(one, -10.0)[0] == pytest.approx(3.841, abs=1e-9)
    with pytest.raises(StaleMleError):
        plr_samples(Chain.from_samples([0.0], log_pl_values=[1.0]), 0.0)
    assert plr_samples(Chain.from_samples([0.0], log_pl_values=[5e-10]), 0.0)[0] == 0.0


def test_plr_quadratic_chain_wilks():
    n = 100
    f = quadratic([0.5], [[2.0]], n)
    ch = metropolis_run(f, [0.5], 2.4 / math.sqrt(n * 2.0), 100_000, 2000, seed=9)
    plr = plr_samples(ch, 0.0)
    assert plr.min() >= 0
    assert plr_threshold(plr, 0.95) == pytest.approx(3.841, abs=0.3)


def test_plr_threshold_examples():
    assert plr_threshold([0, 1, 2, 3], 0.5) == 1.5
    assert plr_threshold([0, 1, 2, 3], 1.0) == 3.0


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
def test_plr_threshold_monotone(xs, a, b):
    lo, hi = sorted((a, b))
    assert plr_threshold(xs, lo) <= plr_threshold(xs, hi)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 10), st.integers(1, 500), st.floats(0.1, 10),
       st.floats(-1e3, 1e3))
def test_plr_interval_quadratic(center, curv, n, chi, shift):
    f = quadratic([center], [[curv]], n, const=shift)
    iv = plr_interval(f, [center], chi)
    half = math.sqrt(chi / (n * curv))
    assert iv.lower == pytest.approx(center - half, abs=1e-7)
    assert iv.upper == pytest.approx(center + half, abs=1e-7)


def test_plr_interval_zero_chi_and_unbounded():
    f = quadratic([1.0], [[1.0]], 10)
    iv = plr_interval(f, [1.0], 0.0)
    assert iv.lower == iv.upper == 1.0
    with pytest.raises(UnboundedIntervalError) as err:
        plr_interval(lambda t: -max(t[0], 0.0), [0.0], 1.0, expand_limit=20)
    assert err.value.side == "lower"


def test_plr_interval_grid_oracle(five):
    d, f = five
    th = mle_maximize(f, (-10, 10), tol=1e-9)
    iv = plr_interval(f, th, 3.841)
    grid = np.arange(-8.0, 10.0, 1e-5)
    top = f(th)
    inside = grid[2 * (top - breslow_grid(grid, d.y, d.delta, d.z)) <= 3.841]
    assert iv.lower == pytest.approx(inside.min(), abs=2e-5)
    assert iv.upper == pytest.approx(inside.max(), abs=2e-5)


def test_build_report_degenerate_n1():
    rep = build_report("cox_right", CoxData([1.0], [1], [0.5]),
                       FitConfig(chain_total=400, burn_in=100))
    assert rep.status == "degenerate" and rep.flags
    assert "status=degenerate" in rep.to_keyvalue()


def test_build_report_deterministic_and_bound():
    d = generate_right_censored(200, [1.0], TN_RIGHT, 0)
    cfg = FitConfig(seed=0)
    a = build_report("cox_right", d, cfg)
    b = build_report("cox_right", d, cfg)
    assert a.to_keyvalue() == b.to_keyvalue()
    assert a.status == "success"
    assert abs(a.mle[0] - a.cm[0]) <= 5 * m_n(200, 0.5) / math.sqrt(200)
    lo, hi = a.bounds("quantile")
    assert lo < a.cm[0] < hi
    assert not np.isnan(a.bounds("wald_numeric")[0]) and not np.isnan(a.bounds("plr")[0])
    assert np.isnan(a.bounds("wald_mcmc")[0])


def test_build_report_switches():
    d = generate_right_censored(60, [1.0], TN_RIGHT, 1)
    rep = build_report("cox_right", d, FitConfig(seed=1, chain_total=1500, burn_in=500,
                                                 chain_interval="wald", plr_calibration="chi_b"))
    assert rep.interval("wald_mcmc") is not None and rep.interval("quantile") is None
    assert rep.extra["plr_chi"] == rep.chi_b


def test_build_report_wrong_data_type():
    from profile_sampler.inference import StageError
    with pytest.raises((TypeError, StageError)):
        build_report("partly_linear", CoxData([1.0], [1], [0.5]))
