import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import quad

from vaf.analytic_model import (
    SERIES_THRESHOLD,
    RampUpParams,
    optimal_job_count,
    pull_serialized_time,
    pull_time_to_results,
    push_time_at,
    push_time_to_results,
    rampup_time,
    running_jobs,
    speedup_ratio,
)
from vaf.errors import DomainError
from vaf.presets import rampup_preset

# round-number stand-in for the CERN site (per hour), ceiling exactly 100 jobs
SITE = RampUpParams(1185.0, 11.85)
CERN_H = rampup_preset("cern-2013").rescaled(3600)

params_st = st.builds(
    RampUpParams,
    p0=st.floats(1e-2, 1e4),
    p1=st.one_of(st.just(0.0), st.floats(1e-4, 1e2)),
)


def mp_pull_time(p0, p1, T):
    """High-precision oracle for the pull time, independent of the float code path."""
    mp.mp.dps = 50
    p0, p1, T = mp.mpf(p0), mp.mpf(p1), mp.mpf(T)
    if p1 == 0:
        return mp.sqrt(2 * T / p0)
    S = lambda t: p0 / p1**2 * (p1 * t - mp.log1p(p1 * t))
    return mp.findroot(lambda t: S(t) - T, (mp.mpf(0), 4 * mp.sqrt(2 * T / p0) + 4 * T * p1 / p0 + 1), solver="anderson")


class TestRunningJobs:
    def test_linear_ramp(self):
        assert running_jobs(RampUpParams(2, 0), 5) == 10

    def test_zero_at_start(self):
        assert running_jobs(SITE, 0) == 0

    def test_asymptote(self):
        assert running_jobs(SITE, 1e6) == pytest.approx(100, abs=0.01)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            running_jobs(SITE, -1)


class TestRampupTime:
    def test_linear_inverse(self):
        assert rampup_time(RampUpParams(2, 0), 10) == 5

    @pytest.mark.parametrize("t", [0.1, 1, 10])
    def test_round_trip(self, t):
        assert rampup_time(SITE, running_jobs(SITE, t)) == pytest.approx(t, rel=1e-9)

    def test_half_ceiling(self):
        assert rampup_time(SITE, 50) == pytest.approx(50 / 592.5, rel=1e-12)
        assert rampup_time(SITE, 50) == pytest.approx(0.0844, abs=1e-4)

    def test_unreachable(self):
        with pytest.raises(DomainError):
            rampup_time(SITE, 100)
        with pytest.raises(DomainError):
            rampup_time(SITE, 150)


class TestPullSerializedTime:
    def test_empty(self):
        assert pull_serialized_time(SITE, 0) == 0

    def test_series_limit(self):
        assert pull_serialized_time(RampUpParams(2, 0), 3) == 9

    def test_ten_days(self):
        # 2.70 h of pull on the site consumes about 240 core-hours
        value = pull_serialized_time(SITE, 2.70)
        oracle, _ = quad(lambda t: running_jobs(SITE, t), 0, 2.70, epsabs=0, epsrel=1e-13)
        assert value == pytest.approx(oracle, rel=1e-10)
        assert value == pytest.approx(240, rel=0.01)

    def test_negative(self):
        with pytest.raises(DomainError):
            pull_serialized_time(SITE, -0.1)

    @pytest.mark.parametrize("p1", [1e-3, 1.0, 37.0])
    def test_continuous_across_series_switch(self, p1):
        params = RampUpParams(3.0, p1)
        t_switch = SERIES_THRESHOLD / p1
        below = pull_serialized_time(params, t_switch * (1 - 1e-12))
        above = pull_serialized_time(params, t_switch * (1 + 1e-12))
        assert below == pytest.approx(above, rel=1e-9)

    @pytest.mark.parametrize("x", [1e-7, 1e-5, 9.9e-5, 1.01e-4, 1e-3, 0.5, 50.0])
    def test_matches_high_precision(self, x):
        p0, p1 = 7.0, 0.3
        t = x / p1
        mp.mp.dps = 50
        exact = mp.mpf(p0) / mp.mpf(p1) ** 2 * (mp.mpf(x) - mp.log1p(mp.mpf(x)))
        assert pull_serialized_time(RampUpParams(p0, p1), t) == pytest.approx(float(exact), rel=1e-11)


class TestPullTimeToResults:
    def test_linear(self):
        assert pull_time_to_results(RampUpParams(2, 0), 9) == pytest.approx(3, rel=1e-12)

    @pytest.mark.parametrize("T", [1, 100, 1e4])
    def test_round_trip(self, T):
        t = pull_time_to_results(SITE, T)
        assert pull_serialized_time(SITE, t) == pytest.approx(T, rel=1e-9)

    def test_ten_days_takes_2h42(self):
        # reported: 2 h 42 min for 10 days of serialized work at CERN
        assert pull_time_to_results(CERN_H, 240) == pytest.approx(2.70, rel=1e-9)
        assert pull_time_to_results(SITE, 240) == pytest.approx(2.70, rel=5e-3)

    @pytest.mark.parametrize("T", [1e-9, 1e-3, 1.0, 240.0, 1e7])
    def test_matches_high_precision_root(self, T):
        assert pull_time_to_results(SITE, T) == pytest.approx(float(mp_pull_time(1185, 11.85, T)), rel=1e-11)

    def test_bad_work(self):
        for T in (0, -1, math.inf):
            with pytest.raises(DomainError):
                pull_time_to_results(SITE, T)


class TestPush:
    def test_optimal_count_p1_zero(self):
        assert optimal_job_count(RampUpParams(4, 0), 100) == pytest.approx(20)

    def test_optimal_count_site(self):
        assert optimal_job_count(SITE, 240) == pytest.approx(84.2, abs=0.05)

    def test_optimal_below_ceiling(self):
        for T in (1e-3, 1, 1e3, 1e9):
            assert optimal_job_count(SITE, T) < SITE.max_jobs

    @pytest.mark.parametrize("p0,p1,T", [(4, 0, 100), (1185, 11.85, 240), (0.3, 0.002, 5e5), (50, 3, 0.7)])
    def test_optimal_is_minimum_of_scan(self, p0, p1, T):
        params = RampUpParams(p0, p1)
        n_opt = optimal_job_count(params, T)
        best = push_time_at(params, T, n_opt)
        for n in (0.99 * n_opt, 1.01 * n_opt):
            assert push_time_at(params, T, n) >= best
        upper = params.max_jobs if p1 > 0 else 10 * n_opt
        grid = np.linspace(upper * 1e-4, upper * (1 - 1e-6), 20001)
        scan = min(push_time_at(params, T, float(n)) for n in grid)
        assert scan >= best * (1 - 1e-12)
        assert scan == pytest.approx(best, rel=1e-5)

    def test_push_time_at_examples(self):
        assert push_time_at(RampUpParams(4, 0), 100, 20) == pytest.approx(10)
        assert push_time_at(RampUpParams(4, 0), 100, 10) == pytest.approx(12.5)
        assert push_time_at(SITE, 240, 84.2) == pytest.approx(3.30, abs=0.005)

    def test_push_time_at_out_of_range(self):
        with pytest.raises(DomainError):
            push_time_at(SITE, 240, 0)
        with pytest.raises(DomainError):
            push_time_at(SITE, 240, 100)

    def test_closed_form_p1_zero(self):
        assert push_time_to_results(RampUpParams(4, 0), 100) == pytest.approx(10)

    def test_reported_push_times(self):
        # 3 h 18 min for 10 days, 53 min for 2 days
        assert push_time_to_results(SITE, 240) == pytest.approx(3.30, abs=0.005)
        assert push_time_to_results(SITE, 48) == pytest.approx(53 / 60, abs=1 / 60)
        assert push_time_to_results(SITE, 48) == pytest.approx(0.883, abs=0.001)

    def test_bad_work(self):
        with pytest.raises(DomainError):
            optimal_job_count(SITE, 0)
        with pytest.raises(DomainError):
            push_time_to_results(SITE, -5)


def _ratio_min_oracle():
    """Global minimum of pull/push over dimensionless work, by mpmath golden search."""
    mp.mp.dps = 30

    def ratio(log_tstar):
        tstar = mp.e ** log_tstar
        x = mp.findroot(lambda x: x - mp.log1p(x) - tstar, mp.sqrt(2 * tstar))
        return x / (2 * mp.sqrt(tstar) + tstar)

    lo, hi = mp.mpf(-10), mp.mpf(3)
    g = (mp.sqrt(5) - 1) / 2
    for _ in range(120):
        a, b = hi - g * (hi - lo), lo + g * (hi - lo)
        if ratio(a) < ratio(b):
            hi = b
        else:
            lo = a
    return float(ratio(lo)), float(mp.e ** lo)


RATIO_MIN, TSTAR_MIN = _ratio_min_oracle()


class TestSpeedupRatio:
    def test_small_work_limit(self):
        assert speedup_ratio(SITE, 1e-6 * SITE.p0) == pytest.approx(1 / math.sqrt(2), abs=1e-3)

    def test_ten_days(self):
        assert speedup_ratio(CERN_H, 240) == pytest.approx(0.818, abs=5e-4)
        assert speedup_ratio(SITE, 240) == pytest.approx(0.818, abs=3e-3)

    def test_large_work_limit(self):
        assert speedup_ratio(SITE, 1e6 * 240) > 0.99

    def test_dip_below_inverse_sqrt2(self):
        # The ratio depends only on T*p1^2/p0 and is not monotone: it dips
        # slightly below 1/sqrt(2) before rising towards 1.
        assert 0.704 < RATIO_MIN < 1 / math.sqrt(2) - 2e-3
        T_dip = TSTAR_MIN * SITE.p0 / SITE.p1**2
        assert speedup_ratio(SITE, T_dip) == pytest.approx(RATIO_MIN, rel=1e-9)

    def test_monotone_past_the_dip(self):
        T_dip = TSTAR_MIN * SITE.p0 / SITE.p1**2
        grid = np.geomspace(T_dip, 1e7 * T_dip, 300)
        ratios = [speedup_ratio(SITE, float(T)) for T in grid]
        assert all(b >= a for a, b in zip(ratios, ratios[1:]))


class TestParams:
    def test_invalid(self):
        for p0, p1 in ((0, 1), (-1, 0), (1, -0.1), (math.nan, 0), (1, math.inf)):
            with pytest.raises(DomainError):
                RampUpParams(p0, p1)

    def test_max_jobs(self):
        assert SITE.max_jobs == pytest.approx(100)
        assert RampUpParams(1, 0).max_jobs == math.inf

    def test_rescaled_is_unit_change(self):
        per_s = CERN_H.rescaled(1 / 3600)
        assert pull_time_to_results(per_s, 240 * 3600) == pytest.approx(2.70 * 3600, rel=1e-12)


# ---- properties ------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(params_st, st.floats(1e-6, 1e6))
def test_rampup_round_trip(params, t):
    # inverting near the ceiling amplifies rounding by about 1 + p1*t
    assume(params.p1 * t <= 1e5)
    n = running_jobs(params, t)
    assert rampup_time(params, n) == pytest.approx(t, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(params_st, st.floats(1e-6, 1e8))
def test_pull_inversion_round_trip(params, T):
    t = pull_time_to_results(params, T)
    assert abs(pull_serialized_time(params, t) - T) / T <= 1e-9


@settings(max_examples=300, deadline=None)
@given(params_st, st.floats(1e-6, 1e8))
def test_push_closed_form_consistent(params, T):
    n = optimal_job_count(params, T)
    assert push_time_to_results(params, T) == pytest.approx(push_time_at(params, T, n), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(params_st, st.floats(1e-3, 1e6))
def test_push_optimum_not_beaten_by_scan(params, T):
    best = push_time_to_results(params, T)
    n_opt = optimal_job_count(params, T)
    upper = params.max_jobs if params.p1 > 0 else 20 * n_opt
    grid = np.concatenate([np.geomspace(upper * 1e-6, upper * (1 - 1e-9), 4000),
                           n_opt * np.linspace(0.9, 1.1, 401)])
    grid = grid[grid < upper]
    scan = min(push_time_at(params, T, float(n)) for n in grid)
    assert scan >= best * (1 - 1e-6)


@settings(max_examples=300, deadline=None)
@given(params_st, st.floats(1e-6, 1e4))
def test_pull_integral_derivative_is_ramp(params, t):
    h = 1e-4 * t
    fd = (pull_serialized_time(params, t + h) - pull_serialized_time(params, t - h)) / (2 * h)
    assert fd == pytest.approx(running_jobs(params, t), rel=1e-6)


@settings(max_examples=300, deadline=None)
@given(params_st, st.floats(1e-9, 1e9))
def test_ratio_bounds(params, T):
    r = speedup_ratio(params, T)
    assert RATIO_MIN * (1 - 1e-9) <= r < 1


@settings(max_examples=100, deadline=None)
@given(params_st, st.floats(1e-9, 1e9), st.floats(1.001, 10))
def test_ratio_monotone_beyond_dip(params, T, factor):
    if params.p1 == 0:
        assert speedup_ratio(params, T) == pytest.approx(1 / math.sqrt(2), rel=1e-10)
        return
    assume(T >= TSTAR_MIN * params.p0 / params.p1**2)
    assert speedup_ratio(params, T * factor) >= speedup_ratio(params, T) * (1 - 1e-12)
