import math

import numpy as np
import pytest
from scipy.optimize import brentq, least_squares

from vaf.analytic_model import RampUpParams, pull_time_to_results, push_time_to_results
from vaf.errors import ConvergenceError, InputError
from vaf.fitting import RampUpSample, calibrate_from_claims, fit_rampup, synthetic_samples
from vaf.presets import rampup_preset

TRACE_TIMES = np.linspace(0, 3600, 361)  # one hour, every 10 s


def _pull_oracle(p0, p1, T):
    S = lambda t: p0 / p1**2 * (p1 * t - math.log1p(p1 * t)) - T
    hi = math.sqrt(2 * T / p0) + T * p1 / p0 + 1
    while S(hi) < 0:
        hi *= 2
    return brentq(S, 0, hi, xtol=1e-15, rtol=1e-15)


def _push_oracle(p0, p1, T):
    return (2 * math.sqrt(p0 * T) + p1 * T) / p0


def _calibration_oracle(T, t_pull, t_push):
    """Coarse 2-D grid search in (p0, ceiling) polished by least squares."""

    def residual(x):
        p0, p1 = math.exp(x[0]), math.exp(x[1])
        return [_pull_oracle(p0, p1, T) / t_pull - 1, _push_oracle(p0, p1, T) / t_push - 1]

    best = None
    for p0 in np.geomspace(100, 10000, 41):
        for ceiling in np.geomspace(20, 500, 41):
            r = np.linalg.norm(residual([math.log(p0), math.log(p0 / ceiling)]))
            if best is None or r < best[0]:
                best = (r, p0, p0 / ceiling)
    sol = least_squares(residual, [math.log(best[1]), math.log(best[2])], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return math.exp(sol.x[0]), math.exp(sol.x[1])


class TestFit:
    def test_noiseless_recovery(self):
        truth = RampUpParams(0.5, 0.005)
        fit = fit_rampup(synthetic_samples(truth, TRACE_TIMES))
        assert fit.params.p0 == pytest.approx(0.5, rel=1e-6)
        assert fit.params.p1 == pytest.approx(0.005, rel=1e-6)
        assert fit.residual_norm < 1e-8
        assert fit.max_jobs == pytest.approx(100, rel=1e-6)

    def test_noisy_recovery(self):
        truth = RampUpParams(0.5, 0.005)
        fit = fit_rampup(synthetic_samples(truth, TRACE_TIMES, sigma=1.0, seed=7))
        assert fit.params.p0 == pytest.approx(0.5, rel=0.05)
        assert fit.params.p1 == pytest.approx(0.005, rel=0.05)
        assert all(s > 0 for s in fit.stderr)

    def test_linear_site(self):
        samples = [RampUpSample(t, 2 * t) for t in (0.0, 1.0, 2.0, 5.0)]
        fit = fit_rampup(samples)
        assert fit.params.p0 == pytest.approx(2, rel=1e-9)
        assert fit.params.p1 == pytest.approx(0, abs=1e-9)

    def test_two_samples(self):
        with pytest.raises(InputError):
            fit_rampup([RampUpSample(0, 0), RampUpSample(1, 1)])

    def test_negative_count(self):
        with pytest.raises(InputError):
            fit_rampup([RampUpSample(0, 0), RampUpSample(1, -1), RampUpSample(2, 3)])

    def test_times_not_increasing(self):
        with pytest.raises(InputError):
            fit_rampup([RampUpSample(0, 0), RampUpSample(2, 1), RampUpSample(1, 3)])

    def test_noise_is_seeded(self):
        truth = RampUpParams(0.5, 0.005)
        a = synthetic_samples(truth, TRACE_TIMES, sigma=1.0, seed=3)
        b = synthetic_samples(truth, TRACE_TIMES, sigma=1.0, seed=3)
        c = synthetic_samples(truth, TRACE_TIMES, sigma=1.0, seed=4)
        assert a == b
        assert a != c
        assert all(s.n >= 0 for s in a)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_noiseless_sets(self, seed):
        rng = np.random.default_rng(seed)
        p0 = rng.uniform(0.3, 1.0)
        truth = RampUpParams(p0, p0 / rng.uniform(100, 300))
        fit = fit_rampup(synthetic_samples(truth, TRACE_TIMES))
        assert fit.params.p0 == pytest.approx(truth.p0, rel=1e-6)
        assert fit.params.p1 == pytest.approx(truth.p1, rel=1e-6)


class TestCalibrate:
    def test_reported_cern_timings(self):
        cal = calibrate_from_claims(240, 2.7, 3.3)
        oracle = _calibration_oracle(240, 2.7, 3.3)
        assert cal.params.p0 == pytest.approx(oracle[0], rel=1e-6)
        assert cal.params.p1 == pytest.approx(oracle[1], rel=1e-6)
        assert max(cal.residuals) <= 1e-6
        assert cal.params.max_jobs == pytest.approx(100, abs=5)
        # order of magnitude of the reported site parameters
        assert cal.params.p0 == pytest.approx(1.19e3, rel=0.03)
        assert cal.params.p1 == pytest.approx(11.9, rel=0.03)

    def test_preset_is_the_calibration(self):
        cal = calibrate_from_claims(240, 2.7, 3.3)
        preset = rampup_preset("cern-2013").rescaled(3600)
        assert preset.p0 == pytest.approx(cal.params.p0, rel=1e-12)
        assert preset.p1 == pytest.approx(cal.params.p1, rel=1e-12)

    def test_two_day_prediction(self):
        p = calibrate_from_claims(240, 2.7, 3.3).params
        assert pull_time_to_results(p, 48) * 60 == pytest.approx(40, abs=2)
        assert push_time_to_results(p, 48) * 60 == pytest.approx(53, abs=2)

    def test_forward_generated_claims(self):
        truth = RampUpParams(800.0, 4.0)
        T = 500.0
        cal = calibrate_from_claims(T, pull_time_to_results(truth, T), push_time_to_results(truth, T),
                                    target_max_jobs=truth.max_jobs)
        assert cal.params.p0 == pytest.approx(800, rel=1e-8)
        assert cal.params.p1 == pytest.approx(4, rel=1e-8)

    def test_linear_site_claims_have_two_roots(self):
        # p1 = 0, p0 = 4, T = 100: pull sqrt(50), push 10. A second finite
        # ceiling reproduces the same pair, so the unbounded one is asked for.
        cal = calibrate_from_claims(100, math.sqrt(50), 10, target_max_jobs=math.inf)
        assert cal.params.p0 == pytest.approx(4, rel=1e-9)
        assert cal.params.p1 == pytest.approx(0, abs=1e-9)
        assert len(cal.candidates) == 2
        for p in cal.candidates:
            assert pull_time_to_results(p, 100) == pytest.approx(math.sqrt(50), rel=1e-9)
            assert push_time_to_results(p, 100) == pytest.approx(10, rel=1e-9)

    def test_pull_not_faster(self):
        with pytest.raises(InputError):
            calibrate_from_claims(240, 3.3, 2.7)
        with pytest.raises(InputError):
            calibrate_from_claims(240, 3.0, 3.0)

    def test_unreachable_ratio(self):
        # pull/push can never go below about 0.70
        with pytest.raises(ConvergenceError) as info:
            calibrate_from_claims(240, 1.0, 3.3)
        assert "ratio" in info.value.diagnostics
