"""Closed-form pull/push time-to-results model.

A site's ramp-up of running jobs is modelled as ``n(t) = p0*t / (1 + p1*t)``.
Pull scheduling (every running job works until the analysis is done) consumes
the integral of that curve; push scheduling splits the work into a fixed number
of equal jobs and waits for the last one to start and finish.

All functions are unit-agnostic: rates and times only need to agree with each
other. Everything here is a pure function of its arguments.
"""

import math
from dataclasses import dataclass

from .errors import ConvergenceError, DomainError

# Below this value of p1*t the log form of the pull integral loses digits to
# cancellation and the power series is used instead.
SERIES_THRESHOLD = 1e-4

INVERSION_MAX_ITER = 200
INVERSION_RTOL = 1e-12


@dataclass(frozen=True)
class RampUpParams:
    """Site ramp-up parameters: arrival rate ``p0`` and saturation rate ``p1``."""

    p0: float
    p1: float

    def __post_init__(self):
        if not (math.isfinite(self.p0) and math.isfinite(self.p1)):
            raise DomainError(f"ramp-up parameters must be finite, got {self}")
        if self.p0 <= 0:
            raise DomainError(f"p0 must be > 0, got {self.p0}")
        if self.p1 < 0:
            raise DomainError(f"p1 must be >= 0, got {self.p1}")

    @property
    def max_jobs(self):
        """Asymptotic job count ``p0/p1`` (infinite when p1 == 0)."""
        return self.p0 / self.p1 if self.p1 > 0 else math.inf

    def rescaled(self, factor):
        """Same site expressed in a time unit ``factor`` times longer.

        ``params_per_second.rescaled(3600)`` gives rates per hour.
        """
        return RampUpParams(self.p0 * factor, self.p1 * factor)


def _check_time(name, value):
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {value}")


def _check_work(T):
    if not math.isfinite(T) or T <= 0:
        raise DomainError(f"serialized work T must be finite and > 0, got {T}")


def running_jobs(params, t):
    """Number of running jobs ``t`` after the first one started."""
    _check_time("t", t)
    return params.p0 * t / (1.0 + params.p1 * t)


def rampup_time(params, n):
    """Time needed to reach ``n`` running jobs (inverse of :func:`running_jobs`)."""
    if not math.isfinite(n) or n < 0:
        raise DomainError(f"job count must be finite and >= 0, got {n}")
    denom = params.p0 - params.p1 * n
    if denom <= 0:
        raise DomainError(
            f"{n} jobs is never reached: the site saturates at {params.max_jobs}"
        )
    return n / denom


def pull_serialized_time(params, t_prime):
    """Core-time consumed by a pull analysis that finishes at ``t_prime``.

    This is the integral of :func:`running_jobs` from 0 to ``t_prime``.
    """
    _check_time("t_prime", t_prime)
    p0, p1 = params.p0, params.p1
    x = p1 * t_prime
    if x < SERIES_THRESHOLD:
        # x - log(1+x) = x^2/2 - x^3/3 + x^4/4 - x^5/5 + O(x^6)
        return p0 * t_prime * t_prime * (0.5 - x * (1 / 3 - x * (0.25 - x / 5)))
    return p0 / (p1 * p1) * (x - math.log1p(x))


def pull_time_to_results(params, T):
    """Invert :func:`pull_serialized_time`: the ``t'`` at which ``T`` is done.

    The integral is strictly increasing with derivative ``running_jobs``, so a
    bracket is grown geometrically from the ``p1 = 0`` estimate and then
    narrowed by Newton steps, falling back to bisection whenever a step leaves
    the bracket or fails to halve it.
    """
    _check_work(T)

    def f(t):
        return pull_serialized_time(params, t) - T

    lo = 0.0
    hi = math.sqrt(2.0 * T / params.p0)
    n_grow = 0
    while f(hi) < 0:
        lo = hi
        hi *= 2.0
        n_grow += 1
        if n_grow > INVERSION_MAX_ITER or not math.isfinite(hi):
            raise ConvergenceError(
                "could not bracket pull time to results",
                {"T": T, "params": params, "upper": hi},
            )

    t = hi
    width = hi - lo
    for it in range(INVERSION_MAX_ITER):
        ft = f(t)
        if ft == 0.0:
            return t
        if ft > 0:
            hi = t
        else:
            lo = t
        slope = running_jobs(params, t)
        step_ok = False
        if slope > 0:
            t_new = t - ft / slope
            if lo < t_new < hi and abs(t_new - t) < 0.5 * width:
                step_ok = True
        if not step_ok:
            t_new = 0.5 * (lo + hi)
        width = abs(t_new - t)
        t = t_new
        if width <= INVERSION_RTOL * t or hi - lo <= INVERSION_RTOL * hi:
            return t
    raise ConvergenceError(
        "pull time inversion did not converge",
        {"T": T, "params": params, "bracket": (lo, hi), "iterations": INVERSION_MAX_ITER},
    )


def optimal_job_count(params, T):
    """Job count that minimises push time to results for work ``T``."""
    _check_work(T)
    sqrt_T = math.sqrt(T)
    return params.p0 * sqrt_T / (math.sqrt(params.p0) + params.p1 * sqrt_T)


def push_time_at(params, T, n_prime):
    """Push time to results when ``T`` is split evenly into ``n_prime`` jobs."""
    _check_work(T)
    if not math.isfinite(n_prime) or n_prime <= 0:
        raise DomainError(f"job count must be > 0, got {n_prime}")
    if params.p1 > 0 and n_prime >= params.max_jobs:
        raise DomainError(
            f"{n_prime} jobs never run together: the site saturates at {params.max_jobs}"
        )
    return rampup_time(params, n_prime) + T / n_prime


def push_time_to_results(params, T):
    """Push time to results at the optimal job count."""
    _check_work(T)
    return (2.0 * math.sqrt(params.p0 * T) + params.p1 * T) / params.p0


def speedup_ratio(params, T):
    """Pull over push time to results; between 1/sqrt(2) and 1."""
    return pull_time_to_results(params, T) / push_time_to_results(params, T)
