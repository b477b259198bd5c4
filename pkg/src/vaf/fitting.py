"""Ramp-up curve fitting and calibration of site parameters from reported timings."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .analytic_model import (
    RampUpParams,
    pull_time_to_results,
    push_time_to_results,
    running_jobs,
)
from .errors import ConvergenceError, DomainError, InputError
from .sim_engine import RngStream


@dataclass(frozen=True)
class RampUpSample:
    t: float
    n: float


@dataclass
class FitResult:
    params: RampUpParams
    residual_norm: float
    iterations: int
    stderr: tuple  # (p0, p1) standard errors; nan when undetermined

    @property
    def max_jobs(self):
        return self.params.max_jobs


def _as_arrays(samples):
    t = np.array([float(s.t) for s in samples])
    n = np.array([float(s.n) for s in samples])
    if len(t) < 3:
        raise InputError(f"need at least 3 samples, got {len(t)}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(n))):
        raise InputError("samples must be finite")
    if np.any(t < 0) or np.any(n < 0):
        raise InputError("samples must have t >= 0 and n >= 0")
    if np.any(np.diff(t) <= 0):
        raise InputError("sample times must be strictly increasing")
    if np.count_nonzero(t > 0) < 2:
        raise InputError("need at least 2 distinct sample times > 0")
    return t, n


def _initial_guess(t, n):
    # 1/n = (1/p0)(1/t) + p1/p0, weighted by n^4 ~ inverse variance of 1/n
    mask = (t > 0) & (n > 0)
    if np.count_nonzero(mask) >= 2:
        x = 1.0 / t[mask]
        y = 1.0 / n[mask]
        w = n[mask] ** 4
        A = np.column_stack([x, np.ones_like(x)]) * np.sqrt(w)[:, None]
        (slope, intercept), *_ = np.linalg.lstsq(A, y * np.sqrt(w), rcond=None)
        if slope > 0:
            return 1.0 / slope, max(intercept / slope, 0.0)
    positive = t > 0
    p0 = float(np.max(n[positive] / t[positive]))
    return (p0 if p0 > 0 else 1.0), 0.0


def _model(p, t):
    return p[0] * t / (1.0 + p[1] * t)


def _jacobian(p, t):
    d = 1.0 + p[1] * t
    return np.column_stack([t / d, -p[0] * t * t / (d * d)])


def fit_rampup(samples, max_iter=200, rtol=1e-13):
    """Least-squares fit of ``n = p0*t/(1+p1*t)`` to a ramp-up trace.

    Levenberg-Marquardt started from the weighted linearisation of ``1/n``
    against ``1/t``. ``p1`` is kept non-negative by projection.
    """
    t, n = _as_arrays(samples)
    p = np.array(_initial_guess(t, n), dtype=float)
    r = n - _model(p, t)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(p, t)
        JtJ = J.T @ J
        g = J.T @ r
        accepted = False
        while lam < 1e16:
            A = JtJ + lam * np.diag(np.diag(JtJ))
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            trial[1] = max(trial[1], 0.0)
            if trial[0] <= 0:
                lam *= 10.0
                continue
            r_trial = n - _model(trial, t)
            cost_trial = float(r_trial @ r_trial)
            if cost_trial <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no downhill step at any damping: already at the minimum
            converged = True
            break
        delta = np.abs(trial - p)
        scale = np.maximum(np.abs(trial), 1e-300)
        small_step = bool(np.all(delta <= rtol * scale))
        small_gain = cost - cost_trial <= rtol * max(cost, 1e-300)
        p, r, cost = trial, r_trial, cost_trial
        lam = max(lam / 10.0, 1e-12)
        if small_step or small_gain:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            "ramp-up fit did not converge",
            {"iterations": it, "params": tuple(p), "residual_norm": math.sqrt(cost)},
        )

    dof = len(t) - 2
    stderr = (math.nan, math.nan)
    if dof > 0:
        J = _jacobian(p, t)
        try:
            cov = np.linalg.inv(J.T @ J) * (cost / dof)
            stderr = (float(math.sqrt(max(cov[0, 0], 0.0))), float(math.sqrt(max(cov[1, 1], 0.0))))
        except np.linalg.LinAlgError:
            pass
    return FitResult(RampUpParams(float(p[0]), float(p[1])), math.sqrt(cost), it, stderr)


def synthetic_samples(params, times, sigma=0.0, seed=0):
    """Ramp-up trace sampled from ``params`` with optional Gaussian noise (jobs).

    Noisy values are clipped at 0 so the trace stays a valid job count.
    """
    exact = np.array([running_jobs(params, float(t)) for t in times])
    if sigma > 0:
        noise = RngStream(seed, "noise").normal(0.0, sigma, size=len(exact))
        exact = np.maximum(exact + noise, 0.0)
    return [RampUpSample(float(t), float(v)) for t, v in zip(times, exact)]


@dataclass
class Calibration:
    params: RampUpParams
    residuals: tuple  # relative (pull, push)
    candidates: list  # every root found, as RampUpParams


def _params_from_u(u, T, t_push):
    # u = 1/p0, v = p1/p0; the push equation is linear in v once u is fixed
    v = (t_push - 2.0 * math.sqrt(T * u)) / T
    return RampUpParams(1.0 / u, max(v, 0.0) / u)


def calibrate_from_claims(T, t_pull, t_push, target_max_jobs=100.0, grid_points=400):
    """Site parameters reproducing a pull and a push time to results for work ``T``.

    The push closed form fixes ``p1`` given ``p0``, which leaves a single
    equation in ``u = 1/p0`` on ``(0, t_push^2/(4T)]``. Every sign change on a
    log grid is refined with Brent's method; among several roots the one whose
    job ceiling is closest to ``target_max_jobs`` wins.
    """
    for name, value in (("T", T), ("t_pull", t_pull), ("t_push", t_push)):
        if not math.isfinite(value) or value <= 0:
            raise InputError(f"{name} must be finite and > 0, got {value}")
    if t_pull >= t_push:
        raise InputError(f"t_pull ({t_pull}) must be smaller than t_push ({t_push})")

    u_max = t_push * t_push / (4.0 * T)

    def g(u):
        return pull_time_to_results(_params_from_u(u, T, t_push), T) - t_pull

    grid = u_max * np.logspace(-12, 0, grid_points)
    values = []
    for u in grid:
        try:
            values.append(g(u))
        except DomainError:
            values.append(math.nan)
    roots = []
    tol = 1e-12 * t_pull
    for i in range(len(grid) - 1):
        a, b = values[i], values[i + 1]
        if math.isnan(a) or math.isnan(b):
            continue
        if a == 0.0:
            roots.append(grid[i])
        elif a * b < 0:
            roots.append(brentq(g, grid[i], grid[i + 1], xtol=1e-15 * grid[i], rtol=1e-15, maxiter=200))
    if abs(values[-1]) <= tol:
        roots.append(u_max)
    if not roots:
        raise ConvergenceError(
            "no site parameters reproduce these claims",
            {"T": T, "t_pull": t_pull, "t_push": t_push, "ratio": t_pull / t_push},
        )

    candidates = [_params_from_u(u, T, t_push) for u in roots]
    if math.isinf(target_max_jobs):
        best = max(candidates, key=lambda p: p.max_jobs)
    else:
        best = min(candidates, key=lambda p: abs(p.max_jobs - target_max_jobs))
    residuals = (
        abs(pull_time_to_results(best, T) - t_pull) / t_pull,
        abs(push_time_to_results(best, T) - t_push) / t_push,
    )
    if max(residuals) > 1e-6:
        raise ConvergenceError(
            "calibration residuals too large",
            {"residuals": residuals, "params": best},
        )
    return Calibration(best, residuals, candidates)
