"""Physical jump-size bounds and their verification on computed trajectories.

A downward jump from lam is physical when its size equals

    y* = inf{ y in (0, lam] : Phi(y) > 0 },  Phi(y) = int_{lam-y}^{lam} (u - H + 1) dnu,

with +inf when the set is empty; upward jumps are capped by

    inf{ y > 0 : Psi(y) < 0 },  Psi(y) = int_{lam}^{lam+y} (u - H - 1) dnu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PiecewiseConstantProfile, TemperatureProfile, gibbs_thomson, h_nu_integral

SUBDIV = 8
TIE_TOL = 1e-12


@dataclass(frozen=True)
class JumpReport:
    time: float
    lambda_before: float
    lambda_after: float
    lower_bound: float
    upper_bound: float
    verdict: str  # physical | sub-physical | super-physical | melt-exempt | missing-snapshot
    lower_bound_open: float = math.nan

    @property
    def drop(self) -> float:
        return self.lambda_before - self.lambda_after


def _breakpoints(u, lo: float, hi: float, gamma: float) -> np.ndarray:
    """Points where the integrand of Phi/Psi may change sign, plus a sub-grid."""
    if isinstance(u, TemperatureProfile):
        pts = [u.grid[(u.grid > lo) & (u.grid < hi)]]
        if u.patch is not None:
            pts.append(np.array([p for p in u.patch[:2] if lo < p < hi]))
    elif isinstance(u, PiecewiseConstantProfile):
        br = np.asarray(u.breaks, dtype=float)
        pts = [br[(br > lo) & (br < hi)]]
        # integrand (c + 1 - gamma/x) x^(d-1) changes sign at x = gamma/(c +- 1)
        for c in u.values:
            for shift in (1.0, -1.0):
                if c + shift > 0:
                    x = gamma / (c + shift)
                    if lo < x < hi:
                        pts.append(np.array([x]))
    else:
        pts = [np.linspace(lo, hi, 2001)[1:-1]]
    base = np.unique(np.concatenate([np.array([lo, hi]), *pts]))
    fine = base[:-1, None] + (base[1:] - base[:-1])[:, None] * np.linspace(0, 1, SUBDIV, endpoint=False)[None, :]
    return np.unique(np.concatenate([fine.ravel(), [hi]]))


def _antiderivative(u, d: int):
    if hasattr(u, "antiderivative"):
        return lambda y: np.asarray(u.antiderivative(y, d), dtype=float)
    from scipy import integrate

    def f(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.array([integrate.quad(lambda x: u(x) * x ** (d - 1), 0.0, v, limit=200)[0] for v in y])

    return f


def _first_crossing(fn, ys: np.ndarray, positive: bool, tol: float) -> float:
    """inf{y in ys-range : fn(y) > level} (or < level), refined by bisection; nan if none."""
    vals = fn(ys)
    hit = vals > 0 if positive else vals < 0
    idx = np.nonzero(hit)[0]
    if idx.size == 0:
        return math.nan
    i = int(idx[0])
    if i == 0:
        return float(ys[0])
    lo, hi = float(ys[i - 1]), float(ys[i])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        v = float(fn(np.array([mid]))[0])
        if (v > 0) if positive else (v < 0):
            hi = mid
        else:
            lo = mid
    return hi


def phi(u, lam: float, gamma: float, d: int):
    """Phi(y) = int_{lam-y}^{lam} (u - H + 1) dnu as a vectorised function."""
    anti = _antiderivative(u, d)
    f_lam = float(anti(np.array([lam]))[0])

    def fn(y):
        a = lam - np.asarray(y, dtype=float)
        a = np.clip(a, 0.0, lam)
        with np.errstate(invalid="ignore"):
            return (f_lam - anti(a)) - h_nu_integral(a, np.full_like(a, lam), gamma, d) + (lam**d - a**d) / d

    return fn


def psi(u, lam: float, gamma: float, d: int):
    """Psi(y) = int_{lam}^{lam+y} (u - H - 1) dnu as a vectorised function."""
    anti = _antiderivative(u, d)
    f_lam = float(anti(np.array([lam]))[0])

    def fn(y):
        b = lam + np.asarray(y, dtype=float)
        return (anti(b) - f_lam) - h_nu_integral(np.full_like(b, lam), b, gamma, d) - (b**d - lam**d) / d

    return fn


def jump_lower_bound(u, lambda_minus: float, gamma: float, d: int, level: float = 0.0, open_end: bool = False):
    """Minimal physical downward jump from ``lambda_minus``; +inf if Phi never exceeds ``level``.

    ``level = 1/n`` gives the relaxed quantity z_n.  ``open_end`` restricts
    the infimum to (0, lambda_minus) instead of (0, lambda_minus].
    """
    if not lambda_minus > 0:
        raise ValueError("lambda_minus must be positive")
    tol = 1e-12 * max(1.0, lambda_minus)
    fn = phi(u, lambda_minus, gamma, d)
    slope = float(u(lambda_minus - 1e-14 * lambda_minus)) - gibbs_thomson(lambda_minus, gamma) + 1.0
    if level == 0.0 and slope > TIE_TOL:
        return 0.0
    xs = _breakpoints(u, 0.0, lambda_minus, gamma)
    ys = np.unique(lambda_minus - xs)
    ys = ys[ys > 0]
    if open_end:
        ys = ys[ys < lambda_minus]
    y = _first_crossing(lambda v: fn(v) - level, ys, True, tol)
    return math.inf if math.isnan(y) else y


def jump_upper_bound(u_minus, lambda_minus: float, gamma: float, d: int, x_max: float | None = None):
    """Largest admissible upward jump from ``lambda_minus``."""
    fn = psi(u_minus, lambda_minus, gamma, d)
    slope = float(u_minus(lambda_minus + 1e-14 * lambda_minus)) - gibbs_thomson(lambda_minus, gamma) - 1.0
    if slope < -TIE_TOL:
        return 0.0
    if x_max is None:
        x_max = getattr(u_minus, "x_max", math.inf)
        if not math.isfinite(x_max):
            x_max = lambda_minus + 10.0
    xs = _breakpoints(u_minus, lambda_minus, x_max, gamma)
    ys = xs - lambda_minus
    ys = ys[ys > 0]
    y = _first_crossing(fn, ys, False, 1e-12 * max(1.0, lambda_minus))
    return math.inf if math.isnan(y) else y


def classify(drop: float, lower: float, upper: float, tol: float, melt: bool) -> str:
    if drop < 0:
        return "physical" if -drop <= upper + tol else "super-physical"
    if melt:
        return "melt-exempt"
    if drop < lower - tol:
        return "sub-physical"
    if drop > lower + tol:
        return "super-physical"
    return "physical"


def verify_trajectory(result, tol: float | None = None, source: str = "pre-step") -> list[JumpReport]:
    """Check every recorded jump of an Euler run against the physical bounds.

    ``source`` picks the proxy for u(t-).  ``pre-step`` (default) is the
    profile at the grid time before the jump, which is exact for a jump at
    time zero.  ``pre-jump`` is the propagated profile just before the
    boundary update; it carries a boundary layer with u = H(lam) at lam, so its
    lower bound is always 0.
    """
    if source not in ("pre-step", "pre-jump"):
        raise ValueError(f"unknown profile source {source!r}")
    cfg = result.cfg
    tol = 2.0 * cfg.mesh if tol is None else tol
    reports = []
    for t, before, after in result.path.jumps:
        step = int(round(t / cfg.delta_t))
        u = result.snapshot(step, source)
        melt = result.melt_step is not None and step == result.melt_step
        if u is None:
            reports.append(JumpReport(t, before, after, math.nan, math.nan, "missing-snapshot"))
            continue
        lower = jump_lower_bound(u, before, cfg.gamma, cfg.d)
        lower_open = jump_lower_bound(u, before, cfg.gamma, cfg.d, open_end=True)
        upper = jump_upper_bound(u, before, cfg.gamma, cfg.d)
        verdict = classify(before - after, lower, upper, tol, melt)
        if melt and before - after > lower + tol:
            verdict = "super-physical"
        reports.append(JumpReport(t, before, after, lower, upper, verdict, lower_open))
    return reports


def z_n(u, lambda_minus: float, gamma: float, d: int, n: int) -> float:
    """Relaxed bound inf{y : Phi(y) > 1/n}; non-increasing in n, it decreases to the lower bound."""
    return jump_lower_bound(u, lambda_minus, gamma, d, level=1.0 / n)
