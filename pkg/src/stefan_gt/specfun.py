"""Bessel-process special functions, hitting laws and exact samplers.

The d-dimensional Bessel process R has generator 1/2 f'' + (d-1)/(2x) f'.
Its Bessel index is nu = d/2 - 1, so odd dimensions give half-integer orders
for which I and K are elementary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

_HALF_INT_TOL = 1e-12


@dataclass(frozen=True)
class HittingLawQuery:
    x: float
    lam: float
    d: int
    theta: float | None = None
    horizon: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("barrier must be positive (tau_0 is infinite by convention)")
        if self.x < 0:
            raise ValueError("start radius must be non-negative")


def _half_integer(nu: float) -> int | None:
    """Return n if |nu| = n + 1/2, else None."""
    n = abs(nu) - 0.5
    if n >= 0 and abs(n - round(n)) < _HALF_INT_TOL:
        return int(round(n))
    return None


def bessel_k(nu: float, z, scaled: bool = False):
    """Modified Bessel function of the second kind K_nu(z).

    Half-integer orders use the terminating closed form
    K_{n+1/2}(z) = sqrt(pi/(2z)) e^{-z} sum_k (n+k)!/(k!(n-k)!) (2z)^{-k}.
    With ``scaled=True`` the factor e^{-z} is dropped (returns e^z K_nu(z)).
    """
    za = np.asarray(z, dtype=float)
    if np.any(za <= 0):
        raise ValueError("bessel_k needs z > 0")
    n = _half_integer(nu)
    if n is not None:
        s = np.zeros_like(za)
        for k in range(n + 1):
            s = s + math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k)) * (2 * za) ** (-k)
        out = np.sqrt(np.pi / (2 * za)) * s
        if not scaled:
            out = out * np.exp(-za)
    else:
        out = special.kve(nu, za) if scaled else special.kv(nu, za)
    if np.any(np.isinf(out)):
        warnings.warn("bessel_k overflowed to +inf", RuntimeWarning, stacklevel=2)
    return float(out) if np.ndim(z) == 0 else out


def bessel_i(nu: float, z, scaled: bool = False):
    """Modified Bessel function of the first kind I_nu(z), z >= 0.

    Orders +-1/2 are elementary (sinh, cosh); other orders go through
    ``scipy.special.iv``.
    """
    za = np.asarray(z, dtype=float)
    if np.any(za < 0):
        raise ValueError("bessel_i needs z >= 0")
    n = _half_integer(nu)
    if n is not None and nu in (-0.5, 0.5) and np.all(za > 0):
        pref = np.sqrt(2.0 / (np.pi * za))
        if scaled:
            c, s = 0.5 * (1 + np.exp(-2 * za)), 0.5 * (1 - np.exp(-2 * za))
        else:
            c, s = np.cosh(za), np.sinh(za)
        out = pref * (s if nu > 0 else c)
    else:
        out = special.ive(nu, za) if scaled else special.iv(nu, za)
    return float(out) if np.ndim(z) == 0 else out


def _radial_i(nu: float, z: np.ndarray) -> np.ndarray:
    """z^{-nu} I_nu(z) e^{-z}, finite at z = 0 where it equals 2^{-nu}/Gamma(nu+1)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1e-8
    out[small] = 2.0 ** (-nu) / math.gamma(nu + 1)
    zz = z[~small]
    out[~small] = zz ** (-nu) * special.ive(nu, zz)
    return out


def hit_laplace(x, lam: float, d: int, theta: float):
    """E^x[exp(-theta * tau_lam)] for the d-dimensional Bessel process.

    Above the barrier the ratio uses x^{1-d/2} K_{d/2-1}(x sqrt(2 theta));
    below it the same ratio with I_{d/2-1} (reflection at 0 for d = 1).
    """
    if not lam > 0 or not theta > 0:
        raise ValueError("need lam > 0 and theta > 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0):
        raise ValueError("x must be non-negative")
    nu = d / 2.0 - 1.0
    kap = math.sqrt(2.0 * theta)
    out = np.ones_like(xa)
    up = xa > lam
    if np.any(up):
        xu = xa[up]
        ratio = bessel_k(nu, xu * kap, scaled=True) / bessel_k(nu, lam * kap, scaled=True)
        out[up] = (xu / lam) ** (-nu) * ratio * np.exp(-kap * (xu - lam))
    down = xa < lam
    if np.any(down):
        xd = xa[down]
        num = _radial_i(nu, xd * kap)
        den = _radial_i(nu, np.array([lam * kap]))[0]
        out[down] = num / den * np.exp(kap * (xd - lam))
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out


def hit_eventual(x, lam: float, d: int):
    """P^x(tau_lam < infinity): (lam/x)^(d-2) above the barrier when d >= 3, else 1."""
    xa = np.asarray(x, dtype=float)
    if d >= 3:
        out = np.where(xa > lam, (lam / np.where(xa > 0, xa, 1.0)) ** (d - 2), 1.0)
    else:
        out = np.ones_like(xa)
    return float(out) if np.ndim(x) == 0 else out


def transition_density(s: float, x, y, d: int):
    """Density psi(s; x, y) in y of the Bessel process started at x.

    psi = (y/s) (y/x)^nu exp(-(x^2+y^2)/(2s)) I_nu(xy/s), nu = d/2 - 1,
    with the x -> 0 limit 2 y^{d-1} exp(-y^2/(2s)) / ((2s)^{d/2} Gamma(d/2)).
    """
    if not s > 0:
        raise ValueError("s must be positive")
    xa, ya = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    nu = d / 2.0 - 1.0
    z = xa * ya / s
    # (y/x)^nu I_nu(z) = y^{2 nu} s^{-nu} z^{-nu} I_nu(z)
    core = _radial_i(nu, z.ravel()).reshape(z.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (ya / s) * ya ** (2 * nu) * s ** (-nu) * core * np.exp(-((xa - ya) ** 2) / (2 * s))
    out = np.where(ya > 0, out, 0.0 if d > 1 else math.sqrt(2 / (math.pi * s)) * np.exp(-xa**2 / (2 * s)))
    return float(out) if out.ndim == 0 else out


def hit_probability_halfline(dist, t: float):
    """P(Brownian motion started dist away hits a level within time t) = erfc(dist/sqrt(2t))."""
    return special.erfc(np.asarray(dist, dtype=float) / math.sqrt(2.0 * t))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_bessel(x, s, d: int, rng: np.random.Generator):
    """Exact draw of R_s given R_0 = x (vectorised in x and s).

    R_s^2 = (x + sqrt(s) Z)^2 + s * chi2_{d-1}, the squared-Bessel transition.
    """
    xa = np.asarray(x, dtype=float)
    sa = np.broadcast_to(np.asarray(s, dtype=float), xa.shape)
    root = np.sqrt(sa)
    first = xa + root * rng.standard_normal(xa.shape)
    if d == 1:
        return np.abs(first)
    rest = sa * rng.chisquare(d - 1, size=xa.shape)
    return np.sqrt(first * first + rest)


def bridge_cross_probability(a, b, lam, dt):
    """Probability that a Brownian bridge from a to b over dt touches lam.

    Zero-drift approximation; used as the crossing correction between exact
    Bessel transitions.  Returns 1 when a and b straddle the barrier.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    prod = (a - lam) * (b - lam)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        p = np.exp(-2.0 * prod / dt)
    return np.where(prod <= 0, 1.0, np.minimum(p, 1.0))


def adaptive_step(dist, dt_min: float, dt_max: float, factor: float = 0.5):
    """Step length clip((factor*dist)^2, dt_min, dt_max) for barrier-aware paths."""
    return np.clip((factor * np.asarray(dist)) ** 2, dt_min, dt_max)


def simulate_killed(
    x0,
    lam: float,
    d: int,
    horizon,
    rng: np.random.Generator,
    dt_min: float = 1e-5,
    dt_max: float = 2e-2,
) -> tuple[np.ndarray, np.ndarray]:
    """Run Bessel paths from ``x0`` up to ``horizon`` or the first touch of ``lam``.

    Returns ``(crossed, final_position)``.  Transitions are exact; crossings
    between sample points are caught by the bridge test.
    """
    pos = np.array(x0, dtype=float, copy=True).ravel()
    n = pos.size
    horizon = np.broadcast_to(np.asarray(horizon, dtype=float), (n,))
    side = np.sign(pos - lam)
    t = np.zeros(n)
    crossed = side == 0
    live = np.nonzero(~crossed & (horizon > 0))[0]
    while live.size:
        xs = pos[live]
        dt = adaptive_step(np.abs(xs - lam), dt_min, dt_max)
        dt = np.minimum(dt, horizon[live] - t[live])
        new = sample_bessel(xs, dt, d, rng)
        p = bridge_cross_probability(xs, new, lam, dt)
        hit = (side[live] * (new - lam) <= 0) | (rng.random(live.size) < p)
        t[live] += dt
        pos[live] = np.where(hit, lam, new)
        crossed[live[hit]] = True
        done = hit | (t[live] >= horizon[live] * (1 - 1e-14))
        live = live[~done]
    return crossed, pos


def mc_hit_laplace(
    x: float,
    lam: float,
    d: int,
    theta: float,
    n: int,
    rng: np.random.Generator,
    dt_min: float = 1e-5,
    dt_max: float = 2e-2,
) -> tuple[float, float]:
    """Monte Carlo estimate of E^x[exp(-theta tau_lam)] with its standard error.

    Uses E[exp(-theta tau)] = P(tau < e) for an independent e ~ Exp(theta).
    """
    clock = rng.exponential(1.0 / theta, size=n)
    hit, _ = simulate_killed(np.full(n, float(x)), lam, d, clock, rng, dt_min, dt_max)
    est = hit.mean()
    return float(est), float(math.sqrt(max(est * (1 - est), 1e-300) / n))
