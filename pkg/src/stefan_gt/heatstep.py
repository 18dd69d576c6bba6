"""One time step of the radial heat equation with the boundary frozen at lam.

For x != lam the new profile is

    E^x[1{tau_lam < dt} H(lam)] + E^x[1{tau_lam >= dt} u_in(R_dt)],

i.e. the radial heat equation on each side of lam with Dirichlet value H(lam).
Three interchangeable backends evaluate it:

* ``images``: exact kernel convolution for d = 1 and d = 3 (for d = 3 the map
  w = x u turns the radial equation into the flat one);
* ``finite-difference``: implicit lumped-P1 scheme, any d (production path);
* ``monte-carlo``: exact Bessel transitions with a bridge crossing test.

``horizon_kind="exponential"`` replaces the fixed dt with an Exp(1/dt) clock
(resolvent with theta = 1/dt); only images and monte-carlo support it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .core import BoundaryPath, ConfigError, DomainError, TemperatureProfile, gibbs_thomson, hat_moments, _moments
from .rng import ordered_map, stream
from .specfun import adaptive_step, bridge_cross_probability, sample_bessel, simulate_killed


@dataclass(frozen=True)
class FrozenStepRequest:
    u_in: TemperatureProfile
    lam: float
    dt: float
    d: int
    gamma: float
    backend: str = "finite-difference"
    horizon_kind: str = "deterministic"
    fd_substeps: int = 4
    fd_theta: float = 1.0
    mc_paths: int = 20000
    seed: int = 0
    stream_key: tuple = ()
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.lam < self.u_in.x_max:
            raise DomainError(f"frozen radius {self.lam} must lie strictly inside (0, {self.u_in.x_max})")


def step_frozen(req: FrozenStepRequest) -> TemperatureProfile:
    """Propagate ``req.u_in`` over one step with the boundary frozen at ``req.lam``."""
    if req.backend == "finite-difference":
        if req.horizon_kind != "deterministic":
            raise ConfigError("finite-difference backend only supports deterministic horizons")
        return _step_fd(req)
    if req.backend == "images":
        return _step_images(req)
    if req.backend == "monte-carlo":
        return step_frozen_mc(req)[0]
    raise ConfigError(f"unknown backend {req.backend!r}")


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def _step_fd(req: FrozenStepRequest) -> TemperatureProfile:
    u = req.u_in
    d, h, n = req.d, u.mesh, u.n_nodes
    mass = hat_moments(h, n, d)
    m0, _ = _moments(h * np.arange(n - 1), h, d)
    cond = 0.5 * m0 / h**2  # stiffness of each cell
    j = int(round(req.lam / h))
    j = min(max(j, 0), n - 2)
    hval = gibbs_thomson(req.lam, req.gamma)

    theta = req.fd_theta
    nsub = max(1, int(req.fd_substeps))
    tau = req.dt / nsub
    if not 0.5 <= theta <= 1.0:
        raise ConfigError("fd_theta must lie in [0.5, 1]")
    if theta < 1.0:
        diag_k = np.zeros(n)
        diag_k[:-1] += cond
        diag_k[1:] += cond
        limit = np.min(mass[1:-1] / ((1 - theta) * diag_k[1:-1]))
        if tau > limit:
            raise ConfigError(
                f"theta-scheme positivity bound violated: dt/substeps = {tau:.3g} > "
                f"min m_k/((1-theta) a_k) = {limit:.3g}; raise fd_substeps or use fd_theta=1"
            )

    # banded matrix of M/tau + theta*A, Dirichlet rows at j and n-1
    upper = np.zeros(n)
    diag = mass / tau
    lower = np.zeros(n)
    diag = diag.copy()
    diag[:-1] += theta * cond
    diag[1:] += theta * cond
    upper[1:] = -theta * cond
    lower[:-1] = -theta * cond
    for k in (j, n - 1):
        diag[k] = 1.0
        if k + 1 < n:
            upper[k + 1] = 0.0
        if k - 1 >= 0:
            lower[k - 1] = 0.0
    ab = np.vstack([upper, diag, lower])

    v = u.conservative_nodes(d).copy()
    for _ in range(nsub):
        rhs = mass / tau * v
        if theta < 1.0:
            flux = np.zeros(n)
            diffs = cond * (v[1:] - v[:-1])
            flux[:-1] += diffs
            flux[1:] -= diffs
            rhs = rhs + (1 - theta) * flux
        rhs[j] = hval
        rhs[-1] = 0.0
        v = linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
    return TemperatureProfile(h, v)


# ---------------------------------------------------------------------------
# method of images
# ---------------------------------------------------------------------------


class _Gaussian:
    """Heat kernel of 1/2 d^2/dx^2 at time t."""

    def __init__(self, t: float):
        self.t = t
        self.scale = math.sqrt(t)
        self.reach = 12.0 * self.scale

    def cdf(self, z):
        return special.ndtr(z / self.scale)

    def moment(self, z):
        # int_{-inf}^z s k(s) ds
        return -self.t * np.exp(-0.5 * (z / self.scale) ** 2) / (self.scale * math.sqrt(2 * math.pi))


class _Laplace:
    """Resolvent kernel theta*int e^{-theta s} p_s ds = (k/2) exp(-k|z|), k = sqrt(2 theta)."""

    def __init__(self, theta: float):
        self.k = math.sqrt(2.0 * theta)
        self.reach = 40.0 / self.k

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        e = np.exp(-self.k * np.abs(z))
        return np.where(z < 0, 0.5 * e, 1.0 - 0.5 * e)

    def moment(self, z):
        z = np.asarray(z, dtype=float)
        e = np.exp(-self.k * np.abs(z))
        return np.where(z < 0, 0.5 * e * (z - 1.0 / self.k), -0.5 * e * (z + 1.0 / self.k))


def _segments(u: TemperatureProfile, lo: float, hi: float, d: int, gamma_shift: tuple | None):
    """Linear pieces (y0, y1, w0, w1) of the transformed input on [lo, hi].

    w = x u for d = 3 and w = u for d = 1; ``gamma_shift = (c, linear)``
    subtracts the steady state c*y/lam (linear) or c (constant).
    """
    pts = [u.grid[(u.grid > lo) & (u.grid < hi)], [lo, hi]]
    if u.patch is not None:
        a, b, _ = u.patch
        pts.append([p for p in (a, b) if lo < p < hi])
    br = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in pts]))
    y0, y1 = br[:-1], br[1:]
    mid = 0.5 * (y0 + y1)
    if u.patch is not None:
        a, b, gamma = u.patch
        in_patch = (mid >= a) & (mid <= b)
    else:
        in_patch = np.zeros(mid.shape, dtype=bool)

    def branch(y):
        lin = u._interp(y)
        if u.patch is None:
            return lin
        return np.where(in_patch, gibbs_thomson(y, u.patch[2]), lin)

    f0, f1 = branch(y0), branch(y1)
    if d == 3:
        f0, f1 = f0 * y0, f1 * y1
    if gamma_shift is not None:
        c, lam, linear = gamma_shift
        f0 = f0 - (c * y0 / lam if linear else c)
        f1 = f1 - (c * y1 / lam if linear else c)
    return y0, y1, f0, f1


def _convolve(x, seg, kern, shift: float, sign: int) -> np.ndarray:
    """sum over segments of int w(y) k(x + sign*y - shift) dy, windowed to the kernel reach."""
    y0, y1, w0, w1 = seg
    if y0.size == 0:
        return np.zeros_like(x)
    beta = (w1 - w0) / (y1 - y0)
    alpha = w0 - beta * y0
    # segment range with |x + sign*y - shift| < reach
    if sign < 0:
        lo_y, hi_y = x - shift - kern.reach, x - shift + kern.reach
    else:
        lo_y, hi_y = shift - x - kern.reach, shift - x + kern.reach
    first = np.searchsorted(y1, lo_y, side="left")
    last = np.searchsorted(y0, hi_y, side="right")
    width = int(np.max(last - first, initial=0))
    if width <= 0:
        return np.zeros_like(x)
    idx = first[:, None] + np.arange(width)[None, :]
    valid = idx < last[:, None]
    idx = np.minimum(idx, y0.size - 1)
    a, b = alpha[idx], beta[idx]
    s0, s1 = y0[idx], y1[idx]
    c = (x - shift)[:, None]
    if sign > 0:
        p, q = a - b * c, b
        zl, zu = s0 + c, s1 + c
    else:
        p, q = a + b * c, -b
        zl, zu = c - s1, c - s0
    vals = p * (kern.cdf(zu) - kern.cdf(zl)) + q * (kern.moment(zu) - kern.moment(zl))
    return np.sum(np.where(valid, vals, 0.0), axis=1)


def _images_eval(u: TemperatureProfile, lam: float, d: int, gamma: float, kern, x: np.ndarray) -> np.ndarray:
    """Evaluate the frozen-boundary propagation at points ``x`` (no x == 0 for d = 3)."""
    c = lam * gibbs_thomson(lam, gamma) if d == 3 else gibbs_thomson(lam, gamma)
    out = np.empty_like(x)

    outer = x > lam
    if np.any(outer):
        xo = x[outer]
        seg = _segments(u, lam, u.x_max, d, None)
        w = 2.0 * c * (1.0 - kern.cdf(xo - lam))
        w += _convolve(xo, seg, kern, 0.0, -1) - _convolve(xo, seg, kern, 2 * lam, +1)
        out[outer] = w

    inner = x < lam
    if np.any(inner):
        xi = x[inner]
        linear = d == 3
        seg = _segments(u, 0.0, lam, d, (c, lam, linear))
        n_img = int(math.ceil(kern.reach / (2 * lam))) + 1
        w = c * xi / lam if linear else np.full_like(xi, c)
        for k in range(-n_img, n_img + 1):
            if d == 3:
                w += _convolve(xi, seg, kern, 2 * k * lam, -1) - _convolve(xi, seg, kern, -2 * k * lam, +1)
            else:
                sgn = -1.0 if k % 2 else 1.0
                w += sgn * (_convolve(xi, seg, kern, 2 * k * lam, -1) + _convolve(xi, seg, kern, 2 * k * lam, +1))
        out[inner] = w
    out[x == lam] = c
    if d == 3:
        out = out / x
    return out


def _step_images(req: FrozenStepRequest) -> TemperatureProfile:
    d = req.d
    if d not in (1, 3):
        raise ConfigError("images backend supports d = 1 and d = 3 only")
    kern = _Gaussian(req.dt) if req.horizon_kind == "deterministic" else _Laplace(1.0 / req.dt)
    x = req.u_in.grid.copy()
    if d == 3:
        x[0] = 1e-6 * min(req.lam, req.u_in.mesh)
    vals = _images_eval(req.u_in, req.lam, d, req.gamma, kern, x)
    vals[-1] = 0.0
    return TemperatureProfile(req.u_in.mesh, np.maximum(vals, 0.0))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

_MC_BLOCK = 64


def step_frozen_mc(req: FrozenStepRequest) -> tuple[TemperatureProfile, np.ndarray]:
    """Monte Carlo backend; returns the profile and per-node standard errors."""
    u = req.u_in
    x = u.grid
    hval = gibbs_thomson(req.lam, req.gamma)
    n = req.mc_paths

    def node_block(start: int):
        idx = np.arange(start, min(start + _MC_BLOCK, x.size))
        rng = stream(req.seed, "mc-step", *req.stream_key, start)
        x0 = np.repeat(x[idx], n)
        if req.horizon_kind == "deterministic":
            horizon = np.full(x0.size, req.dt)
        else:
            horizon = rng.exponential(req.dt, size=x0.size)
        dt_max = min(req.dt / 20, 2e-2)
        hit, pos = simulate_killed(x0, req.lam, req.d, horizon, rng, dt_min=dt_max / 1000, dt_max=dt_max)
        payoff = np.where(hit, hval, u(pos)).reshape(idx.size, n)
        return payoff.mean(axis=1), payoff.std(axis=1, ddof=1) / math.sqrt(n)

    parts = ordered_map(node_block, range(0, x.size, _MC_BLOCK), req.threads)
    mean = np.concatenate([p[0] for p in parts])
    err = np.concatenate([p[1] for p in parts])
    mean[-1], err[-1] = 0.0, 0.0
    at_lam = np.isclose(x, req.lam)
    mean[at_lam], err[at_lam] = hval, 0.0
    return TemperatureProfile(u.mesh, mean), err


# ---------------------------------------------------------------------------
# backward Feynman-Kac along a full boundary path
# ---------------------------------------------------------------------------


def backward_fk_estimate(
    path: BoundaryPath,
    t: float,
    x: float,
    u0,
    n: int,
    rng: np.random.Generator,
    d: int,
    gamma: float,
    dt_max: float | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate of u(t, x) against a whole (jumpy) boundary path.

    The path is read backwards: at time s after the start the barrier is
    Lambda_{t-s}; a path stops at the first s with
    (R_s - Lambda_{t-s}) (x - Lambda_t) <= 0 and pays H(R_s), otherwise it pays
    u0(R_t).  Returns (estimate, standard error).
    """
    lam_t = path.at(t)
    side = np.sign(x - lam_t)
    step = path.delta_t if math.isfinite(path.delta_t) else max(t, 1e-12)
    if dt_max is None:
        dt_max = min(step / 20, 2e-2)
    pos = np.full(n, float(x))
    value = np.zeros(n)
    live = np.ones(n, dtype=bool)
    if side == 0:
        return gibbs_thomson(x, gamma), 0.0
    # backward segments: s in (t - (m+1) step, t - m step] sees Lambda_m
    m = int(np.searchsorted(path.times, t + 1e-12 * max(1.0, t), side="right") - 1)
    s = 0.0
    while m >= 0 and np.any(live):
        seg_end = t - path.times[m] if m > 0 else t
        lam = float(path.radii[m])
        length = seg_end - s
        if length > 0 and lam > 0:
            idx = np.nonzero(live)[0]
            hit, new = simulate_killed(pos[idx], lam, d, length, rng, dt_min=dt_max / 1000, dt_max=dt_max)
            # paths starting on the far side of a moved barrier hit at once
            pos[idx] = new
            value[idx[hit]] = gibbs_thomson(new[hit], gamma)
            live[idx[hit]] = False
        elif length > 0:
            idx = np.nonzero(live)[0]
            pos[idx] = sample_bessel(pos[idx], length, d, rng)
        s = seg_end
        m -= 1
        if m >= 0:
            lam_next = float(path.radii[m])
            idx = np.nonzero(live)[0]
            crossed = (pos[idx] - lam_next) * side <= 0
            value[idx[crossed]] = gibbs_thomson(pos[idx[crossed]], gamma)
            live[idx[crossed]] = False
    idx = np.nonzero(live)[0]
    value[idx] = np.asarray(u0(pos[idx]), dtype=float)
    return float(value.mean()), float(value.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
