"""Domain types, the radial measure nu(dx) = x^(d-1) dx and the Gibbs-Thomson law.

Profiles are always stored as nu-densities (plain temperature values), never
pre-multiplied by x^(d-1).  Every nu-integral in the package goes through the
same exact per-cell moments so that the boundary selection in
:mod:`stefan_gt.euler` and the energy audit agree to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy import integrate

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class DomainError(ValueError):
    """An argument lies outside the computational domain."""


# ---------------------------------------------------------------------------
# Gibbs-Thomson law
# ---------------------------------------------------------------------------


def gibbs_thomson(x, gamma: float):
    """Boundary temperature H(x) = gamma / x, with H(0) := 0."""
    xa = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(xa > 0, gamma / np.where(xa > 0, xa, 1.0), 0.0)
    if np.ndim(x) == 0:
        return float(out)
    return out


def h_nu_integral(a, b, gamma: float, d: int):
    """Exact integral of H against nu over [a, b]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if d == 1:
        with np.errstate(divide="ignore"):
            out = np.where(b > a, gamma * (np.log(b) - np.log(a)), 0.0)
    else:
        out = gamma * (b ** (d - 1) - a ** (d - 1)) / (d - 1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Exact moments of x^(d-1) on an interval
# ---------------------------------------------------------------------------


def _moments(x0, length, d: int):
    """Return (int x^(d-1), int (x - x0) x^(d-1)) over [x0, x0 + length].

    Expanded in t = x - x0 so every term is non-negative (no cancellation).
    """
    x0 = np.asarray(x0, dtype=float)
    length = np.asarray(length, dtype=float)
    m0 = np.zeros(np.broadcast(x0, length).shape)
    m1 = np.zeros_like(m0)
    for j in range(d):
        c = math.comb(d - 1, j) * x0 ** (d - 1 - j)
        m0 = m0 + c * length ** (j + 1) / (j + 1)
        m1 = m1 + c * length ** (j + 2) / (j + 2)
    return m0, m1


def hat_moments(mesh: float, n_nodes: int, d: int) -> np.ndarray:
    """nu-mass of each P1 hat function on a uniform grid (the lumped mass)."""
    x = mesh * np.arange(n_nodes - 1)
    m0, m1 = _moments(x, mesh, d)
    right = m1 / mesh  # weight of node k+1 in cell k
    left = m0 - right  # weight of node k in cell k
    out = np.zeros(n_nodes)
    out[:-1] += left
    out[1:] += right
    return out


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TemperatureProfile:
    """Piecewise-linear nu-density on the uniform grid 0, h, ..., x_max.

    ``patch = (a, b, gamma)`` marks an interval on which the function equals
    H(x) = gamma/x exactly (the freeze rule); outside it the function is the
    linear interpolant of ``values``.  Nodes inside the patch still carry their
    underlying values; use :meth:`node_values` for the visible ones.
    """

    mesh: float
    values: np.ndarray
    patch: tuple[float, float, float] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("profile needs at least two nodes")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.patch is not None:
            a, b, _ = self.patch
            if not (0.0 <= a <= b <= self.x_max + 1e-12):
                raise DomainError(f"patch [{a}, {b}] outside grid")

    @classmethod
    def from_function(cls, f: Callable, mesh: float, x_max: float) -> "TemperatureProfile":
        n = int(round(x_max / mesh))
        x = mesh * np.arange(n + 1)
        return cls(mesh, np.asarray(f(x), dtype=float) * np.ones_like(x))

    @property
    def n_nodes(self) -> int:
        return self.values.size

    @property
    def x_max(self) -> float:
        return self.mesh * (self.n_nodes - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.mesh * np.arange(self.n_nodes)

    def node_values(self) -> np.ndarray:
        if self.patch is None:
            return self.values
        a, b, gamma = self.patch
        x = self.grid
        inside = (x >= a) & (x <= b)
        out = self.values.copy()
        out[inside] = gibbs_thomson(x[inside], gamma)
        return out

    def with_values(self, values) -> "TemperatureProfile":
        return TemperatureProfile(self.mesh, np.asarray(values, dtype=float))

    def _interp(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.grid, self.values, right=0.0)

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        out = self._interp(xa)
        if self.patch is not None:
            a, b, gamma = self.patch
            inside = (xa >= a) & (xa <= b)
            out = np.where(inside, gibbs_thomson(xa, gamma), out)
        return float(out) if np.ndim(x) == 0 else out

    # -- nu integrals -------------------------------------------------------

    def _cumulative(self, d: int) -> np.ndarray:
        key = ("cum", d)
        if key not in self._cache:
            x = self.grid[:-1]
            m0, m1 = _moments(x, self.mesh, d)
            f = self.values
            cells = f[:-1] * m0 + (f[1:] - f[:-1]) / self.mesh * m1
            self._cache[key] = np.concatenate([[0.0], np.cumsum(cells)])
        return self._cache[key]

    def _base_antiderivative(self, y, d: int):
        y = np.asarray(y, dtype=float)
        cum = self._cumulative(d)
        j = np.clip(np.floor(y / self.mesh).astype(int), 0, self.n_nodes - 2)
        x0 = j * self.mesh
        length = np.clip(y - x0, 0.0, self.mesh)
        m0, m1 = _moments(x0, length, d)
        f = self.values
        return cum[j] + f[j] * m0 + (f[j + 1] - f[j]) / self.mesh * m1

    def antiderivative(self, y, d: int):
        """F(y) = integral of the profile against nu over [0, y]."""
        ya = np.asarray(y, dtype=float)
        if np.any(ya < -1e-12) or np.any(ya > self.x_max * (1 + 1e-12) + 1e-12):
            raise DomainError(f"integration bound outside [0, {self.x_max}]")
        ya = np.clip(ya, 0.0, self.x_max)
        base = self._base_antiderivative(ya, d)
        if self.patch is not None:
            a, b, gamma = self.patch
            yc = np.clip(ya, a, b)
            base = (
                base
                - (self._base_antiderivative(yc, d) - self._base_antiderivative(a, d))
                + h_nu_integral(a, yc, gamma, d)
            )
        return float(base) if np.ndim(y) == 0 else base

    def mass(self, d: int) -> float:
        return self.antiderivative(self.x_max, d)

    def conservative_nodes(self, d: int) -> np.ndarray:
        """Nodal values whose P1 nu-mass equals the exact (patched) mass.

        Only cells meeting the patch are touched.  Each such cell's mass defect
        is moved onto its two nodes, proportionally to their headroom inside the
        cell's own range of values, so the result stays non-negative and
        below the local maximum.
        """
        v = self.node_values().astype(float).copy()
        if self.patch is None:
            return v
        a, b, gamma = self.patch
        h = self.mesh
        first = max(int(math.floor(a / h)) - 1, 0)
        last = min(int(math.ceil(b / h)) + 1, self.n_nodes - 1)
        cells = np.arange(first, last)
        x0 = cells * h
        m0, m1 = _moments(x0, h, d)
        right = m1 / h
        left = m0 - right
        exact = self.antiderivative(x0 + h, d) - self.antiderivative(x0, d)
        if not np.all(np.isfinite(exact)):
            return v
        hats = hat_moments(h, self.n_nodes, d)
        base = v.copy()
        delta = np.zeros_like(v)
        for c, e, wl, wr in zip(cells, exact, left, right):
            defect = e - (base[c] * wl + base[c + 1] * wr)
            if defect == 0.0:
                continue
            lo_x, hi_x = c * h, (c + 1) * h
            probes = [lo_x, hi_x] + [p for p in (a, b) if lo_x <= p <= hi_x]
            samples = [float(self(p)) for p in probes]
            samples += [float(self._interp(np.asarray(p))) for p in (a, b) if lo_x <= p <= hi_x]
            samples += [gibbs_thomson(p, gamma) for p in (a, b) if lo_x <= p <= hi_x and p > 0]
            target = max(samples) if defect > 0 else min(samples)
            room = np.array([target - base[c], target - base[c + 1]])
            room[np.sign(room) != np.sign(defect)] = 0.0
            capacity = hats[c] * room[0] + hats[c + 1] * room[1]
            if capacity == 0.0:
                # no headroom in the cell; spread evenly instead
                delta[c] += defect / (hats[c] + hats[c + 1])
                delta[c + 1] += defect / (hats[c] + hats[c + 1])
                continue
            s = defect / capacity
            delta[c] += s * room[0]
            delta[c + 1] += s * room[1]
        return v + delta


@dataclass(frozen=True)
class PiecewiseConstantProfile:
    """Step function ``values[i]`` on ``[breaks[i], breaks[i+1])``, zero beyond.

    Exactly integrable; used for closed-form test cases and jump-bound checks.
    """

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breaks) != len(self.values) + 1:
            raise ValueError("need len(breaks) == len(values) + 1")
        if any(b1 < b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must be non-decreasing")

    @property
    def x_max(self) -> float:
        return math.inf

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breaks, xa, side="right") - 1
        vals = np.concatenate([self.values, [0.0]])
        idx = np.where((idx < 0) | (idx >= len(self.values)), len(self.values), idx)
        out = vals[idx]
        return float(out) if np.ndim(x) == 0 else out

    def antiderivative(self, y, d: int):
        ya = np.asarray(y, dtype=float)
        total = np.zeros_like(ya)
        for lo, hi, v in zip(self.breaks[:-1], self.breaks[1:], self.values):
            top = np.clip(ya, lo, hi)
            total = total + v * (top**d - lo**d) / d
        return float(total) if np.ndim(y) == 0 else total


Density = Union[TemperatureProfile, PiecewiseConstantProfile, Callable]


def nu_integral(f: Density, a: float, b: float, d: int) -> float:
    """Integral of ``f`` against nu(dx) = x^(d-1) dx over [a, b].

    Grid profiles are integrated exactly as piecewise-linear functions;
    plain callables fall back to adaptive quadrature.
    """
    if a < 0 or b < a:
        raise DomainError(f"need 0 <= a <= b, got [{a}, {b}]")
    if hasattr(f, "antiderivative"):
        if b > f.x_max * (1 + 1e-12) + 1e-12:
            raise DomainError(f"upper bound {b} beyond x_max={f.x_max}")
        return float(f.antiderivative(b, d) - f.antiderivative(a, d))
    val, _ = integrate.quad(lambda x: f(x) * x ** (d - 1), a, b, limit=200, epsabs=1e-13, epsrel=1e-12)
    return float(val)


def sup_norm(profile: TemperatureProfile) -> float:
    return float(np.max(profile.node_values()))


# ---------------------------------------------------------------------------
# Configuration and path records
# ---------------------------------------------------------------------------

BACKENDS = ("finite-difference", "images", "monte-carlo")


@dataclass
class SimConfig:
    d: int
    gamma: float
    delta_t: float
    mesh: float
    horizon: float
    lambda_init: float
    u_init: str = "indicator 0 0.81"
    x_max: float | None = None
    backend: str = "finite-difference"
    horizon_kind: str = "deterministic"
    seed: int = 0
    normalize_mass: bool = False
    snapshot_times: tuple[float, ...] = ()
    fd_substeps: int = 4
    fd_theta: float = 1.0
    mc_paths: int = 20000
    threads: int = 1
    n_particles: int = 200000
    emission_delta: float = 0.02
    jump_constant: float | None = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be an integer >= 1, got {self.d}")
        self.d = int(self.d)
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not self.delta_t > 0:
            raise ConfigError("delta_t must be positive")
        if not self.horizon >= 0:
            raise ConfigError("horizon must be non-negative")
        if not self.lambda_init > 0:
            raise ConfigError("lambda_init must be positive")
        if not self.mesh > 0:
            raise ConfigError("mesh must be positive")
        if self.mesh >= self.lambda_init:
            raise ConfigError("mesh exceeds initial radius")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if self.horizon_kind not in ("deterministic", "exponential"):
            raise ConfigError(f"unknown horizon_kind {self.horizon_kind!r}")
        if self.horizon_kind == "exponential" and self.backend == "finite-difference":
            raise ConfigError("exponential horizon needs the images or monte-carlo backend")
        required = self.lambda_init + 6.0 * math.sqrt(self.horizon)
        if self.x_max is None:
            self.x_max = required + 1.0
        n = math.ceil(self.x_max / self.mesh - 1e-9)
        self.x_max = n * self.mesh
        if self.x_max <= required:
            raise ConfigError(
                f"x_max={self.x_max} too small: need x_max > lambda_init + 6*sqrt(horizon) = {required}"
            )
        self.snapshot_times = tuple(float(t) for t in self.snapshot_times)

    @property
    def n_steps(self) -> int:
        # grid times never pass the horizon, so T < delta_t is a zero-step run
        return math.floor(self.horizon / self.delta_t + 1e-9)

    @property
    def lambda_cap(self) -> float:
        """A-priori bound (d + lambda_init^d)^(1/d) on the Euler radius."""
        return (self.d + self.lambda_init**self.d) ** (1.0 / self.d)


def parse_u_init(text: str, base_dir: Path | None = None) -> Callable:
    """Turn an initial-profile shape string into a vectorised function."""
    parts = text.split()
    if not parts:
        raise ConfigError("empty u_init")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "indicator":
            a, b = (float(v) for v in args)
            return lambda x: np.where((x >= a) & (x <= b), 1.0, 0.0)
        if kind == "constant":
            (c,) = (float(v) for v in args)
            return lambda x: np.full_like(np.asarray(x, float), c)
        if kind == "exponential":
            c, alpha = (float(v) for v in args)
            return lambda x: c * np.exp(-alpha * np.asarray(x, float))
        if kind == "gaussian":
            c, mu, sig = (float(v) for v in args)
            return lambda x: c * np.exp(-0.5 * ((np.asarray(x, float) - mu) / sig) ** 2)
        if kind == "table":
            (path,) = args
            p = Path(path)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
            xs, us = data[:, 0], data[:, 1]
            return lambda x: np.interp(x, xs, us, left=us[0], right=0.0)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad u_init {text!r}: {exc}") from exc
    raise ConfigError(f"unknown u_init shape {kind!r}")


def initial_profile(cfg: SimConfig, base_dir: Path | None = None) -> TemperatureProfile:
    f = parse_u_init(cfg.u_init, base_dir)
    prof = TemperatureProfile.from_function(f, cfg.mesh, cfg.x_max)
    if np.any(prof.values < 0):
        raise ConfigError("initial profile must be non-negative")
    mass = prof.mass(cfg.d)
    if not mass > 0:
        raise ConfigError("initial profile has zero nu-mass")
    if abs(mass - 1.0) > 1e-6:
        if cfg.normalize_mass:
            prof = prof.with_values(prof.values / mass)
        else:
            log.warning("initial nu-mass is %.6g (not 1); running unnormalised", mass)
    if sup_norm(prof) >= 1.0:
        log.warning("sup of initial profile is %.4g >= 1 (hypercooled regime)", sup_norm(prof))
    return prof


@dataclass
class BoundaryPath:
    """Right-continuous piecewise-constant radius on the grid times m*delta_t."""

    times: np.ndarray
    radii: np.ndarray
    jumps: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float)
        if self.times.shape != self.radii.shape or self.times.size == 0:
            raise ValueError("times and radii must be non-empty and aligned")

    @property
    def delta_t(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else math.inf

    def at(self, t: float) -> float:
        """Lambda_t, with Lambda_t = Lambda_0 for t < 0."""
        if t < self.times[0]:
            return float(self.radii[0])
        k = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, abs(t)), side="right") - 1)
        return float(self.radii[min(k, self.radii.size - 1)])

    @property
    def melt_time(self) -> float:
        zero = np.nonzero(self.radii == 0.0)[0]
        return float(self.times[zero[0]]) if zero.size else math.inf


@dataclass
class EnergyAudit:
    mass: list[float] = field(default_factory=list)
    volume: list[float] = field(default_factory=list)
    melt_step: int | None = None

    def record(self, mass: float, radius: float, d: int) -> None:
        self.mass.append(float(mass))
        self.volume.append(float(radius**d / d))

    @property
    def residual(self) -> np.ndarray:
        tot = np.asarray(self.mass) + np.asarray(self.volume)
        return tot - tot[0] if tot.size else tot

    def max_residual(self) -> float:
        r = self.residual
        if self.melt_step is not None:
            r = r[: self.melt_step]
        return float(np.max(np.abs(r))) if r.size else 0.0
