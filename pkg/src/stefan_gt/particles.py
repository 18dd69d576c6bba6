"""Forward particle representation of the Euler scheme, conditional on its boundary path.

Three particle families carry weight:

* initial particles, drawn from u0(x) x^(d-1) with weight mass(u0)/N;
* injected particles, born at each grid time on the interval swept by the
  boundary, a Poisson field with intensity H(x) nu(dx);
* emitted particles, born near the boundary at rate 2 gamma Lambda^(d-2) / delta
  at offsets delta * U[-1, 1].

Each particle is absorbed when it ends up strictly on the other side of the
boundary than where it was born.  With these families

    (Lambda_m^d - Lambda_0^d)/d
        = absorbed initial weight - alive injected weight - alive emitted weight

up to the finite-delta error of the emission term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import BoundaryPath, TemperatureProfile, h_nu_integral
from .rng import ordered_map, stream
from .specfun import simulate_killed

log = logging.getLogger(__name__)

INITIAL, INJECTED, EMITTED = 0, 1, 2
KIND_NAMES = {INITIAL: "initial", INJECTED: "swept-injection", EMITTED: "boundary-emission"}
BLOCK = 8192
ALIVE = np.iinfo(np.int64).max


@dataclass(frozen=True)
class EmissionConfig:
    delta: float
    gamma: float
    d: int
    n_target: int | None = None  # emitted particles to aim for; None keeps the initial weight

    def rate(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(lam > 0, 2.0 * self.gamma * lam ** (self.d - 2.0) / self.delta, 0.0)


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    weight: np.ndarray
    kind: np.ndarray
    birth_time: np.ndarray
    birth_step: np.ndarray
    alive: np.ndarray
    absorb_step: np.ndarray = None

    def __post_init__(self):
        if self.absorb_step is None:
            self.absorb_step = np.full(self.positions.size, ALIVE, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.positions.size

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())


def _empty_ensemble() -> ParticleEnsemble:
    z = np.zeros(0)
    return ParticleEnsemble(z, z.copy(), np.zeros(0, np.int8), z.copy(), np.zeros(0, np.int64), np.zeros(0, bool))


def _concat(parts: list[ParticleEnsemble]) -> ParticleEnsemble:
    parts = [p for p in parts if p.size] or [_empty_ensemble()]
    return ParticleEnsemble(
        *(np.concatenate([getattr(p, f) for p in parts]) for f in ("positions", "weight", "kind", "birth_time", "birth_step", "alive")),
        absorb_step=np.concatenate([p.absorb_step for p in parts]),
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_profile(u0: TemperatureProfile, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n radii from the density u0(x) x^(d-1) / mass by inverting the exact CDF."""
    mass = u0.mass(d)
    if not mass > 0:
        raise ValueError("profile has zero nu-mass")
    cum = u0.antiderivative(u0.grid, d)
    target = rng.random(n) * mass
    hi_idx = np.clip(np.searchsorted(cum, target, side="left"), 1, u0.n_nodes - 1)
    lo = u0.grid[hi_idx - 1].copy()
    hi = u0.grid[hi_idx].copy()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = u0.antiderivative(mid, d) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_h_nu(a: float, b: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n radii from the density proportional to H(x) x^(d-1), i.e. x^(d-2), on [a, b]."""
    u = rng.random(n)
    if d == 1:
        if a <= 0:
            raise ValueError("H nu has infinite mass near 0 for d = 1")
        return a * (b / a) ** u
    k = d - 1
    return (a**k + u * (b**k - a**k)) ** (1.0 / k)


def init_ensemble(u0: TemperatureProfile, n: int, d: int, rng: np.random.Generator) -> ParticleEnsemble:
    """n initial particles with total weight equal to the nu-mass of u0."""
    if n <= 0:
        raise ValueError("need at least one particle")
    mass = u0.mass(d)
    pos = sample_profile(u0, n, d, rng)
    return ParticleEnsemble(
        positions=pos,
        weight=np.full(n, mass / n),
        kind=np.full(n, INITIAL, np.int8),
        birth_time=np.zeros(n),
        birth_step=np.zeros(n, np.int64),
        alive=np.ones(n, bool),
    )


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


@dataclass
class ParticleRun:
    """Evolved particles plus everything needed for the identity estimates."""

    path: BoundaryPath
    ensemble: ParticleEnsemble
    d: int
    last_step: int
    record_steps: tuple[int, ...]
    recorded: dict = field(default_factory=dict)  # step -> positions (nan when absent)
    emission: EmissionConfig | None = None
    weight_totals: dict = field(default_factory=dict)


def _step_limits(delta_t: float, delta: float) -> tuple[float, float]:
    dt_max = delta_t / 20.0
    return min(dt_max, delta**2 / 4.0), dt_max


def _evolve_block(
    pos: np.ndarray,
    birth_time: np.ndarray,
    first_step: int,
    path: BoundaryPath,
    d: int,
    last_step: int,
    record_steps: tuple[int, ...],
    dt_min: float,
    dt_max: float,
    rng: np.random.Generator,
):
    """Evolve particles that all start inside step ``first_step``.

    Returns (absorb_step, {step: positions}).  ``absorb_step`` is the first
    grid index m with tau <= m * delta_t.
    """
    n = pos.size
    dt = path.delta_t
    radii = path.radii
    pos = pos.copy()
    t_now = birth_time.copy()
    absorb = np.full(n, ALIVE, dtype=np.int64)
    rec = {}
    # side relative to the boundary in force at birth
    side = np.sign(pos - radii[first_step])
    absorb[side == 0] = first_step
    live = side != 0
    if first_step in record_steps:
        rec[first_step] = np.where(live & (t_now <= first_step * dt + 1e-12), pos, np.nan)
    for m in range(first_step, last_step):
        idx = np.nonzero(live)[0]
        lam = radii[m]
        if idx.size and lam > 0:
            horizon = (m + 1) * dt - t_now[idx]
            hit, new = simulate_killed(pos[idx], lam, d, horizon, rng, dt_min=dt_min, dt_max=dt_max)
            pos[idx] = new
            absorb[idx[hit]] = m + 1
            live[idx[hit]] = False
        t_now[live] = (m + 1) * dt
        # barrier jump at (m+1) dt
        idx = np.nonzero(live)[0]
        crossed = (pos[idx] - radii[m + 1]) * side[idx] < 0
        absorb[idx[crossed]] = m + 1
        live[idx[crossed]] = False
        if m + 1 in record_steps:
            rec[m + 1] = np.where(live, pos, np.nan)
    return absorb, rec


def evolve_against(
    path: BoundaryPath,
    ens: ParticleEnsemble,
    d: int,
    gamma: float,
    emission: EmissionConfig,
    seed: int,
    last_step: int | None = None,
    record_steps=(),
    threads: int = 1,
) -> ParticleRun:
    """Evolve the initial ensemble against ``path`` and add injections and emissions.

    Work is cut into fixed blocks, each with its own counter-based stream, so
    the output does not depend on ``threads``.
    """
    dt = path.delta_t
    n_path = path.radii.size - 1
    if last_step is None:
        zero = np.nonzero(path.radii == 0.0)[0]
        last_step = int(zero[0]) - 1 if zero.size else n_path
    last_step = max(0, min(last_step, n_path))
    record_steps = tuple(sorted(int(s) for s in record_steps))
    dt_min, dt_max = _step_limits(dt, emission.delta)
    radii = path.radii
    w0 = float(ens.weight[0]) if ens.size else 1.0

    # -- generate births ------------------------------------------------------
    families = [ens] if ens.size else []
    totals = {"initial": ens.total_weight, "injected": 0.0, "emitted": 0.0}
    for m in range(1, last_step + 1):
        a, b = sorted((radii[m - 1], radii[m]))
        if b <= a:
            continue
        mean_w = h_nu_integral(a, b, gamma, d)
        totals["injected"] += mean_w
        count = stream(seed, "inject-count", m).poisson(mean_w / w0)
        if count == 0:
            continue
        pos = sample_h_nu(a, b, d, count, stream(seed, "inject-pos", m))
        families.append(
            ParticleEnsemble(pos, np.full(count, w0), np.full(count, INJECTED, np.int8), np.full(count, m * dt),
                             np.full(count, m, np.int64), np.ones(count, bool))
        )
    expected = emission.rate(radii[:last_step]) * dt
    totals["emitted"] = float(expected.sum())
    if emission.n_target:
        w_e = totals["emitted"] / emission.n_target if totals["emitted"] > 0 else w0
    else:
        w_e = w0
    clamped = 0
    for m in range(last_step):
        if expected[m] <= 0:
            continue
        rng = stream(seed, "emit", m)
        count = rng.poisson(expected[m] / w_e)
        if count == 0:
            continue
        times = m * dt + rng.random(count) * dt
        raw = radii[m] + emission.delta * rng.uniform(-1.0, 1.0, count)
        clamped += int(np.sum(raw < 0))
        families.append(
            ParticleEnsemble(np.maximum(raw, 0.0), np.full(count, w_e), np.full(count, EMITTED, np.int8), times,
                             np.full(count, m, np.int64), np.ones(count, bool))
        )
    if clamped:
        log.info("emission offset clamped at 0 for %d particles (delta > Lambda)", clamped)
    allp = _concat(families)

    # -- evolve in blocks -------------------------------------------------------
    jobs = []
    order = np.lexsort((allp.kind, allp.birth_step))
    allp = ParticleEnsemble(
        allp.positions[order], allp.weight[order], allp.kind[order], allp.birth_time[order],
        allp.birth_step[order], allp.alive[order],
    )
    keys = allp.birth_step.astype(np.int64) * 4 + allp.kind
    bounds = np.flatnonzero(np.diff(keys)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [allp.size]])
    for s, e in zip(starts, ends):
        for b0 in range(s, e, BLOCK):
            jobs.append((int(b0), int(min(b0 + BLOCK, e)), int(allp.kind[s]), int(allp.birth_step[s]), int(b0 - s)))

    def work(job):
        lo, hi, kind, step, offset = job
        rng = stream(seed, "evolve", kind, step, offset // BLOCK)
        return _evolve_block(allp.positions[lo:hi], allp.birth_time[lo:hi], step, path, d, last_step,
                             record_steps, dt_min, dt_max, rng)

    results = ordered_map(work, jobs, threads)
    absorb = np.full(allp.size, ALIVE, dtype=np.int64)
    recorded = {s: np.full(allp.size, np.nan) for s in record_steps}
    for (lo, hi, *_), (ab, rec) in zip(jobs, results):
        absorb[lo:hi] = ab
        for s, v in rec.items():
            recorded[s][lo:hi] = v
    allp.absorb_step = absorb
    allp.alive = absorb == ALIVE
    return ParticleRun(path, allp, d, last_step, record_steps, recorded, emission, totals)


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


def _strata(run: ParticleRun, m: int):
    """Per-stratum (weight, count, hits, sign) entering the identity at step m."""
    e = run.ensemble
    out = []
    born = e.birth_step <= m
    # initial weight absorbed by m dt
    sel = e.kind == INITIAL
    if np.any(sel):
        out.append((float(e.weight[sel][0]), int(sel.sum()), int(np.sum(e.absorb_step[sel] <= m)), 1.0))
    # injections at step n <= m, alive at m dt
    for kind, sign in ((INJECTED, -1.0), (EMITTED, -1.0)):
        sel = (e.kind == kind) & born
        if kind == EMITTED:
            sel &= e.birth_step < m
        for step in np.unique(e.birth_step[sel]):
            s = sel & (e.birth_step == step)
            out.append((float(e.weight[s][0]), int(s.sum()), int(np.sum(e.absorb_step[s] > m)), sign))
    return out


def lambda_identity_estimate(run: ParticleRun, m: int, n_boot: int = 400, seed: int = 0) -> tuple[float, float]:
    """Particle estimate of (Lambda_m^d - Lambda_0^d)/d and its bootstrap standard error.

    Every stratum is a batch of identically weighted indicator variables, so a
    nonparametric resample of a stratum is a binomial draw around its hit
    fraction.
    """
    if m > run.last_step:
        raise ValueError(f"step {m} beyond the evolved range {run.last_step}")
    strata = _strata(run, m)
    if not strata:
        return 0.0, 0.0
    w = np.array([s[0] for s in strata])
    n = np.array([s[1] for s in strata])
    k = np.array([s[2] for s in strata])
    sign = np.array([s[3] for s in strata])
    est = float(np.sum(sign * w * k))
    rng = stream(seed, "bootstrap", m)
    draws = rng.binomial(n[None, :], (k / n)[None, :], size=(n_boot, n.size))
    boot = draws @ (sign * w)
    return est, float(np.std(boot, ddof=1))


def euler_identity_lhs(path: BoundaryPath, m: int, d: int) -> float:
    return float((path.radii[m] ** d - path.radii[0] ** d) / d)


def occupation_density(run: ParticleRun, step: int, mesh: float, x_max: float) -> TemperatureProfile:
    """Kernel estimate (bandwidth 2*mesh, reflected at 0) of alive weight at step*dt, per unit nu."""
    if step not in run.recorded:
        raise ValueError(f"positions at step {step} were not recorded")
    pos = run.recorded[step]
    ok = np.isfinite(pos)
    sub = 4
    width = mesh / sub
    nbins = int(math.ceil(x_max / width))
    hist, edges = np.histogram(pos[ok], bins=nbins, range=(0.0, nbins * width), weights=run.ensemble.weight[ok])
    dens = ndimage.gaussian_filter1d(hist / width, sigma=2.0 * sub, mode="reflect", truncate=6.0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    grid = mesh * np.arange(int(round(x_max / mesh)) + 1)
    f = np.interp(grid, centers, dens)
    d = run.d
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f / grid ** (d - 1)
    if d > 1:
        u[0] = u[1]
    return TemperatureProfile(mesh, u)
