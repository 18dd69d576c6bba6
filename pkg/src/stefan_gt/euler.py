"""Implicit Euler scheme for the free boundary.

Each step propagates the profile with the boundary frozen, then picks the new
radius from the energy balance

    G(y) = int [u_next on the complement of the swept interval + H on it - u_m] dnu
           - (lam_m^d - y^d) / d,

and finally overwrites the swept interval with H.  Because G and the audit use
the same exact antiderivatives, the energy identity holds up to the root
tolerance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BoundaryPath,
    DomainError,
    EnergyAudit,
    SimConfig,
    TemperatureProfile,
    gibbs_thomson,
    h_nu_integral,
    initial_profile,
    sup_norm,
)
from .heatstep import FrozenStepRequest, step_frozen
from .rng import resolve_threads

log = logging.getLogger(__name__)

ROOT_RTOL = 1e-10
TIE_TOL = 1e-13


@dataclass(frozen=True)
class StepOutcome:
    lambda_next: float
    branch: str  # "frozen-zero" | "decrease" | "increase"
    swept: tuple[float, float]
    residual: float
    melted: bool = False


def _balance(u_next: TemperatureProfile, lam: float, d: int, gamma: float, mass_gap: float):
    """G as a vectorised function of the candidate radius y."""

    def g(y):
        y = np.asarray(y, dtype=float)
        lo, hi = np.minimum(y, lam), np.maximum(y, lam)
        swap = h_nu_integral(lo, hi, gamma, d) - (u_next.antiderivative(hi, d) - u_next.antiderivative(lo, d))
        with np.errstate(invalid="ignore"):
            return mass_gap + swap - (lam**d - y**d) / d

    return g


def _bisect(g, lo: float, hi: float, want_low_negative: bool, tol: float) -> tuple[float, float]:
    """Shrink a sign-change bracket of g to width ``tol``."""
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        gm = float(g(mid))
        if (gm < 0) == want_low_negative:
            lo = mid
        else:
            hi = mid
    return lo, hi


def next_boundary(
    u_next: TemperatureProfile,
    u_m: TemperatureProfile,
    lambda_m: float,
    cfg: SimConfig,
) -> StepOutcome:
    """Select the next radius from the energy balance."""
    d, gamma = cfg.d, cfg.gamma
    if lambda_m == 0.0:
        return StepOutcome(0.0, "frozen-zero", (0.0, 0.0), 0.0, melted=True)
    if u_next.mesh != u_m.mesh or u_next.n_nodes != u_m.n_nodes:
        raise ValueError("profiles must share a grid")
    mass_gap = u_next.mass(d) - u_m.mass(d)
    g = _balance(u_next, lambda_m, d, gamma, mass_gap)
    tol = ROOT_RTOL * max(1.0, lambda_m)
    h = u_next.mesh
    scale = max(1.0, abs(u_m.mass(d)))

    if mass_gap >= -TIE_TOL * scale:
        # decrease branch: sup{y in [0, lam): G(y) < 0}
        if abs(mass_gap) <= TIE_TOL * scale:
            slope = 1.0 + float(u_next(lambda_m)) - gibbs_thomson(lambda_m, gamma)
            if slope > 0:
                return StepOutcome(lambda_m, "decrease", (lambda_m, lambda_m), float(g(lambda_m)))
        k = int(math.ceil(lambda_m / h)) - 1
        nodes = h * np.arange(k, -1, -1)
        nodes = nodes[nodes < lambda_m]
        vals = g(nodes)
        neg = np.nonzero(vals < 0)[0]
        if neg.size == 0:
            return StepOutcome(0.0, "decrease", (0.0, lambda_m), float("nan"), melted=True)
        i = int(neg[0])
        upper = lambda_m if i == 0 else float(nodes[i - 1])
        y, _ = _bisect(g, float(nodes[i]), upper, True, tol)
        return StepOutcome(y, "decrease", (y, lambda_m), float(g(y)))

    # increase branch: inf{y > lam: G(y) > 0}
    k = int(math.floor(lambda_m / h)) + 1
    nodes = h * np.arange(k, u_next.n_nodes)
    vals = g(nodes)
    pos = np.nonzero(vals > 0)[0]
    if pos.size == 0:
        raise DomainError("increase branch left the grid: x_max too small")
    i = int(pos[0])
    if float(nodes[i]) >= u_next.x_max - h:
        raise DomainError("swept interval reaches x_max: domain too small")
    lower = lambda_m if i == 0 else float(nodes[i - 1])
    _, y = _bisect(g, lower, float(nodes[i]), True, tol)
    return StepOutcome(y, "increase", (lambda_m, y), float(g(y)))


def freeze_update(u_next: TemperatureProfile, swept: tuple[float, float], gamma: float) -> TemperatureProfile:
    """Set the profile to H on the closed swept interval."""
    a, b = swept
    if b <= a:
        return TemperatureProfile(u_next.mesh, u_next.values)
    return TemperatureProfile(u_next.mesh, u_next.values, patch=(float(a), float(b), float(gamma)))


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    t: float
    kind: str  # "initial" | "scheduled" | "pre-step" | "pre-jump" | "post-jump"
    profile: TemperatureProfile
    step: int


@dataclass
class EulerResult:
    cfg: SimConfig
    path: BoundaryPath
    snapshots: list[Snapshot]
    audit: EnergyAudit
    outcomes: list[StepOutcome]
    u0_sup: float
    sigma: float
    domination_excess: np.ndarray
    jump_constant: float
    melted: bool = False
    melt_step: int | None = None
    final_profile: TemperatureProfile | None = None
    _candidates: dict = field(default_factory=dict, repr=False)

    def snapshot(self, step: int, kind: str) -> TemperatureProfile | None:
        for s in self.snapshots:
            if s.step == step and s.kind == kind:
                return s.profile
        return None


def jump_threshold(delta_t: float, mesh: float, c_fit: float) -> float:
    return max(5.0 * mesh, 3.0 * c_fit * math.sqrt(delta_t))


def fit_step_constant(radii: np.ndarray, delta_t: float) -> float:
    """Typical per-step movement in units of sqrt(delta_t): median over moving steps."""
    steps = np.abs(np.diff(np.asarray(radii, dtype=float)))
    steps = steps[steps > 0]
    if steps.size == 0:
        return 0.0
    return float(np.median(steps) / math.sqrt(delta_t))


def run(cfg: SimConfig, u0: TemperatureProfile | None = None, base_dir=None) -> EulerResult:
    """Run the scheme on [0, T] and collect path, audit and snapshots."""
    if u0 is None:
        u0 = initial_profile(cfg, base_dir)
    d, gamma, dt = cfg.d, cfg.gamma, cfg.delta_t
    n = cfg.n_steps
    threads = resolve_threads(cfg.threads)
    u0_sup = sup_norm(u0)

    radii = np.zeros(n + 1)
    radii[0] = cfg.lambda_init
    audit = EnergyAudit()
    audit.record(u0.mass(d), cfg.lambda_init, d)
    outcomes: list[StepOutcome] = []
    snapshots = [Snapshot(0.0, "initial", u0, 0)]
    sched = sorted(set(cfg.snapshot_times))
    excess = np.full(n + 1, np.nan)
    candidates: dict[int, tuple[TemperatureProfile, ...]] = {}

    sigma_step = 0 if gibbs_thomson(cfg.lambda_init, gamma) >= u0_sup else None
    if sigma_step == 0:
        excess[0] = float(np.max(u0.node_values() - gibbs_thomson(cfg.lambda_init, gamma)))

    u, lam = u0, cfg.lambda_init
    melt_step = None
    for m in range(n):
        req = FrozenStepRequest(
            u_in=u,
            lam=lam,
            dt=dt,
            d=d,
            gamma=gamma,
            backend=cfg.backend,
            horizon_kind=cfg.horizon_kind,
            fd_substeps=cfg.fd_substeps,
            fd_theta=cfg.fd_theta,
            mc_paths=cfg.mc_paths,
            seed=cfg.seed,
            stream_key=(m,),
            threads=threads,
        )
        u_next = step_frozen(req)
        out = next_boundary(u_next, u, lam, cfg)
        outcomes.append(out)
        if out.melted:
            melt_step = m + 1
            audit.record(u_next.mass(d), 0.0, d)
            audit.melt_step = melt_step
            candidates[m + 1] = (u, u_next, u_next)
            u = u_next
            log.info("boundary melted at t=%.6g", (m + 1) * dt)
            break
        u_new = freeze_update(u_next, out.swept, gamma)
        lam_new = out.lambda_next
        radii[m + 1] = lam_new
        audit.record(u_new.mass(d), lam_new, d)
        if abs(lam_new - lam) > 5.0 * cfg.mesh:
            candidates[m + 1] = (u, u_next, u_new)
        t_new = (m + 1) * dt
        for ts in sched:
            if m * dt < ts <= t_new + 1e-12 * max(1.0, t_new):
                snapshots.append(Snapshot(ts, "scheduled", u_new, m + 1))
        if sigma_step is None and gibbs_thomson(lam_new, gamma) >= u0_sup:
            sigma_step = m + 1
        if sigma_step is not None:
            excess[m + 1] = float(np.max(u_new.node_values() - gibbs_thomson(lam_new, gamma)))
        u, lam = u_new, lam_new

    times = dt * np.arange(n + 1)
    c_fit = cfg.jump_constant if cfg.jump_constant is not None else fit_step_constant(radii[: (melt_step or n) + 1], dt)
    thr = jump_threshold(dt, cfg.mesh, c_fit)
    jumps = []
    for step, (prev, pre, post) in sorted(candidates.items()):
        before, after = radii[step - 1], radii[step]
        if abs(after - before) > thr or step == melt_step:
            jumps.append((float(times[step]), float(before), float(after)))
            snapshots.append(Snapshot(float(times[step - 1]), "pre-step", prev, step))
            snapshots.append(Snapshot(float(times[step]), "pre-jump", pre, step))
            snapshots.append(Snapshot(float(times[step]), "post-jump", post, step))
    snapshots.sort(key=lambda s: (s.t, s.kind))
    path = BoundaryPath(times, radii, jumps)
    sigma = float(times[sigma_step]) if sigma_step is not None else float(cfg.horizon)
    return EulerResult(
        cfg=cfg,
        path=path,
        snapshots=snapshots,
        audit=audit,
        outcomes=outcomes,
        u0_sup=u0_sup,
        sigma=sigma,
        domination_excess=excess,
        jump_constant=c_fit,
        melted=melt_step is not None,
        melt_step=melt_step,
        final_profile=u,
        _candidates=candidates,
    )


def sigma_detect(path: BoundaryPath, u0_sup: float, gamma: float, horizon: float | None = None) -> float:
    """First grid time with H(lambda) >= sup u0, else the horizon."""
    hv = gibbs_thomson(path.radii, gamma)
    hit = np.nonzero(np.asarray(hv) >= u0_sup)[0]
    if hit.size:
        return float(path.times[hit[0]])
    return float(path.times[-1] if horizon is None else horizon)


def growth_constant(path: BoundaryPath, until: float | None = None, window: float = 1.0) -> float:
    """Smallest C with (lam(t2) - lam(t1))_+ <= C sqrt(t2 - t1) over grid pairs before ``until``.

    Only pairs at most ``window`` apart are compared.
    """
    times, radii = path.times, path.radii
    if until is not None:
        keep = times <= until + 1e-12
        times, radii = times[keep], radii[keep]
    best = 0.0
    dt = path.delta_t
    if not math.isfinite(dt) or times.size < 2:
        return 0.0
    max_lag = max(1, int(math.floor(window / dt + 1e-9)))
    for lag in range(1, min(max_lag, times.size - 1) + 1):
        rise = np.maximum(radii[lag:] - radii[:-lag], 0.0)
        if rise.size:
            best = max(best, float(rise.max()) / math.sqrt(lag * dt))
    return best


def monotone_after(path: BoundaryPath, sigma: float) -> bool:
    r = path.radii[path.times >= sigma - 1e-12]
    return bool(np.all(np.diff(r) <= 0.0))
