"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from collections import Counter
from importlib import metadata
from pathlib import Path

import numpy as np

from . import euler, io, particles, physicality
from .core import BoundaryPath, ConfigError, DomainError, initial_profile
from .rng import resolve_threads, stream

log = logging.getLogger("stefan_gt")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _config(args) -> io.SimConfig:
    threads = resolve_threads(args.threads)
    return io.build_config(args.preset, args.config, seed=args.seed, threads=threads)


def _base_dir(args):
    return Path(args.config).resolve().parent if args.config else None


def check_invariants(res: euler.EulerResult) -> list[str]:
    """Assertion-grade checks on an Euler run; returns the list of violations."""
    cfg = res.cfg
    bad = []
    tol = 1e-5 * max(1.0, cfg.lambda_init**cfg.d)
    if res.audit.max_residual() > tol:
        bad.append(f"energy identity: max residual {res.audit.max_residual():.3e} > {tol:.1e}")
    cap = cfg.lambda_cap
    if np.max(res.path.radii) > cap * (1 + 1e-12):
        bad.append(f"a-priori bound: max radius {np.max(res.path.radii):.6g} > {cap:.6g}")
    if not euler.monotone_after(res.path, res.sigma):
        bad.append("post-sigma monotonicity: radius increases after sigma")
    if res.melt_step is not None and np.any(res.path.radii[res.melt_step :] != 0.0):
        bad.append("melt absorption: radius positive after melting")
    return bad


def write_euler_outputs(res: euler.EulerResult, out: Path, reports) -> list[str]:
    files = []
    path = res.path
    io.write_csv(out / "lambda.csv", ("t", "lambda"), zip(path.times, path.radii))
    io.write_csv(out / "jumps.csv", ("t", "lambda_before", "lambda_after"), path.jumps)
    files += ["lambda.csv", "jumps.csv"]
    audit = res.audit
    resid = audit.residual
    io.write_csv(
        out / "audit.csv",
        ("step", "t", "mass", "volume", "residual"),
        ((k, k * res.cfg.delta_t, audit.mass[k], audit.volume[k], resid[k]) for k in range(len(audit.mass))),
    )
    files.append("audit.csv")
    io.write_csv(
        out / "physicality.csv",
        ("t", "lambda_before", "lambda_after", "drop", "lower_bound", "lower_bound_open", "upper_bound", "verdict"),
        (
            (r.time, r.lambda_before, r.lambda_after, r.drop, r.lower_bound, r.lower_bound_open, r.upper_bound, r.verdict)
            for r in reports
        ),
    )
    files.append("physicality.csv")
    for snap in res.snapshots:
        name = f"profiles/profile_{snap.step:06d}_{snap.kind}.csv"
        prof = snap.profile
        io.write_csv(out / name, ("t", "x", "u"), ((snap.t, x, v) for x, v in zip(prof.grid, prof.node_values())))
        files.append(name)
    return files


def cmd_run_euler(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    start = time.perf_counter()
    res = euler.run(cfg, base_dir=_base_dir(args))
    reports = physicality.verify_trajectory(res)
    files = write_euler_outputs(res, out, reports)
    bad = check_invariants(res)
    io.write_json(
        out / "manifest.json",
        {
            "config": io.config_echo(cfg),
            "seed": cfg.seed,
            "code_version": _version(),
            "wall_clock_s": time.perf_counter() - start,
            "files": files,
            "audit": {"max_residual": res.audit.max_residual(), "melt_step": res.melt_step},
            "sigma": res.sigma,
            "jump_constant": res.jump_constant,
            "physicality": dict(Counter(r.verdict for r in reports)),
            "violations": bad,
        },
    )
    for msg in bad:
        log.error("invariant violated: %s", msg)
    print(f"{len(res.path.jumps)} jump(s); max audit residual {res.audit.max_residual():.3e}; output in {out}")
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_check_physicality(args) -> int:
    cfg = _config(args)
    res = euler.run(cfg, base_dir=_base_dir(args))
    reports = physicality.verify_trajectory(res, source=args.source)
    out = Path(args.out)
    io.write_csv(
        out / "physicality.csv",
        ("t", "lambda_before", "lambda_after", "drop", "lower_bound", "lower_bound_open", "upper_bound", "verdict"),
        (
            (r.time, r.lambda_before, r.lambda_after, r.drop, r.lower_bound, r.lower_bound_open, r.upper_bound, r.verdict)
            for r in reports
        ),
    )
    failing = [r for r in reports if r.verdict not in ("physical", "melt-exempt")]
    for r in reports:
        print(f"t={r.time:.6g} drop={r.drop:.6g} lower={r.lower_bound:.6g} upper={r.upper_bound:.6g} {r.verdict}")
    if cfg.d < 3:
        print("d < 3: lower bounds reported, not asserted")
        return EXIT_OK
    return EXIT_INVARIANT if failing else EXIT_OK


def cmd_run_particles(args) -> int:
    cfg = _config(args)
    if cfg.n_particles <= 0:
        raise ConfigError("n_particles must be positive")
    times, radii = io.read_lambda_csv(Path(args.boundary))
    expected = cfg.delta_t * np.arange(times.size)
    if times.size < 1 or not np.allclose(times, expected, rtol=0, atol=1e-9 * max(1.0, cfg.horizon)):
        raise ConfigError("boundary csv time grid does not match delta_t in the config")
    if not math.isclose(radii[0], cfg.lambda_init, rel_tol=1e-12):
        raise ConfigError("boundary csv does not start at lambda_init")
    path = BoundaryPath(times, radii)
    u0 = initial_profile(cfg, _base_dir(args))
    ens = particles.init_ensemble(u0, cfg.n_particles, cfg.d, stream(cfg.seed, "init"))
    emission = particles.EmissionConfig(cfg.emission_delta, cfg.gamma, cfg.d, n_target=cfg.n_particles)
    run = particles.evolve_against(path, ens, cfg.d, cfg.gamma, emission, cfg.seed, threads=cfg.threads)
    rows = []
    for m in range(run.last_step + 1):
        est, se = particles.lambda_identity_estimate(run, m, seed=cfg.seed)
        lhs = particles.euler_identity_lhs(path, m, cfg.d)
        rows.append((m, m * cfg.delta_t, lhs, est, se, est - lhs))
    out = Path(args.out)
    io.write_csv(out / "identity.csv", ("step", "t", "euler_lhs", "particle_estimate", "stderr", "discrepancy"), rows)
    worst = max(abs(r[5]) - 3 * r[4] for r in rows)
    print(f"{run.ensemble.size} particles; worst |discrepancy| - 3 stderr = {worst:.4g}; output in {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.input)
    try:
        times, radii = io.read_lambda_csv(src)
    except OSError as exc:
        raise ConfigError(f"cannot read {src}: {exc}") from exc
    jumps = io.read_jumps_csv(src.with_name("jumps.csv"))
    io.atomic_write(Path(args.out), io.lambda_svg(times, radii, jumps))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stefan-gt", description="Radial Stefan problem with surface tension.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument("--preset", choices=sorted(io.PRESETS), help="base parameter set (config keys override it)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=lambda s: int(s, 0), help="64-bit RNG seed")
        sp.add_argument("--threads", type=int, help="worker threads (default: $STEFAN_GT_THREADS or 1)")

    sp = sub.add_parser("run-euler", help="run the Euler scheme and write trajectories")
    common(sp)
    sp.set_defaults(func=cmd_run_euler)
    sp = sub.add_parser("run-particles", help="check the particle identity against a boundary path")
    common(sp)
    sp.add_argument("--boundary", required=True, help="lambda.csv from run-euler")
    sp.set_defaults(func=cmd_run_particles)
    sp = sub.add_parser("check-physicality", help="classify the jumps of an Euler run")
    common(sp)
    sp.add_argument("--source", choices=("pre-step", "pre-jump"), default="pre-step", help="proxy for u(t-)")
    sp.set_defaults(func=cmd_check_physicality)
    sp = sub.add_parser("plot", help="render lambda.csv as SVG")
    sp.add_argument("--input", required=True, help="lambda.csv")
    sp.add_argument("--out", required=True, help="output .svg")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
