"""Config files, CSV artifacts and a small SVG writer."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ConfigError, SimConfig

PRESETS = {
    "figure1": dict(d=3, gamma=1.0, lambda_init=0.9, u_init="indicator 0 0.81", horizon=1.0, delta_t=0.5e-3, mesh=3e-3),
    "fast": dict(d=3, gamma=1.0, lambda_init=0.9, u_init="indicator 0 0.81", horizon=1.0, delta_t=2e-3, mesh=5e-3),
}

_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
_INT = {"d", "seed", "fd_substeps", "mc_paths", "threads", "n_particles"}
_BOOL = {"normalize_mass"}
_STR = {"u_init", "backend", "horizon_kind"}
_OPTIONAL = {"x_max", "jump_constant"}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def _convert(key: str, value: str):
    try:
        if key in _STR:
            return value
        if key in _BOOL:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if key in _OPTIONAL and value.lower() in ("", "none", "auto"):
            return None
        if key == "snapshot_times":
            return tuple(float(v) for v in value.replace(",", " ").split())
        if key in _INT:
            return int(value)
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def build_config(preset: str | None = None, path: Path | None = None, **overrides) -> SimConfig:
    values: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        values.update(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in ("d", "gamma", "delta_t", "mesh", "horizon", "lambda_init") if k not in values]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    return SimConfig(**values)


def config_echo(cfg: SimConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["snapshot_times"] = list(cfg.snapshot_times)
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    return format(float(x), ".17g")


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write(path, csv_text(header, rows))


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigError(f"{path} is empty")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:] if ln]


def read_lambda_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    header, rows = read_csv(path)
    if header != ["t", "lambda"]:
        raise ConfigError(f"{path}: expected header t,lambda")
    data = np.array([[float(a), float(b)] for a, b in rows]).reshape(-1, 2)
    return data[:, 0], data[:, 1]


def read_jumps_csv(path: Path) -> list[tuple[float, float, float]]:
    if not Path(path).exists():
        return []
    _, rows = read_csv(path)
    return [(float(r[0]), float(r[1]), float(r[2])) for r in rows]


def write_json(path: Path, payload: dict) -> None:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def lambda_svg(times, radii, jumps=(), width: int = 640, height: int = 400) -> str:
    """Staircase plot of a boundary path; recorded jumps drawn as dashed verticals."""
    t = np.asarray(times, dtype=float)
    r = np.asarray(radii, dtype=float)
    pad = 50
    t0, t1 = (float(t.min()), float(t.max())) if t.size else (0.0, 1.0)
    r0, r1 = 0.0, float(r.max()) if r.size else 1.0
    if t1 <= t0:
        t1 = t0 + 1.0
    if r1 <= r0:
        r1 = r0 + 1.0

    def sx(v):
        return pad + (v - t0) / (t1 - t0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - r0) / (r1 - r0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">t</text>',
        f'<text x="14" y="{height / 2:.1f}" font-size="12">Lambda</text>',
    ]
    for v in np.linspace(t0, t1, 5):
        parts.append(f'<text x="{sx(v):.2f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    for v in np.linspace(r0, r1, 5):
        parts.append(f'<text x="{pad - 6}" y="{sy(v) + 3:.2f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    if t.size == 1:
        parts.append(f'<circle cx="{sx(t[0]):.2f}" cy="{sy(r[0]):.2f}" r="3" fill="navy"/>')
    elif t.size > 1:
        jump_times = {round(j[0], 12) for j in jumps}
        seg = [(sx(t[0]), sy(r[0]))]
        for k in range(1, t.size):
            seg.append((sx(t[k]), sy(r[k - 1])))
            if round(t[k], 12) in jump_times:
                parts.append(_polyline(seg))
                parts.append(
                    f'<line x1="{sx(t[k]):.2f}" y1="{sy(r[k - 1]):.2f}" x2="{sx(t[k]):.2f}" y2="{sy(r[k]):.2f}" '
                    'stroke="crimson" stroke-dasharray="4,3"/>'
                )
                seg = [(sx(t[k]), sy(r[k]))]
            else:
                seg.append((sx(t[k]), sy(r[k])))
        parts.append(_polyline(seg))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _polyline(points) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return f'<polyline points="{pts}" fill="none" stroke="navy"/>'
