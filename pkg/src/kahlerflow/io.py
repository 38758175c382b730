"""Config files, state files, trace CSV, JSON summaries and SVG plots."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .flow import FlowConfig, FlowTrace, trace_columns
from .geometry import (
    MANIFOLDS,
    ConfigurationError,
    ReducedGrid,
    ReducedMetricState,
)

ENV_PREFIX = "KRF_"
STATE_MAGIC = "# kahlerflow-state"
STATE_VERSION = 1

# config key -> FlowConfig field
CONFIG_KEYS = {
    "manifold": "manifold",
    "n_points": "n_points",
    "L": "L",
    "dt": "dt",
    "t_end": "t_end",
    "integrator": "integrator",
    "init.family": "init_family",
    "init.amplitude": "init_amplitude",
    "init.mode": "init_mode",
    "monitors": "monitors",
    "normalize_c": "normalize_c",
    "seed": "seed",
    "rtol": "rtol",
    "atol": "atol",
    "dt_min": "dt_min",
    "dt_max": "dt_max",
}


def fmt(x) -> str:
    """17 significant digits; round-trips any double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def env_name(key: str) -> str:
    return ENV_PREFIX + key.replace(".", "_").upper()


def _convert(key, field_type, raw: str):
    raw = raw.strip()
    try:
        if field_type in (int, "int"):
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        if field_type in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {field_type if isinstance(field_type, str) else field_type.__name__}") from None
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{key}: unknown config key (line {lineno})")
        if key in out:
            raise ConfigurationError(f"{key}: given twice (line {lineno})")
        out[key] = val
    return out


def build_config(raw: dict, env=None) -> FlowConfig:
    """FlowConfig from raw key/value strings; environment variables win."""
    env = os.environ if env is None else env
    merged = dict(raw)
    for key in CONFIG_KEYS:
        name = env_name(key)
        if name in env:
            merged[key] = env[name]
    types = {f.name: f.type for f in fields(FlowConfig)}
    kwargs = {}
    for key, val in merged.items():
        attr = CONFIG_KEYS[key]
        kwargs[attr] = _convert(key, types[attr], val)
    cfg = FlowConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path, env=None) -> FlowConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return build_config(parse_config_text(text), env)


def config_echo(cfg: FlowConfig) -> dict:
    inv = {v: k for k, v in CONFIG_KEYS.items()}
    return {inv[k]: v for k, v in asdict(cfg).items()}


# ---------------------------------------------------------------------------
# state files

def write_state(path, state: ReducedMetricState):
    g = state.grid
    lines = [f"{STATE_MAGIC} v{STATE_VERSION} manifold={g.manifold} n_points={g.n_points}", "s,u,phi"]
    for s, u, p in zip(g.s, state.u_samples, state.phi):
        lines.append(f"{fmt(s)},{fmt(u)},{fmt(p)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_state(path) -> ReducedMetricState:
    """Parse a state file; ConfigurationError on any malformation."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot read state file {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) < 3 or not lines[0].startswith(STATE_MAGIC):
        raise ConfigurationError("state file: missing header")
    meta = {}
    for tok in lines[0][len(STATE_MAGIC):].split():
        if tok.startswith("v"):
            meta["version"] = tok[1:]
        elif "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
    if meta.get("version") != str(STATE_VERSION):
        raise ConfigurationError(f"state file: unsupported version {meta.get('version')!r}")
    manifold = meta.get("manifold")
    if manifold not in MANIFOLDS:
        raise ConfigurationError(f"state file: bad manifold {manifold!r}")
    try:
        N = int(meta["n_points"])
    except (KeyError, ValueError):
        raise ConfigurationError("state file: bad n_points") from None
    if lines[1].strip() != "s,u,phi":
        raise ConfigurationError("state file: expected column header 's,u,phi'")
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != N:
        raise ConfigurationError(f"state file: expected {N} rows, found {len(rows)}")
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in rows])
    except ValueError as exc:
        raise ConfigurationError(f"state file: {exc}") from exc
    if data.shape != (N, 3) or not np.all(np.isfinite(data)):
        raise ConfigurationError("state file: malformed rows")
    try:
        grid = ReducedGrid(manifold, N)
    except (ValueError, ConfigurationError) as exc:
        raise ConfigurationError(f"state file: {exc}") from exc
    if not np.allclose(data[:, 0], grid.s, rtol=1e-12, atol=1e-12):
        raise ConfigurationError("state file: s column does not match the grid")
    state = ReducedMetricState(grid, data[:, 2])
    if not np.allclose(data[:, 1], state.u_samples, rtol=1e-12, atol=1e-12):
        raise ConfigurationError("state file: u column inconsistent with phi")
    return state


# ---------------------------------------------------------------------------
# trace output

def write_trace_csv(path, trace: FlowTrace):
    names, data = trace.rows()
    lines = [",".join(names)]
    lines += [",".join(fmt(x) for x in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    names = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln.strip()])
    return {k: data[:, i] for i, k in enumerate(names)}


def expected_columns(n: int):
    return trace_columns(n)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# SVG

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def svg_plot(series, title="", xlabel="t", ylabel="", logy=False, width=640, height=400) -> str:
    """Minimal line plot.  ``series`` is a list of (label, x, y)."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 30, 45
    pts = []
    for label, x, y in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
            y = np.where(ok, np.log10(np.where(ok, y, 1.0)), np.nan)
        pts.append((label, x[ok], y[ok]))
    xs = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0])
    ys = np.concatenate([p[2] for p in pts]) if pts else np.array([0.0])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = width - pad_l - pad_r, height - pad_t - pad_b

    def X(v):
        return pad_l + (v - x0) / (x1 - x0) * W

    def Y(v):
        return pad_t + (1 - (v - y0) / (y1 - y0)) * H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{H}" fill="none" stroke="black"/>',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
           f'<text x="{pad_l + W / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
           f'<text x="14" y="{pad_t + H / 2}" text-anchor="middle" transform="rotate(-90 14 {pad_t + H / 2})">'
           f'{("log10 " if logy else "") + ylabel}</text>']
    for i in range(5):
        xv = x0 + i * (x1 - x0) / 4
        yv = y0 + i * (y1 - y0) / 4
        out.append(f'<text x="{X(xv):.1f}" y="{pad_t + H + 15}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{pad_l - 5}" y="{Y(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for i, (label, x, y) in enumerate(pts):
        col = _COLORS[i % len(_COLORS)]
        if x.size:
            path = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{pad_l + 8}" y="{pad_t + 14 + 13 * i}" fill="{col}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(out_dir, columns: dict, n: int):
    """Standard plots from trace columns; returns the written paths."""
    out_dir = Path(out_dir)
    t = columns["t"]
    paths = []
    specs = [
        ("decay.svg", "decay of flow quantities", "", True,
         [(k, t, columns[k]) for k in ("mu", "eps", "c", "mu_1", "mu_2")]),
        ("curvature.svg", "scalar curvature range", "R", False,
         [("R_max", t, columns["R_max"]), ("R_min", t, columns["R_min"]), ("min_bisec", t, columns["min_bisec"])]),
        ("functionals.svg", "energy functionals", "", False,
         [(k, t, columns[k]) for k in ["F", "nu", "J"] + [f"E_{k}" for k in range(n + 1)]]),
        ("rr2.svg", "accumulated (R - r)^2", "", False, [("rr2_accum", t, columns["rr2_accum"])]),
    ]
    for name, title, ylabel, logy, series in specs:
        p = out_dir / name
        p.write_text(svg_plot(series, title=title, ylabel=ylabel, logy=logy), encoding="utf-8")
        paths.append(str(p))
    return paths
