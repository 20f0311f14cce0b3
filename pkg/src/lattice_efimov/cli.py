"""Command-line front end.

Usage::

    python3 -m lattice_efimov resonance --gamma 0.5,1
    python3 -m lattice_efimov dispersion --gamma 1 --format jsonl
    python3 -m lattice_efimov spectrum --gamma 1 --K 0.5,0,0 --z-logrange -3 -2 2
    python3 -m lattice_efimov efimov --gamma 1 --set r=10,20,30
    python3 -m lattice_efimov oracle --gamma 1,8 --K 0,0,0 --K 0.5,0,0 --set z=0.5,1

A configuration file holds flat ``key = value`` lines (``#`` starts a
comment); command-line flags override it.  Exit status is 0 on success, 2
when the configuration is invalid and 3 when a numerical consistency
check fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import efimov as ef
from . import three_body as tb
from . import two_body as twb
from .errors import BracketError, ConsistencyError, ConvergenceWarning, DomainError
from .torus import TorusVec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Invalid or unparsable run configuration."""


@dataclass
class RunConfig:
    gamma: list = field(default_factory=lambda: [1.0])
    grid: int = 64
    three_body_n: int = 8
    cube_cells: int = 1
    levels_per_decade: float = 3.0
    oracle_n: int = 4
    tol: float = 1e-8
    bisect_tol: float = 1e-10
    eigen_guard: float = 1e-8
    z: list = field(default_factory=list)
    K: list = field(default_factory=list)
    sector: str = "antisymmetric"
    coupling_scale: float = 1.0
    path_points: int = 8
    r: list = field(default_factory=lambda: [10.0, 20.0, 30.0])
    l_max: int = 8
    n_x: int = 600
    mu: float = 1.0
    min_margin: float = 1e-3
    z_gap: float = 1e-6
    format: str = "csv"
    out: Optional[str] = None
    timings: bool = False

    def validate(self, command: str):
        if not self.gamma or any(not (g > 0 and math.isfinite(g)) for g in self.gamma):
            raise ConfigError("gamma values must be positive")
        for name in ("tol", "bisect_tol", "eigen_guard", "min_margin", "z_gap", "mu"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.grid < 8:
            raise ConfigError("two-body grid must have at least 8 points per axis")
        if self.three_body_n < 4:
            raise ConfigError("three_body_n must be at least 4")
        if not 4 <= self.oracle_n <= 5:
            raise ConfigError("oracle_n must be 4 or 5")
        if self.sector not in tb.SECTORS:
            raise ConfigError(f"sector must be one of {tb.SECTORS}")
        if self.format not in ("csv", "jsonl"):
            raise ConfigError("format must be csv or jsonl")
        if self.l_max < 4 or self.n_x < 2 or any(r <= 0 for r in self.r):
            raise ConfigError("efimov settings need l_max >= 4, n_x >= 2 and r > 0")
        if self.path_points < 2:
            raise ConfigError("path_points must be at least 2")


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _vectors(text: str) -> list:
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            v = [float(x) for x in chunk.split(",")]
            if len(v) != 3:
                raise ConfigError(f"momentum {chunk!r} needs three components")
            out.append(v)
    return out


def _logrange(a: float, b: float, n: int) -> list:
    if n < 1:
        raise ConfigError("z-logrange needs n >= 1")
    return [-(10.0**x) for x in np.linspace(a, b, int(n))]


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def apply_setting(cfg: RunConfig, key: str, value: str):
    key = key.strip().replace("-", "_")
    value = value.strip()
    types = {f.name: f for f in fields(RunConfig)}
    try:
        if key in ("gamma", "r", "z"):
            setattr(cfg, key, _floats(value))
        elif key == "K":
            setattr(cfg, key, _vectors(value))
        elif key == "z_logrange":
            a, b, n = value.split()
            cfg.z = _logrange(float(a), float(b), int(n))
        elif key in ("format", "sector", "out"):
            setattr(cfg, key, value)
        elif key == "timings":
            cfg.timings = _BOOL[value.lower()]
        elif key in types:
            current = getattr(cfg, key)
            setattr(cfg, key, type(current)(float(value)) if isinstance(current, int) else float(value))
        else:
            raise ConfigError(f"unknown setting {key!r}")
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse {key} = {value!r}") from exc


def load_config(path: str, cfg: Optional[RunConfig] = None) -> RunConfig:
    cfg = RunConfig() if cfg is None else cfg
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            apply_setting(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# Output


@dataclass
class Report:
    command: str
    rows: list
    manifest: dict
    status: int = EXIT_OK


def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, TorusVec):
        return list(v)
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _fmt(v):
    v = _clean(v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def render(report: Report, fmt: str) -> str:
    manifest = _clean(report.manifest)
    rows = [_clean(r) for r in report.rows]
    if fmt == "jsonl":
        lines = [json.dumps({"manifest": manifest}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in rows]
        return "\n".join(lines) + "\n"
    buf = io.StringIO()
    for key in sorted(manifest):
        buf.write(f"# {key}: {json.dumps(manifest[key], sort_keys=True)}\n")
    if rows:
        cols = list(rows[0].keys())
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in rows:
            writer.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


class _Stages:
    def __init__(self):
        self.times = {}

    def run(self, name, fn, *args, **kw):
        t = time.perf_counter()
        out = fn(*args, **kw)
        self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t
        return out


def _manifest(cfg: RunConfig, command: str, stages: _Stages, params_list) -> dict:
    config = {k: v for k, v in asdict(cfg).items() if k != "timings"}
    m = {"command": command, "config": config, "constants": [p.constants() for p in params_list]}
    m["mu0_error_estimate"] = params_list[0].mu0_error if params_list else None
    if cfg.timings:
        m["seconds_per_stage"] = {k: round(v, 3) for k, v in stages.times.items()}
    return m


def _params(cfg: RunConfig, stages: _Stages):
    mu0, err, _ = stages.run("mu0", twb.compute_mu0_with_error, 1e-10)
    return [twb.ModelParams(g, mu0, err, cfg.coupling_scale) for g in cfg.gamma]


# ---------------------------------------------------------------------------
# Commands


def cmd_resonance(cfg: RunConfig) -> Report:
    """Normalization check: Delta(0, 0) must vanish within its error estimate."""
    stages = _Stages()
    plist = _params(cfg, stages)
    rows, status = [], EXIT_OK
    for p in plist:
        ev = stages.run("determinant", twb.determinant, (0.0, 0.0, 0.0), 0.0, p)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            est = stages.run("grid_route", twb.determinant_refined, np.zeros(3), 0.0, p, cfg.tol, 16, cfg.grid)
        ok = abs(ev.value) <= 10.0 * ev.error_estimate
        if not ok:
            status = EXIT_NUMERICAL
        rows.append(
            {
                "gamma": p.gamma,
                "mu0": p.mu0,
                "v_gamma": p.v_gamma,
                "delta00": ev.value,
                "error_estimate": ev.error_estimate,
                "delta00_grid": est.value,
                "grid_error": est.error_estimate,
                "grid_levels": "/".join(str(n) for n in est.levels_used),
                "resonant": ok,
            }
        )
    return Report("resonance", rows, _manifest(cfg, "resonance", stages, plist), status)


def brillouin_path(points_per_segment: int) -> list:
    """Gamma -> X -> M -> R -> Gamma, with the mirrored point -k after each k."""
    corners = [np.zeros(3), np.array([np.pi, 0, 0]), np.array([np.pi, np.pi, 0]), np.array([np.pi, np.pi, np.pi]), np.zeros(3)]
    path = []
    for a, b in zip(corners[:-1], corners[1:]):
        for s in np.linspace(0.0, 1.0, points_per_segment, endpoint=False):
            path.append(a + s * (b - a))
    path.append(corners[-1])
    return path


def cmd_dispersion(cfg: RunConfig) -> Report:
    """Table k -> (m(k), z(k)) along a path; each k is followed by -k."""
    stages = _Stages()
    plist = _params(cfg, stages)
    ks = cfg.K if cfg.K else brillouin_path(cfg.path_points)
    rows, status = [], EXIT_OK
    for p in plist:
        for k in ks:
            for sgn in (1.0, -1.0):
                kv = TorusVec.of(sgn * np.asarray(k, dtype=float))
                m = float(twb.band_bottom(np.asarray(kv), p))
                row = {"gamma": p.gamma, "k1": kv.c1, "k2": kv.c2, "k3": kv.c3, "m": m, "z": 0.0, "bracket": 0.0, "error": ""}
                if not kv.is_zero():
                    try:
                        s = stages.run("bisection", twb.bound_state_energy, kv, p, cfg.bisect_tol)
                        row.update(z=s.z_gamma, bracket=s.bracket_width)
                        if not 0 < s.z_gamma < m:
                            row["error"] = "z outside (0, m)"
                            status = EXIT_NUMERICAL
                    except BracketError as exc:
                        row.update(z=None, bracket=None, error=str(exc))
                        status = EXIT_NUMERICAL
                rows.append(row)
    return Report("dispersion", rows, _manifest(cfg, "dispersion", stages, plist), status)


def cmd_spectrum(cfg: RunConfig) -> Report:
    """Essential interval [tau, E_max] per K and the eigenvalue count at each z."""
    stages = _Stages()
    plist = _params(cfg, stages)
    ks = cfg.K if cfg.K else [[0.0, 0.0, 0.0]]
    rows, status = [], EXIT_OK
    for p in plist:
        chans = [(np.asarray(K, dtype=float), stages.run("tau", tb.tau, K, p)) for K in ks]
        # counting is only defined below tau; check every requested z first
        for K, cm in chans:
            for z in cfg.z:
                if not z < cm.tau:
                    raise ConfigError(f"z={z} is not below tau={cm.tau} at K={tuple(K)}")
        for K, cm in chans:
            edges = stages.run("band_edges", tb.band_edges, K, p)
            zs = cfg.z if cfg.z else [cm.tau - cfg.z_gap]
            for z in zs:
                grid = tb.graded_grid(tuple(cm.minimizer), cm.tau - z, cfg.three_body_n, cfg.cube_cells, cfg.levels_per_decade)
                rep = stages.run("count", tb.eigen_count_N, K, z, p, grid, cfg.sector)
                below = cm.tau < edges.E_min or bool(np.allclose(K, 0.0))
                if not below or rep.ambiguous:
                    status = EXIT_NUMERICAL
                rows.append(
                    {
                        "gamma": p.gamma,
                        "K1": K[0],
                        "K2": K[1],
                        "K3": K[2],
                        "tau": cm.tau,
                        "E_min": edges.E_min,
                        "E_max": edges.E_max,
                        "hessian_positive": cm.hessian_positive,
                        "z": z,
                        "count": rep.count,
                        "margin": rep.margin,
                        "ambiguous": rep.ambiguous,
                        "nodes": rep.n_nodes,
                        "sector": cfg.sector,
                    }
                )
    return Report("spectrum", rows, _manifest(cfg, "spectrum", stages, plist), status)


def cmd_efimov(cfg: RunConfig) -> Report:
    """U(mu) per gamma with the model-operator ratios, and an optional z-sweep slope."""
    stages = _Stages()
    plist = _params(cfg, stages)
    sign = 1.0 if cfg.sector == "symmetric" else -1.0
    rows, status = [], EXIT_OK
    for p in plist:
        for sgn, label in ((1.0, "symmetric"), (-1.0, "antisymmetric")):
            coef = stages.run("coefficient", ef.efimov_coefficient, cfg.mu, p, cfg.l_max, sign=sgn)
            if sgn > 0 and not coef.value > 0:
                status = EXIT_NUMERICAL
            base = {"gamma": p.gamma, "sector": label, "U": coef.value, "truncation": coef.truncation_estimate}
            rows.append({**base, "kind": "coefficient", "r": None, "count": None, "ratio": None, "rel_error": None, "slope": None})
            for r in cfg.r:
                c = stages.run("s_operator", ef.s_operator_count, r, cfg.mu, p, cfg.l_max, cfg.n_x, sign=sgn)
                rel = abs(c.ratio - coef.value) / coef.value if coef.value > 0 else None
                rows.append({**base, "kind": "ratio", "r": r, "count": c.count, "ratio": c.ratio, "rel_error": rel, "slope": None})
        if cfg.z:
            sweep = stages.run(
                "z_sweep",
                ef.z_sweep,
                p,
                cfg.z,
                cfg.sector,
                {"n_per_axis": cfg.three_body_n, "cube_cells": cfg.cube_cells, "levels_per_decade": cfg.levels_per_decade},
            )
            coef = ef.efimov_coefficient(cfg.mu, p, cfg.l_max, sign=sign)
            rel = abs(sweep.fit.slope - coef.value) / coef.value if coef.value > 0 else None
            rows.append(
                {
                    "gamma": p.gamma,
                    "sector": cfg.sector,
                    "U": coef.value,
                    "truncation": coef.truncation_estimate,
                    "kind": "z_sweep",
                    "r": None,
                    "count": ";".join(str(c) for c in sweep.counts),
                    "ratio": None,
                    "rel_error": rel,
                    "slope": sweep.fit.slope,
                }
            )
    return Report("efimov", rows, _manifest(cfg, "efimov", stages, plist), status)


def cmd_oracle(cfg: RunConfig) -> Report:
    """Birman-Schwinger counts against direct diagonalization on shared grids."""
    stages = _Stages()
    plist = _params(cfg, stages)
    ks = cfg.K if cfg.K else [[0.0, 0.0, 0.0]]
    zs = cfg.z if cfg.z else [0.5, 1.0]
    rows, status = [], EXIT_OK
    for p in plist:
        for K in ks:
            for z in zs:
                for sector in tb.SECTORS:
                    try:
                        r = stages.run("oracle", tb.oracle_comparison, K, z, p, cfg.oracle_n, sector)
                    except (DomainError, ConsistencyError) as exc:
                        rows.append({"gamma": p.gamma, "K": list(K), "z": z, "sector": sector, "direct": None, "bs": None, "direct_margin": None, "bs_margin": None, "agree": None, "flag": f"skipped: {exc}"})
                        continue
                    flag = "ambiguous" if r["ambiguous"] or r["direct_margin"] < cfg.min_margin else ""
                    if not r["agree"] and not flag:
                        status = EXIT_NUMERICAL
                    rows.append({"gamma": p.gamma, "K": list(K), "z": z, "sector": sector, "direct": r["direct"], "bs": r["bs"], "direct_margin": r["direct_margin"], "bs_margin": r["bs_margin"], "agree": r["agree"], "flag": flag})
    return Report("oracle", rows, _manifest(cfg, "oracle", stages, plist), status)


COMMANDS = {
    "resonance": cmd_resonance,
    "dispersion": cmd_dispersion,
    "spectrum": cmd_spectrum,
    "efimov": cmd_efimov,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice_efimov", description="Spectral computations for the lattice three-body fiber operators.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--gamma", help="comma-separated mass ratios")
    parser.add_argument("--grid", type=int, help="two-body grid points per axis")
    parser.add_argument("--z-logrange", nargs=3, metavar=("A", "B", "N"), help="z = -10**x for N values of x from A to B")
    parser.add_argument("--K", action="append", help="total momentum k1,k2,k3 (repeatable)")
    parser.add_argument("--out", help="output path (default stdout)")
    parser.add_argument("--format", choices=["csv", "jsonl"])
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any configuration key")
    parser.add_argument("--timings", action="store_true", help="record wall-clock seconds per stage in the manifest")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.gamma:
        apply_setting(cfg, "gamma", args.gamma)
    if args.grid is not None:
        cfg.grid = args.grid
    if args.z_logrange:
        apply_setting(cfg, "z_logrange", " ".join(args.z_logrange))
    if args.K:
        cfg.K = [v for k in args.K for v in _vectors(k)]
    if args.out:
        cfg.out = args.out
    if args.format:
        cfg.format = args.format
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        apply_setting(cfg, *item.split("=", 1))
    if args.timings:
        cfg.timings = True
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        cfg.validate(args.command)
        report = COMMANDS[args.command](cfg)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConsistencyError, BracketError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = render(report, cfg.format)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return report.status


if __name__ == "__main__":
    sys.exit(main())
