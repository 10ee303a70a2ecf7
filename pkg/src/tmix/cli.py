"""Experiment runner.

    python -m tmix mix --config run.toml --out results/
    python -m tmix regloss --nmax 10
    python -m tmix norms --grid 162
    python -m tmix selftest

Exit codes: 0 success, 1 configuration error, 2 failed numerical gate,
3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .advect import IntegratorConfig
from .mixers import MixerConstruction, build_pinch_mixer, build_snake_mixer, mollify, nominal_pattern
from .norms import (GeomScaleParams, NotMixed, fit_decay, geometric_scale, hm1, hs_norm,
                    w1p_seminorm)
from .regloss import assemble, default_schedule, loss_report
from .selfsimilar import (EXPONENTIAL, FINITE_TIME, POLYNOMIAL, centered, composite, envelope,
                          make_schedule, rescaled_velocity)
from .torus import TorusGrid

log = logging.getLogger("tmix")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
ENVELOPE_SLACK = 1.05
NORMS_HEADER = ("t", "hm1", "geom_eps", "l2", "h1", "u_w1p")
REGLOSS_HEADER = ("N", "t", "s", "theta_hs", "p", "v_w1p")
DEFAULT_GRID = {"snake": 1458, "pinch": 256}
REGLOSS_GRID = 162
DEFAULT_DT = {"snake": 1.0 / 60.0, "pinch": 1e-3}
SAMPLE_GRID = {"snake": 162, "pinch": 128}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = "mix"
    mixer: str = "snake"
    s: float = 1.0
    p: float = 2.0
    lam: Optional[str] = None
    n_max: int = 4
    grid_n: Optional[int] = None
    dt: Optional[float] = None
    kappa: float = 0.25
    delta: float = 1e-3
    output_dir: str = "out"
    seed: int = 0
    checkpoints_per_patch: int = 2

    def __post_init__(self):
        if self.command not in ("mix", "regloss", "norms", "selftest"):
            raise ConfigError(f"unknown command {self.command!r}")
        if self.mixer not in ("pinch", "snake"):
            raise ConfigError(f"mixer must be 'pinch' or 'snake', got {self.mixer!r}")
        if self.s < 0:
            raise ConfigError("s must be nonnegative")
        if self.p < 1:
            raise ConfigError("p must be >= 1")
        if self.n_max < 0 or self.n_max > 12:
            raise ConfigError("n_max must lie in 0..12")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not 0 < self.kappa < 0.5:
            raise ConfigError("kappa must lie in (0, 1/2)")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.checkpoints_per_patch < 1:
            raise ConfigError("checkpoints_per_patch must be positive")
        if self.lam is not None:
            try:
                q = Fraction(self.lam)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"lambda {self.lam!r} is not a rational number") from exc
            if not 0 < q < 1 or (1 / q).denominator != 1:
                raise ConfigError(f"lambda must be 1/m for an integer m >= 2, got {self.lam}")

    @property
    def grid(self) -> TorusGrid:
        try:
            return TorusGrid(self.grid_n or DEFAULT_GRID[self.mixer])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else DEFAULT_DT[self.mixer]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_KEY_ALIASES = {"lambda": "lam"}


def load_config(path: Optional[str], overrides: Dict[str, object]) -> ExperimentConfig:
    data: Dict[str, object] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    data = {_KEY_ALIASES.get(k, k): v for k, v in data.items()}
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "lam" in data and data["lam"] is not None:
        data["lam"] = str(data["lam"])
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_mixer(cfg: ExperimentConfig, grid: TorusGrid) -> MixerConstruction:
    try:
        if cfg.mixer == "snake":
            return build_snake_mixer(grid)
        return build_pinch_mixer(cfg.delta, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------------- output

def fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NaN"
    return f"{float(x):.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in r])


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "tmix_version": __version__,
            "numpy_version": np.__version__, "effective_config": cfg.as_dict()}


# --------------------------------------------------------------------- runs

@dataclass
class RunReport:
    rows: List[tuple]
    regime: str
    fits: Dict[str, dict]
    envelope_violations: int
    summary: Dict[str, object]
    wall_clock: float
    exit_code: int = EXIT_OK


VELOCITY_SAMPLES = 5


def _velocity_times(start: float, stop: float) -> List[float]:
    # The mixers ramp their velocity to zero at every patch boundary, so the
    # u_w1p column reports the largest value over the row's time slot.
    return [float(x) for x in np.linspace(start, stop, VELOCITY_SAMPLES, endpoint=False)]


def _norm_row(t, field, vm, times, cfg, grid, perfectly_mixed=False):
    if perfectly_mixed:
        return (t, 0.0, float("nan"), 0.0, 0.0, 0.0)
    g = geometric_scale(field, GeomScaleParams(kappa=cfg.kappa))
    h1 = hs_norm(mollify(centered(field)), 1.0)
    u = max(w1p_seminorm(vm, tt, cfg.p, grid) for tt in times)
    return (t, hm1(centered(field)), float("nan") if g is NotMixed else float(g),
            float(np.sqrt(np.mean(field.values ** 2))), h1, u)


def run_mix(cfg: ExperimentConfig) -> RunReport:
    start = time.perf_counter()
    grid = cfg.grid
    mixer = build_mixer(cfg, grid)
    sample_grid = TorusGrid(SAMPLE_GRID[cfg.mixer])
    icfg = IntegratorConfig(cfg.step)
    lam = cfg.lam if cfg.lam is not None else mixer.lam
    try:
        sch = make_schedule(cfg.s, cfg.p, lam, mixer, sample_grid, icfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    m_res = sch.power
    need = mixer.inv_lambda ** (m_res * cfg.n_max) * 8
    if grid.n % (need // 8) or grid.n < need:
        raise ConfigError(f"grid {grid.n} cannot resolve {cfg.n_max} periods at lambda = {lam}; "
                          f"use a multiple of {need // 8} with at least {need} nodes, "
                          f"or lower --nmax")
    sol = composite(mixer, sch)
    rows = []
    viol = 0
    k = cfg.checkpoints_per_patch
    for n in range(cfg.n_max + 1):
        T0 = sch.T(n)
        span = sch.T(n + 1) - T0
        subs = [0] if n == cfg.n_max else list(range(k))
        for j in subs:
            t = T0 + span * j / k
            ev = sol.evaluate(t, grid, icfg)
            vm = rescaled_velocity(mixer, sch, n)
            slot = span / k if n < cfg.n_max else span
            row = _norm_row(t, ev.field, vm, _velocity_times(t - T0, t - T0 + slot), cfg, grid,
                            ev.perfectly_mixed)
            rows.append(row)
            if row[1] > envelope(sch, t) * ENVELOPE_SLACK:
                viol += 1
    fits = {}
    cps = [(r[0], r[1]) for r in rows if any(abs(r[0] - sch.T(n)) < 1e-12 for n in range(cfg.n_max + 1))]
    if len(cps) >= 4:
        if sch.regime == POLYNOMIAL:
            f = fit_decay([c for c in cps if c[0] > 0], "power-law") if len(cps) >= 5 else None
        elif sch.regime == FINITE_TIME:
            f = fit_decay([(float(i), v) for i, (_, v) in enumerate(cps)])
        else:
            f = fit_decay(cps)
        if f is not None:
            fits["hm1"] = dataclasses.asdict(f)
        geo = [(r[0], r[2]) for r in rows if not math.isnan(r[2])]
        cp_geo = [g for g in geo if any(abs(g[0] - sch.T(n)) < 1e-12 for n in range(cfg.n_max + 1))]
        if len(cp_geo) >= 4 and sch.regime == EXPONENTIAL:
            fits["geom_eps"] = dataclasses.asdict(fit_decay(cp_geo))
    summary = {"regime": sch.regime, "tau": sch.tau, "T_inf": sch.T_inf if math.isfinite(sch.T_inf) else "inf",
               "M": sch.M, "lambda": str(sch.lam), "checkpoint_times": [sch.T(n) for n in range(cfg.n_max + 1)],
               "envelope_violations": viol}
    code = EXIT_OK if viol == 0 else EXIT_NUMERIC
    return RunReport(rows, sch.regime, fits, viol, summary, time.perf_counter() - start, code)


def run_norms(cfg: ExperimentConfig) -> RunReport:
    """Norm table of the exact checkpoint patterns (no advection)."""
    start = time.perf_counter()
    grid = cfg.grid
    mixer = build_mixer(cfg, grid)
    rows = []
    for n in range(cfg.n_max + 1):
        try:
            f = nominal_pattern(mixer, n, grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        vm = rescaled_velocity(mixer, make_schedule(1.0, cfg.p, mixer.lam, mixer, M=1.0), n)
        rows.append(_norm_row(float(n), f, vm, _velocity_times(0.0, 1.0), cfg, grid))
    fits = {"hm1": dataclasses.asdict(fit_decay([(r[0], r[1]) for r in rows]))} if len(rows) >= 4 else {}
    return RunReport(rows, EXPONENTIAL, fits, 0, {"checkpoints": len(rows)}, time.perf_counter() - start)


def run_regloss(cfg: ExperimentConfig):
    start = time.perf_counter()
    N = cfg.n_max if cfg.n_max >= 1 else 10
    try:
        sch = default_schedule(N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    grid = TorusGrid(cfg.grid_n or REGLOSS_GRID)
    mixer = build_snake_mixer(grid) if cfg.mixer == "snake" else None
    if mixer is None:
        raise ConfigError("regloss uses the snake mixer (it needs an exponential-regime velocity)")
    asm = assemble(sch, mixer, grid, IntegratorConfig(cfg.step, "bicubic"))
    rep = loss_report(asm, (0.0, 0.25, 0.5, 1.0), (0.25, 0.5), (1.0, 2.0, 4.0))
    rows = [(r.N, r.t, r.s, r.theta_hs, r.p, r.v_w1p) for r in rep.rows]
    code = EXIT_OK
    if rep.verdicts.get("velocity p=2") != "bounded" or rep.verdicts.get("datum smoothness") != "decreasing":
        code = EXIT_NUMERIC
    return rows, rep, time.perf_counter() - start, code


# ----------------------------------------------------------------- commands

def _write_report(out: Path, name: str, cfg: ExperimentConfig, body: dict, wall: float, lines: List[str]):
    meta = provenance(cfg)
    with open(out / f"{name}_summary.json", "w") as fh:
        json.dump({**meta, **body}, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    text = [f"tmix {name} report", f"config hash: {meta['config_hash']}",
            f"tmix {__version__}, numpy {np.__version__}",
            f"grid: {cfg.grid_n or 'default'}, dt: {cfg.step:.6g}", f"wall clock: {wall:.1f} s", ""]
    text += lines
    (out / f"{name}_report.txt").write_text("\n".join(text) + "\n")


def cmd_mix(cfg: ExperimentConfig, out: Path) -> int:
    rep = run_mix(cfg)
    write_csv(out / "mix.csv", NORMS_HEADER, rep.rows)
    lines = [f"regime: {rep.regime}", f"envelope violations: {rep.envelope_violations}"]
    for k, f in rep.fits.items():
        lines.append(f"{k} fit ({f['model']}): rate {f['rate']:.6g}, residual {f['residual']:.3g}")
    lines += [f"{k}: {v}" for k, v in rep.summary.items()]
    _write_report(out, "mix", cfg, {"summary": rep.summary, "fits": rep.fits}, rep.wall_clock, lines)
    print("\n".join(lines))
    return rep.exit_code


def cmd_norms(cfg: ExperimentConfig, out: Path) -> int:
    rep = run_norms(cfg)
    write_csv(out / "norms.csv", NORMS_HEADER, rep.rows)
    lines = [f"{k} fit: rate {f['rate']:.6g}" for k, f in rep.fits.items()]
    _write_report(out, "norms", cfg, {"fits": rep.fits}, rep.wall_clock, lines)
    print("\n".join(lines) if lines else "fewer than 4 checkpoints, no fit")
    return EXIT_OK


def cmd_regloss(cfg: ExperimentConfig, out: Path) -> int:
    rows, rep, wall, code = run_regloss(cfg)
    write_csv(out / "regloss.csv", REGLOSS_HEADER, rows)
    lines = [f"{k}: {v}" for k, v in rep.verdicts.items()]
    lines.append("Divergent trend means strictly increasing partial sums whose last increment is "
                 "the largest; membership itself cannot be decided from finitely many cubes.")
    _write_report(out, "regloss", cfg, {"verdicts": rep.verdicts}, wall, lines)
    print("\n".join(lines))
    return code


def cmd_selftest(cfg: ExperimentConfig, out: Path) -> int:
    from .selftest import run_selftest
    t0 = time.perf_counter()
    results = run_selftest(cfg)
    lines = []
    code = EXIT_OK
    for r in results:
        lines.append(f"{'PASS' if r.ok else 'FAIL'} {r.module}: {r.invariant} "
                     f"(observed {r.observed}, required {r.required})")
        if not r.ok and code == EXIT_OK:
            code = EXIT_NUMERIC
            log.error("first failing gate: %s / %s: observed %s, required %s",
                      r.module, r.invariant, r.observed, r.required)
    _write_report(out, "selftest", cfg, {"gates": [dataclasses.asdict(r) for r in results]},
                  time.perf_counter() - t0, lines)
    print("\n".join(lines))
    return code


COMMANDS = {"mix": cmd_mix, "norms": cmd_norms, "regloss": cmd_regloss, "selftest": cmd_selftest}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tmix", description="Self-similar mixing experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML file with experiment keys")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--mixer", choices=("pinch", "snake"))
    ap.add_argument("--grid", type=int, dest="grid_n")
    ap.add_argument("--nmax", type=int, dest="n_max")
    ap.add_argument("--s", type=float)
    ap.add_argument("--p", type=float)
    ap.add_argument("--lambda", dest="lam")
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    over = {k: getattr(args, k) for k in ("mixer", "grid_n", "n_max", "s", "p", "lam", "kappa",
                                          "delta", "dt", "seed")}
    over["command"] = args.command
    if args.out is not None:
        over["output_dir"] = args.out
    try:
        cfg = load_config(args.config, over)
        np.random.seed(cfg.seed)
        out = Path(cfg.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
            return EXIT_IO
        return COMMANDS[cfg.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
