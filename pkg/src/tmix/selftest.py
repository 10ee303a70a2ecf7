"""Reduced-size invariant gates run by ``tmix selftest`` (all grids <= 256)."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List

import numpy as np

from .advect import FlowMap, IntegratorConfig, solve, trace
from .flowkit import rotation_field
from .mixers import build_pinch_mixer, build_snake_mixer, nominal_pattern
from .norms import GeomScaleParams, geometric_scale, hm1, hs_norm, interpolation_check
from .regloss import default_schedule
from .selfsimilar import make_schedule
from .torus import ScalarField, TorusGrid, from_spectral, rescale_pattern, to_spectral

GOLDEN_PATH = Path(__file__).with_name("golden.json")


@dataclass(frozen=True)
class Gate:
    module: str
    invariant: str
    ok: bool
    observed: str
    required: str


def _sin_field(n):
    g = TorusGrid(n)
    x1, _ = g.mesh()
    return ScalarField(g, np.sin(2 * np.pi * x1), mean_zero=True)


def gate_spectral() -> Gate:
    f = _sin_field(256)
    exact = {-1: 1 / (2 * math.sqrt(2) * math.pi), 0: 1 / math.sqrt(2), 1: math.sqrt(2) * math.pi}
    err = max(abs(hs_norm(f, s) / v - 1) for s, v in exact.items())
    return Gate("norms", "single-mode H^s values", err <= 1e-10, f"{err:.2e}", "<= 1e-10")


def gate_roundtrip() -> Gate:
    rng = np.random.default_rng(1)
    g = TorusGrid(96)
    f = ScalarField(g, rng.standard_normal((96, 96)))
    back = from_spectral(to_spectral(f)).values
    err = float(np.abs(back - f.values).max() / np.abs(f.values).max())
    return Gate("torus", "spectral round trip", err <= 1e-12, f"{err:.2e}", "<= 1e-12")


def gate_rescale() -> Gate:
    # Band-limited below n/4, so the even sub-lattice kept by rescaling is balanced.
    g = TorusGrid(128)
    rng = np.random.default_rng(2)
    k1, k2 = g.wavenumbers()
    band = (np.abs(k1) < 32) & (np.abs(k2) < 32) & ((k1 != 0) | (k2 != 0))
    v = np.fft.ifft2(band * np.fft.fft2(rng.standard_normal((128, 128)))).real
    f = ScalarField(g, v - v.mean(), mean_zero=True)
    r = hm1(rescale_pattern(f, 0.5)) / hm1(f)
    return Gate("torus", "H^-1 scales by lambda under rescaling", abs(r - 0.5) <= 1e-10 * 0.5,
                f"{r:.15f}", "0.5 +- 5e-11")


def gate_interpolation() -> Gate:
    rng = np.random.default_rng(3)
    g = TorusGrid(64)
    bad = 0
    for _ in range(50):
        v = rng.standard_normal((64, 64))
        f = ScalarField(g, v - v.mean(), mean_zero=True)
        bad += not all(interpolation_check(f, s).holds for s in (0.5, 1.0, 2.0))
    return Gate("norms", "interpolation inequality on random fields", bad == 0, f"{bad} failures", "0")


def gate_convergence(dt: float) -> Gate:
    vm = rotation_field((0.5, 0.5), 0.2, 0.4, 2 * np.pi)
    x1 = np.array([0.62, 0.45, 0.5])
    x2 = np.array([0.5, 0.66, 0.31])
    ref = trace(vm, 0.0, 1.0, x1, x2, IntegratorConfig(dt / 64))
    errs = []
    for k in range(4):
        y = trace(vm, 0.0, 1.0, x1, x2, IntegratorConfig(dt / 2 ** k))
        errs.append(float(np.hypot(y[0] - ref[0], y[1] - ref[1]).max()))
    ratios = [a / b if b > 0 else math.inf for a, b in zip(errs, errs[1:])]
    ok = all(12 <= r <= 20 for r in ratios)
    return Gate("advect", f"RK4 order-4 error ratios from dt = {dt:g}", ok,
                "[" + ", ".join(f"{r:.2f}" for r in ratios) + "]", "each in [12, 20]")


def gate_jacobian() -> Gate:
    grid = TorusGrid(162)
    m = build_snake_mixer(grid)
    rng = np.random.default_rng(4)
    p = rng.random((2, 64))
    det = FlowMap(m.u0, 0.0, 1.0, IntegratorConfig(1 / 60)).jacobian(p[0], p[1], h=1e-6)
    err = float(np.abs(det - 1).max())
    return Gate("advect", "flow-map Jacobian of the snake", err <= 1e-4, f"{err:.2e}", "<= 1e-4")


def gate_checkpoints() -> Gate:
    sg, pg = TorusGrid(162), TorusGrid(256)
    snake, pinch = build_snake_mixer(sg), build_pinch_mixer(1e-3, pg)
    ok = True
    for m, g in ((snake, sg), (pinch, pg)):
        f = m.rho0(g)
        ok &= bool(np.array_equal(m.checkpoint_map(f).values, m.rescaled(f).values))
        ok &= abs(f.mean) == 0.0
    return Gate("mixers", "checkpoint map equals rescaled pattern", ok, str(ok), "True")


def gate_snake_advection() -> Gate:
    g = TorusGrid(162)
    m = build_snake_mixer(g)
    out = solve(m.datum, m.u0, 1.0, g, IntegratorConfig(1 / 60))
    match = float(np.mean(out.values == nominal_pattern(m, 1, g).values))
    return Gate("mixers", "one snake period matches the checkpoint", match >= 0.995,
                f"{match:.4f}", ">= 0.995")


def gate_schedules() -> Gate:
    g = TorusGrid(64)
    pinch = build_pinch_mixer(1e-3, g)
    a = make_schedule(1.0, 2.0, 0.5, pinch, M=1.0)
    b = make_schedule(0.5, 2.0, 0.25, pinch, M=1.0)
    c = make_schedule(2.0, 2.0, 0.5, pinch, M=1.0)
    ok = (a.regime == "exponential" and a.T(5) == 5 and b.regime == "finite-time"
          and abs(b.T_inf - 2) < 1e-15 and c.regime == "polynomial" and c.T(6) == 63)
    obs = f"{a.regime}, T_inf={b.T_inf}, T_6={c.T(6)}"
    return Gate("selfsimilar", "regimes and patch times", ok, obs, "exponential, T_inf=2, T_6=63")


def gate_cubes() -> Gate:
    r = default_schedule(10).min_gap_ratio()
    return Gate("regloss", "cube gaps relative to side", r >= 0.25, f"{r:.3f}", ">= 0.25")


def _golden_digest(values: dict) -> str:
    return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()


def load_golden(path: Path) -> dict:
    data = json.loads(Path(path).read_text())
    digest = _golden_digest(data["values"])
    if digest != data.get("sha256"):
        raise ValueError(f"golden file {path} fails its checksum "
                         f"(stored {data.get('sha256')}, computed {digest})")
    return data["values"]


def gate_golden() -> Gate:
    path = Path(os.environ.get("TMIX_GOLDEN", GOLDEN_PATH))
    try:
        gold = load_golden(path)
    except (OSError, ValueError, KeyError) as exc:
        return Gate("golden", "golden file checksum", False, str(exc), "matching sha256")
    g = TorusGrid(256)
    x1, x2 = g.mesh()
    board = np.where((np.floor(8 * x1) + np.floor(8 * x2)) % 2 == 0, 1.0, -1.0)
    radii = tuple(j / 128 for j in range(1, 65))
    eps = geometric_scale(ScalarField(g, board), GeomScaleParams(0.25, radii))
    ok = eps == gold["checkerboard_eps"]
    return Gate("golden", "checkerboard geometric scale", ok, repr(eps), repr(gold["checkerboard_eps"]))


def run_selftest(cfg=None) -> List[Gate]:
    dt = cfg.dt if cfg is not None and cfg.dt is not None else 0.02
    gates: List[Callable[[], Gate]] = [
        gate_golden, gate_spectral, gate_roundtrip, gate_rescale, gate_interpolation,
        lambda: gate_convergence(dt), gate_jacobian, gate_checkpoints, gate_snake_advection,
        gate_schedules, gate_cubes,
    ]
    return [g() for g in gates]
