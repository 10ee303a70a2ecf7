"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines are collected and printed in the terminal summary)
or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from tmix import cli
from tmix.advect import FlowMap, IntegratorConfig, solve, trace
from tmix.flowkit import rotation_field
from tmix.mixers import build_pinch_mixer, build_snake_mixer, mixer_power, nominal_pattern, snake_datum
from tmix.norms import (GeomScaleParams, NotMixed, count_components, fit_decay, geometric_scale,
                        gradient_magnitude, hm1, hs_norm, interpolation_check)
from tmix.regloss import assemble, default_schedule, loss_report, saturation_probe
from tmix.selfsimilar import centered, composite, envelope, make_schedule, rescaled_velocity
from tmix.torus import ScalarField, TorusGrid

LOG3 = math.log(3.0)
RESULTS: dict = {}

pytestmark = pytest.mark.acceptance


def report(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


def _coarse_stripes(n):
    g = TorusGrid(n)
    x1, x2 = g.mesh()
    return ScalarField(g, snake_datum(x1, x2), mean_zero=True)


def test_01_spectral_exactness():
    g = TorusGrid(256)
    x1, _ = g.mesh()
    f = ScalarField(g, np.sin(2 * np.pi * x1), mean_zero=True)
    exact = {-1.0: 1 / (2 * math.sqrt(2) * math.pi), 0.0: 1 / math.sqrt(2), 1.0: math.sqrt(2) * math.pi}
    err = max(abs(hs_norm(f, s) / v - 1) for s, v in exact.items())
    report(1, err <= 1e-10, f"single-mode H^s relative error {err:.2e} (<= 1e-10)")


def test_02_exponential_regime_snake():
    t0 = time.perf_counter()
    grid = TorusGrid(1458)
    mixer = build_snake_mixer(grid)
    sch = make_schedule(1.0, 2.0, mixer.lam, mixer, M=1.0)
    sol = composite(mixer, sch)
    lam = 1 / 3
    # Pattern oracle: the n-th checkpoint is the stripe datum sampled on the
    # grid with n/3^k nodes, repeated 3^k times, so its H^-1 norm is exactly
    # lam^k times that of the coarse sampling.
    ident = max(abs(hm1(sol.checkpoint(k, grid)) / (lam ** k * hm1(_coarse_stripes(1458 // 3 ** k))) - 1)
                for k in range(1, 5))
    cont = max(abs(hm1(sol.checkpoint(k, grid)) / (lam ** k / math.sqrt(48.0)) - 1) for k in range(1, 5))
    matches, samples = [], [(0.0, hm1(sol.checkpoint(0, grid)))]
    for n in range(4):
        adv = sol.advected_checkpoint(n, grid, IntegratorConfig(1 / 60))
        matches.append(float(np.mean(adv.values == sol.checkpoint(n + 1, grid).values)))
        samples.append((float(n + 1), hm1(centered(adv))))
    rate = fit_decay(samples).rate
    wall = time.perf_counter() - t0
    ok = (ident <= 1e-12 and min(matches) >= 0.995 and abs(rate / LOG3 - 1) <= 0.10
          and sch.regime == "exponential" and wall <= 600)
    report(2, ok, f"pattern identity {ident:.1e} (continuum {cont:.1e}), advected match "
                  f"min {min(matches):.5f} (>= 0.995), rate {rate:.4f} vs log 3 "
                  f"({abs(rate / LOG3 - 1):.2%}, <= 10%), {wall:.0f} s at 1458^2")


def test_03_geometric_scale():
    grid = TorusGrid(1458)
    mixer = build_snake_mixer(grid)
    eps = [geometric_scale(nominal_pattern(mixer, n, grid), GeomScaleParams(0.25)) for n in range(1, 5)]
    if any(e is NotMixed for e in eps):
        report(3, False, f"NotMixed among {eps}")
    # A ball of radius lam^n / 2 spans a full stripe period, so c = 1/2.
    ratios = [e * 3 ** n for n, e in enumerate(eps, start=1)]
    rate = fit_decay([(float(n), e) for n, e in enumerate(eps, start=1)]).rate
    ok = max(ratios) <= 0.5 and abs(rate / LOG3 - 1) <= 0.15
    report(3, ok, f"eps_n / lam^n in [{min(ratios):.3f}, {max(ratios):.3f}] (<= c = 1/2), "
                  f"rate {rate:.4f} vs log 3 ({abs(rate / LOG3 - 1):.2%}, <= 15%)")


def test_04_finite_time_regime():
    pinch = build_pinch_mixer(1e-3, TorusGrid(128))
    sch = make_schedule(0.5, 2.0, Fraction(1, 4), pinch, TorusGrid(128), IntegratorConfig(1e-3))
    grid = TorusGrid(2048)
    block = mixer_power(build_pinch_mixer(1e-3, grid), 2)
    h = [hm1(nominal_pattern(block, n, grid)) for n in range(4)]
    ratios = [b / a for a, b in zip(h, h[1:])]
    # Exact oracle: hm1 of checkpoint n equals 4^-n times hm1 of its coarse sub-lattice.
    base = block.rho0(grid).values
    ident = max(abs(h[n] / (0.25 ** n * hm1(ScalarField(TorusGrid(2048 // 4 ** n),
                                                         base[::4 ** n, ::4 ** n], mean_zero=True))) - 1)
                for n in range(1, 4))
    # The envelope is reported, not gated: M is sampled on 128^2 and the disk
    # sampled at 2048^2 sits 1.5e-4 above it, so the ratio to the envelope is
    # informative only to that accuracy.
    env = [envelope(sch, sch.T(n)) for n in range(4)]
    to_env = max(v / e for v, e in zip(h, env))
    ok = (sch.regime == "finite-time" and abs(sch.T_inf - 2.0) <= 1e-15 and ident <= 1e-12
          and all(abs(r / 0.25 - 1) <= 0.01 for r in ratios))
    report(4, ok, f"T_inf = {sch.T_inf}, identity {ident:.1e}, M = {sch.M:.6g}, step ratios "
                  f"{', '.join(f'{r:.5f}' for r in ratios)} (1/4 within 1%), "
                  f"envelope M lam^n {', '.join(f'{e:.4g}' for e in env)}, max hm1 / envelope {to_env:.5f}")


def test_05_polynomial_regime():
    grid = TorusGrid(1024)
    pinch = build_pinch_mixer(1e-3, grid)
    sch = make_schedule(2.0, 2.0, pinch.lam, pinch, M=1.0)
    times = [sch.T(n) for n in range(7)]
    exact_times = all(t == 2 ** n - 1 for n, t in enumerate(times))
    pts = [(times[n], hm1(nominal_pattern(pinch, n, grid))) for n in range(1, 7)]
    slope = -fit_decay(pts, "power-law").rate
    ok = exact_times and abs(slope + 1) <= 0.15
    report(5, ok, f"T_n = 2^n - 1: {exact_times}, log-log slope over n = 1..6 is {slope:.4f} "
                  f"(target -1 +- 15%)")


def test_06_uniform_velocity_bound():
    grid = TorusGrid(1024)
    pinch = build_pinch_mixer(1e-3, grid)
    sch = make_schedule(1.0, 2.0, pinch.lam, pinch, M=1.0)
    ts = np.linspace(0.0, 1.0, 9)
    w2 = []
    for n in range(5):
        vm = rescaled_velocity(pinch, sch, n)
        w2.append(max(float(np.sqrt(np.mean(gradient_magnitude(vm, t * vm.t_end, grid) ** 2))) for t in ts))
    sg = TorusGrid(486)
    snake = build_snake_mixer(sg)
    ssch = make_schedule(1.0, 2.0, snake.lam, snake, M=1.0)
    winf = []
    for n in range(5):
        vm = rescaled_velocity(snake, ssch, n)
        winf.append(max(float(gradient_magnitude(vm, t * vm.t_end, sg).max()) for t in ts))
    v2 = max(w2) / min(w2) - 1
    vinf = max(winf) / min(winf) - 1
    report(6, v2 < 0.01 and vinf < 0.05,
           f"pinch W^(1,2) sup over n <= 4 varies {v2:.2e} (< 1%), snake W^(1,inf) sup varies "
           f"{vinf:.2e} (< 5%)")


def test_07_pinch_splitting():
    grid = TorusGrid(512)
    pinch = build_pinch_mixer(1e-3, grid)
    cfg = IntegratorConfig(1e-3)
    counts, drift = [count_components(pinch.rho0(grid).values > 0)], 0.0
    area0 = float(np.mean(pinch.rho0(grid).values > 0))
    for t in (0.25, 0.5, 0.75, 1.0):
        f = solve(pinch.datum, pinch.u0, t, grid, cfg)
        counts.append(count_components(f.values > 0))
        drift = max(drift, abs(float(np.mean(f.values > 0)) - area0))
    seq = [c for i, c in enumerate(counts) if i == 0 or c != counts[i - 1]]
    # Velocity seminorms on a finer sampling grid: at 512^2 the root profile
    # of width delta is not resolved and grid doubling moves the values by 40%.
    vg = TorusGrid(2048)
    vm = build_pinch_mixer(1e-3, vg).u0
    ts = np.linspace(0.0, 1.0, 64)
    sups = {1.0: 0.0, 2.0: 0.0, 4.0: 0.0}
    arg = {}
    for t in ts:
        g = gradient_magnitude(vm, float(t), vg)
        for p in sups:
            v = float(np.mean(g ** p) ** (1 / p))
            if v > sups[p]:
                sups[p], arg[p] = v, float(t)
    fine = TorusGrid(4096)
    change = {p: abs(float(np.mean(gradient_magnitude(vm, arg[p], fine) ** p) ** (1 / p)) / sups[p] - 1)
              for p in sups}
    bounded = all(math.isfinite(v) for v in sups.values())
    ok = seq == [1, 2, 4] and drift <= 1e-3 and bounded
    report(7, ok, f"counts at t = 0, .25, .5, .75, 1: {counts}; area drift {drift:.1e} (<= 1e-3); "
                  f"W^(1,p) sup over 64 samples at 2048^2: "
                  + ", ".join(f"p={p:g}: {v:.4g} (doubling {change[p]:.1%})" for p, v in sups.items()))


def test_08_interpolation_and_saturation():
    rng = np.random.default_rng(8)
    g = TorusGrid(32)
    bad = 0
    for _ in range(1000):
        v = rng.standard_normal((32, 32)) * rng.uniform(0.1, 10.0)
        f = ScalarField(g, v - v.mean(), mean_zero=True)
        bad += not interpolation_check(f, float(rng.choice([0.25, 0.5, 1.0, 2.0]))).holds
    checkpoints = []
    sg, pg = TorusGrid(1458), TorusGrid(1024)
    snake, pinch = build_snake_mixer(sg), build_pinch_mixer(1e-3, pg)
    checkpoints += [nominal_pattern(snake, n, sg) for n in range(5)]
    checkpoints += [nominal_pattern(pinch, n, pg) for n in range(7)]
    cp_bad = sum(not interpolation_check(f, s).holds for f in checkpoints for s in (0.25, 0.5, 1.0, 2.0))
    sat = saturation_probe(snake, [1.0], 4, sg)[0]
    ratio = sat.growth.rate / sat.decay.rate
    ok = bad == 0 and cp_bad == 0 and ratio >= 0.9
    report(8, ok, f"interpolation failures: {bad}/1000 random, {cp_bad} at checkpoints; mollified "
                  f"H^1 growth {sat.growth.rate:.4f} vs H^-1 decay {sat.decay.rate:.4f} "
                  f"(ratio {ratio:.3f} >= 0.9)")


def test_09_loss_of_regularity():
    t0 = time.perf_counter()
    grid = TorusGrid(162)
    asm = assemble(default_schedule(10), build_snake_mixer(grid), grid)
    rep = loss_report(asm, (0.0, 0.25, 0.5, 1.0), (0.25, 0.5), (1.0, 2.0, 4.0))
    tail = rep.velocity_tail(2.0)
    smooth = rep.verdicts["datum smoothness"] == "decreasing"
    trend = rep.theta_increasing(1.0, 0.5) and rep.theta_last_largest(1.0, 0.5)
    wall = time.perf_counter() - t0
    ok = tail < 0.01 and smooth and trend and wall <= 600
    report(9, ok, f"velocity W^(1,2) tail {tail:.2e} (< 1%), smoothness proxies decreasing: {smooth}, "
                  f"t = 1, s = 1/2 partial sums increasing with largest last increment: {trend}, "
                  f"{wall:.0f} s")


def test_10_numerics_hygiene(tmp_path):
    vm = rotation_field((0.5, 0.5), 0.2, 0.4, 2 * np.pi)
    x1, x2 = np.array([0.62, 0.45, 0.5]), np.array([0.5, 0.66, 0.31])
    ref = trace(vm, 0.0, 1.0, x1, x2, IntegratorConfig(0.02 / 64))
    errs = [float(np.hypot(*(np.subtract(trace(vm, 0.0, 1.0, x1, x2, IntegratorConfig(0.02 / 2 ** k)), ref))).max())
            for k in range(4)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    rng = np.random.default_rng(10)
    p = rng.random((2, 64))
    det_s = FlowMap(build_snake_mixer(TorusGrid(162)).u0, 0.0, 1.0, IntegratorConfig(1 / 60)).jacobian(p[0], p[1], 1e-6)
    det_p = FlowMap(build_pinch_mixer(1e-3, TorusGrid(256)).u0, 0.0, 1.0, IntegratorConfig(1e-3)).jacobian(p[0], p[1], 1e-6)
    jac = max(float(np.abs(det_s - 1).max()), float(np.abs(det_p - 1).max()))
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert cli.main(["norms", "--grid", "162", "--nmax", "2", "--out", str(d)]) == 0
        outs.append((d / "norms.csv").read_bytes())
    same = outs[0] == outs[1]
    ok = all(12 <= r <= 20 for r in ratios) and jac <= 1e-4 and same
    report(10, ok, f"RK4 ratios {', '.join(f'{r:.2f}' for r in ratios)} (in [12, 20]), "
                   f"Jacobian |det - 1| <= {jac:.1e} (<= 1e-4), byte-identical rerun: {same}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for fn in tests:
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            pass
    sys.exit(0 if all(line.startswith("PASS") for line in RESULTS.values()) else 1)
