"""Loss of regularity from packed, rescaled copies of a mixer.

Cube Q_n (side lam_n, time scale tau_n, amplitude C_n) carries
v_n(t, x) = (lam_n / tau_n) u(t / tau_n, (x - a_n) / lam_n) and
theta_n(t, x) = C_n rho(t / tau_n, (x - a_n) / lam_n), where u is the
exponential-regime (s = 1) self-similar velocity built from the snake and rho
its solution from a mollified stripe datum. Each cube is treated as a flat
torus of side lam_n, so per-cube norms follow from the unit-torus norms by
exact scaling:

    |v_n(t)|_{W^{1,p}} = tau_n^{-1} lam_n^{2/p} |u(t/tau_n)|_{W^{1,p}}
    |theta_n(t)|_{H^s} = C_n lam_n^{1-s} |rho(t/tau_n)|_{H^s}

and |rho(k + r)|_{H^s} = lam^{-ks} |rho(r)|_{H^s} because the solution at
integer times is the datum compressed by lam^k. Amplitudes span hundreds of
orders of magnitude, so every sum is accumulated in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .advect import IntegratorConfig, solve
from .mixers import MixerConstruction, mollify, nominal_pattern
from .norms import RateFit, fit_decay, hs_norm, interpolation_check, w1p_seminorm
from .selfsimilar import centered
from .torus import ScalarField, TorusGrid, spectral_gradient

MIN_CUBE_GRID = 64
MOLLIFY_CELLS = 2.0
SPIRAL_FACTOR = 1.25
ACCUMULATION_POINT = (0.5, 0.5)


@dataclass(frozen=True)
class CubeSchedule:
    centers: Tuple[Tuple[float, float], ...]
    sides: Tuple[float, ...]
    taus: Tuple[float, ...]
    log_amps: Tuple[float, ...]
    accumulation: Tuple[float, float] = ACCUMULATION_POINT

    @property
    def N(self) -> int:
        return len(self.sides)

    def amp(self, n: int) -> float:
        return math.exp(self.log_amps[n - 1])

    def min_gap_ratio(self) -> float:
        """Smallest gap between two cubes divided by the larger side (inf for one cube)."""
        worst = math.inf
        for a in range(self.N):
            for b in range(a + 1, self.N):
                (xa, ya), (xb, yb) = self.centers[a], self.centers[b]
                half = (self.sides[a] + self.sides[b]) / 2
                gap = max(abs(xa - xb), abs(ya - yb)) - half
                worst = min(worst, gap / max(self.sides[a], self.sides[b]))
        return worst

    def check(self) -> None:
        s = np.asarray(self.sides)
        if np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise ValueError("sides must be positive and strictly decreasing")
        if np.any(np.asarray(self.taus) <= 0):
            raise ValueError("time scales must be positive")
        if self.min_gap_ratio() < 0.25:
            raise ValueError(f"cubes overlap or sit closer than a quarter side "
                             f"(gap ratio {self.min_gap_ratio():.3f})")


def default_schedule(N: int) -> CubeSchedule:
    """lam_n = 4^-n, tau_n = n^-3, C_n = exp(-2 n^2).

    Centres turn a quarter turn per cube on a spiral of radius 1.25 lam_n around
    the accumulation point, so the family shrinks to that single point.
    """
    if not 1 <= N <= 12:
        raise ValueError("N must lie in 1..12")
    cx, cy = ACCUMULATION_POINT
    centers, sides, taus, logc = [], [], [], []
    for n in range(1, N + 1):
        lam = 4.0 ** -n
        r = SPIRAL_FACTOR * lam
        ang = n * math.pi / 2
        centers.append((cx + r * round(math.cos(ang)), cy + r * round(math.sin(ang))))
        sides.append(lam)
        taus.append(float(n) ** -3)
        logc.append(-2.0 * n * n)
    sch = CubeSchedule(tuple(centers), tuple(sides), tuple(taus), tuple(logc))
    sch.check()
    return sch


# ------------------------------------------------------------ unit-torus data

@dataclass(frozen=True, eq=False)
class Assembly:
    """Per-cube evaluation rules built from unit-torus measurements."""

    schedule: CubeSchedule
    mixer: MixerConstruction
    grid: TorusGrid
    datum: ScalarField
    cfg: IntegratorConfig
    velocity_sup: Dict[float, float]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def log_lam(self) -> float:
        return math.log(float(self.mixer.lam))

    def rho(self, r: float) -> ScalarField:
        """One-period solution from the mollified datum at local time r in [0, 1)."""
        key = round(r, 12)
        f = self._cache.get(key)
        if f is None:
            f = self.datum if r == 0 else solve(self.datum, self.mixer.u0, r, self.grid, self.cfg)
            f = centered(f)
            self._cache[key] = f
        return f

    def log_rho_hs(self, T: float, s: float) -> float:
        k = math.floor(T + 1e-12)
        r = max(T - k, 0.0)
        return -k * s * self.log_lam + math.log(hs_norm(self.rho(r), s))

    def log_theta_hs(self, n: int, t: float, s: float) -> float:
        sch = self.schedule
        lam = sch.sides[n - 1]
        return sch.log_amps[n - 1] + (1 - s) * math.log(lam) + self.log_rho_hs(t / sch.taus[n - 1], s)

    def log_velocity(self, n: int, p: float) -> float:
        sch = self.schedule
        return (-math.log(sch.taus[n - 1]) + 2.0 / p * math.log(sch.sides[n - 1])
                + math.log(self.velocity_sup[p]))

    def log_smoothness(self, n: int, orders: int = 4) -> float:
        """log of max_k C_n lam_n^-k |d^k datum|_inf over k = 1..orders."""
        sch = self.schedule
        best = -math.inf
        for k, dk in enumerate(datum_derivative_sups(self.datum, orders), start=1):
            best = max(best, sch.log_amps[n - 1] - k * math.log(sch.sides[n - 1]) + math.log(dk))
        return best

    def cube_field(self, n: int, t: float, cube_grid: TorusGrid) -> ScalarField:
        """theta_n(t) on the cube's own grid, in cube coordinates, for t/tau_n < 1."""
        if cube_grid.n < MIN_CUBE_GRID:
            raise ValueError(f"cube grid must have at least {MIN_CUBE_GRID} nodes per axis")
        T = t / self.schedule.taus[n - 1]
        if T >= 1:
            raise ValueError("direct cube evaluation is limited to the first period")
        vals = solve(self.datum, self.mixer.u0, T, cube_grid,
                     IntegratorConfig(self.cfg.dt, "bicubic")).values if T > 0 else self.datum.values
        return ScalarField(cube_grid, self.schedule.amp(n) * vals)


def datum_derivative_sups(f: ScalarField, orders: int) -> List[float]:
    """Max over the grid of the Euclidean size of the k-th spectral derivative tensor."""
    out = []
    layer = [np.asarray(f.values)]
    for _ in range(orders):
        nxt = []
        for arr in layer:
            d1, d2 = spectral_gradient(arr)
            nxt.extend([d1, d2])
        layer = nxt
        out.append(float(np.sqrt(sum(a * a for a in layer)).max()))
    return out


def assemble(schedule: CubeSchedule, mixer: MixerConstruction, grid: TorusGrid,
             cfg: IntegratorConfig = IntegratorConfig(1.0 / 60.0, "bicubic"),
             p_list: Sequence[float] = (1.0, 2.0, 4.0), t_samples: int = 16) -> Assembly:
    if grid.n < MIN_CUBE_GRID:
        raise ValueError(f"cube grid must have at least {MIN_CUBE_GRID} nodes per axis")
    schedule.check()
    datum = mollify(mixer.rho0(grid), MOLLIFY_CELLS)
    times = np.linspace(0.0, 1.0, t_samples)
    sups = {float(p): max(w1p_seminorm(mixer.u0, float(t), p, grid) for t in times) for p in p_list}
    return Assembly(schedule, mixer, grid, datum, cfg, sups)


# ------------------------------------------------------------------- reports

@dataclass(frozen=True)
class LossRow:
    N: int
    t: float
    s: float
    theta_hs: float
    p: float
    v_w1p: float


@dataclass
class LossReport:
    rows: List[LossRow]
    log_theta: Dict[Tuple[float, float], List[float]]   # (t, s) -> log partial sums, N = 1..
    log_theta_terms: Dict[Tuple[float, float], List[float]]   # (t, s) -> log |theta_n|^2 per cube
    log_velocity: Dict[float, List[float]]              # p -> log partial sums of |v|^p
    log_smoothness: List[float]
    verdicts: Dict[str, str]

    def theta_increasing(self, t: float, s: float) -> bool:
        v = self.log_theta[(t, s)]
        return all(b > a for a, b in zip(v, v[1:]))

    def theta_last_largest(self, t: float, s: float) -> bool:
        inc = self.log_theta_terms[(t, s)]
        return len(inc) > 1 and inc[-1] >= max(inc[:-1])

    def velocity_tail(self, p: float, last: int = 2) -> float:
        sums = self.log_velocity[p]
        if len(sums) <= last:
            return 1.0
        return 1.0 - math.exp(sums[-1 - last] - sums[-1])


def _log_partial(logs: Sequence[float], power: float) -> List[float]:
    return [float(logsumexp(power * np.asarray(logs[:k]))) / power for k in range(1, len(logs) + 1)]


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def loss_report(asm: Assembly, t_list: Sequence[float], s_list: Sequence[float],
                p_list: Sequence[float], N: Optional[int] = None) -> LossReport:
    sch = asm.schedule
    N = sch.N if N is None else N
    if N > sch.N:
        raise ValueError(f"schedule has only {sch.N} cubes")
    log_theta, log_terms = {}, {}
    for t in t_list:
        for s in s_list:
            per = [asm.log_theta_hs(n, t, s) for n in range(1, N + 1)]
            log_theta[(float(t), float(s))] = _log_partial(per, 2.0)
            log_terms[(float(t), float(s))] = [2.0 * v for v in per]
    log_vel = {}
    for p in p_list:
        per = [asm.log_velocity(n, p) for n in range(1, N + 1)]
        log_vel[float(p)] = [p * v for v in _log_partial(per, p)]
    rows = []
    for k in range(1, N + 1):
        for t in t_list:
            for s in s_list:
                for p in p_list:
                    rows.append(LossRow(k, float(t), float(s),
                                        _safe_exp(log_theta[(float(t), float(s))][k - 1]),
                                        float(p), _safe_exp(log_vel[float(p)][k - 1] / p)))
    smooth = [asm.log_smoothness(n) for n in range(1, N + 1)]
    rep = LossReport(rows, log_theta, log_terms, log_vel, smooth, {})
    for p in p_list:
        rep.verdicts[f"velocity p={p:g}"] = "bounded" if rep.velocity_tail(float(p)) < 0.01 else "unresolved"
    rep.verdicts["datum smoothness"] = ("decreasing" if all(b < a for a, b in zip(smooth, smooth[1:]))
                                        else "not decreasing")
    for (t, s), sums in log_theta.items():
        inc = log_terms[(t, s)]
        if len(inc) > 1 and rep.theta_increasing(t, s) and rep.theta_last_largest(t, s):
            verdict = "divergent trend"
        elif t == 0 and len(inc) > 1 and inc[-1] - 2.0 * sums[-1] < math.log(1e-2):
            # For t > 0 the per-cube terms eventually grow, so a small tail at
            # finite N says nothing about convergence.
            verdict = "convergent"
        else:
            verdict = "undecided"
        rep.verdicts[f"theta t={t:g} s={s:g}"] = verdict
    return rep


# ------------------------------------------------------------ saturation probe

@dataclass(frozen=True)
class SaturationResult:
    s: float
    decay: RateFit
    growth: RateFit
    interpolation_ok: bool

    @property
    def saturates(self) -> bool:
        return self.growth.rate >= 0.9 * self.decay.rate


def saturation_probe(mixer: MixerConstruction, s_list: Sequence[float], n_max: int,
                     grid: TorusGrid, cells: float = MOLLIFY_CELLS) -> List[SaturationResult]:
    """Fit exponential rates of H^-s decay and H^s growth over exact checkpoints.

    Checkpoint n sits at time n (exponential regime). Negative orders use the
    two-valued patterns. Positive orders use a smooth datum carried by the
    same flow: the initial pattern mollified at ``cells`` spacings of the
    coarsest checkpoint grid, then rescaled n times, which is exactly where
    the flow takes it.
    """
    if n_max + 1 < 4:
        raise ValueError("need at least 4 checkpoints")
    allowed = (0.25, 0.5, 1.0, 2.0)
    out = []
    pats = [nominal_pattern(mixer, n, grid) for n in range(n_max + 1)]
    smooth = [mollify(mixer.rho0(grid), cells * mixer.inv_lambda ** n_max)]
    for _ in range(n_max):
        smooth.append(mixer.rescaled(smooth[-1]))
    smooth = [centered(f) for f in smooth]
    for s in s_list:
        if s not in allowed:
            raise ValueError(f"s must be one of {allowed}")
        dec = fit_decay([(n, hs_norm(f, -s)) for n, f in enumerate(pats)])
        gro = fit_decay([(n, hs_norm(f, s)) for n, f in enumerate(smooth)])
        gro = RateFit(gro.model, -gro.rate, gro.amplitude, gro.residual, gro.n_samples)
        ok = all(interpolation_check(f, s).holds for f in pats + smooth)
        out.append(SaturationResult(float(s), dec, gro, ok))
    return out
