"""Self-similar patching of a unit-time mixer.

Period n runs on [T_n, T_{n+1}) with T_n = sum_{i<n} tau^i and velocity
u_n(t, x) = (lam^n / tau^n) u_0(t / tau^n, x / lam^n). Choosing
tau = lam^(1 - s) keeps the homogeneous W^{s,p} norm of u_n equal to that of
u_0, and the decay regime follows from whether tau is below, equal to or
above one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np

from .advect import IntegratorConfig, solve
from .mixers import MixerConstruction, mixer_power, nominal_pattern
from .norms import hm1
from .torus import ScalarField, TorusGrid, VelocityModel, lambda_inverse

FINITE_TIME = "finite-time"
EXPONENTIAL = "exponential"
POLYNOMIAL = "polynomial"

M_SAMPLES = 33


def centered(f: ScalarField) -> ScalarField:
    """Remove the grid mean; advected two-valued fields carry a small sampling drift."""
    return ScalarField(f.grid, f.values - f.values.mean(), mean_zero=True)


@dataclass(frozen=True)
class MixSchedule:
    s: float
    p: float
    lam: Fraction
    M: float
    power: int = 1

    @property
    def tau(self) -> float:
        return float(self.lam) ** (1.0 - self.s)

    @property
    def regime(self) -> str:
        if self.s < 1:
            return FINITE_TIME
        if self.s == 1:
            return EXPONENTIAL
        return POLYNOMIAL

    def T(self, n: int) -> float:
        tau = self.tau
        if self.s == 1 or n == 0:
            return float(n)
        return (tau ** n - 1.0) / (tau - 1.0)

    @property
    def T_inf(self) -> float:
        return 1.0 / (1.0 - self.tau) if self.s < 1 else math.inf

    def patch(self, t: float) -> Tuple[int, float]:
        """(n, t - T_n) with T_n <= t < T_{n+1}."""
        if t < 0:
            raise ValueError("t must be nonnegative")
        if t >= self.T_inf:
            raise ValueError(f"t = {t} is past T_inf = {self.T_inf}")
        tau = self.tau
        if self.s == 1:
            n = int(math.floor(t))
        else:
            # Invert T_n = (tau^n - 1)/(tau - 1) and fix rounding at the edges.
            n = int(math.floor(math.log1p(t * (tau - 1.0)) / math.log(tau)))
            n = max(n, 0)
        while self.T(n + 1) <= t:
            n += 1
        while n > 0 and self.T(n) > t:
            n -= 1
        return n, t - self.T(n)


def _mixer_power_for(lam: Fraction, mixer: MixerConstruction) -> int:
    base = mixer.inv_lambda
    target = lambda_inverse(lam)
    k, m = 0, 1
    while m < target:
        m *= base
        k += 1
    if m != target:
        raise ValueError(f"lambda = {lam} is not a power of the mixer's lambda = {mixer.lam}")
    return k


def as_fraction(lam: Union[Fraction, float, int, str]) -> Fraction:
    q = Fraction(lam).limit_denominator(10 ** 6) if not isinstance(lam, Fraction) else lam
    if not 0 < q < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    lambda_inverse(q)
    return q


def sample_M(mixer: MixerConstruction, grid: TorusGrid, cfg: IntegratorConfig,
             samples: int = M_SAMPLES) -> float:
    """sup over equispaced t in [0, 1] of the H^-1 norm of the one-period solution."""
    best = 0.0
    for t in np.linspace(0.0, 1.0, samples):
        f = solve(mixer.datum, mixer.u0, float(t), grid, cfg) if t > 0 else mixer.rho0(grid)
        best = max(best, hm1(centered(f)))
    return best


def make_schedule(s: float, p: float, lam, mixer: MixerConstruction,
                  grid: Optional[TorusGrid] = None, cfg: IntegratorConfig = IntegratorConfig(),
                  M: Optional[float] = None) -> MixSchedule:
    """Schedule for the given s, p and lam.

    ``lam`` may be the mixer's own lambda or a power of it, in which case the
    unit-time block runs that many mixer periods. ``M`` is sampled from the
    advected solution on ``grid`` unless given.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    if not (p >= 1):
        raise ValueError("p must be >= 1")
    q = as_fraction(lam)
    k = _mixer_power_for(q, mixer)
    if M is None:
        if grid is None:
            raise ValueError("grid required to sample M")
        M = sample_M(mixer_power(mixer, k), grid, cfg)
    return MixSchedule(float(s), float(p), q, float(M), k)


def rescaled_velocity(mixer: MixerConstruction, schedule: MixSchedule, n: int) -> VelocityModel:
    if n < 0:
        raise ValueError("n must be nonnegative")
    block = mixer_power(mixer, schedule.power)
    if n == 0:
        return block.u0
    lam_n = float(schedule.lam) ** n
    tau_n = schedule.tau ** n
    u0 = block.u0
    factor = lam_n / tau_n

    def fn(t, x1, x2):
        a, b = u0(t / tau_n, np.mod(x1 / lam_n, 1.0), np.mod(x2 / lam_n, 1.0))
        return factor * a, factor * b

    return VelocityModel(fn, 0.0, tau_n, period=lam_n, tol_div=u0.tol_div,
                         name=f"{u0.name}_{n}", smoothness=u0.smoothness)


@dataclass(frozen=True)
class Evaluation:
    field: ScalarField
    n: int
    perfectly_mixed: bool = False


@dataclass(frozen=True)
class CompositeSolution:
    schedule: MixSchedule
    mixer: MixerConstruction

    @property
    def block(self) -> MixerConstruction:
        return mixer_power(self.mixer, self.schedule.power)

    def velocity(self, t: float, x1, x2):
        if t >= self.schedule.T_inf:
            z = np.zeros_like(np.asarray(x1, float))
            return z, z.copy()
        n, tl = self.schedule.patch(t)
        return rescaled_velocity(self.mixer, self.schedule, n)(tl, x1, x2)

    def checkpoint(self, n: int, grid: TorusGrid) -> ScalarField:
        return nominal_pattern(self.block, n, grid)

    def _advect(self, n: int, tl: float, grid: TorusGrid, cfg: IntegratorConfig) -> ScalarField:
        # Same number of steps per period as cfg prescribes for a unit-time period.
        sch = self.schedule
        lam_n = float(sch.lam) ** n
        datum = self.block.datum

        def datum_n(x1, x2):
            return datum(np.mod(x1 / lam_n, 1.0), np.mod(x2 / lam_n, 1.0))

        local = IntegratorConfig(cfg.dt * sch.tau ** n, cfg.sampling, cfg.chunk)
        return solve(datum_n, rescaled_velocity(self.mixer, sch, n), tl, grid, local)

    def evaluate(self, t: float, grid: TorusGrid, cfg: IntegratorConfig = IntegratorConfig()) -> Evaluation:
        """Solution at time t.

        Checkpoints are exact patterns. Inside period n the solution is advected
        from the exact pattern at T_n.
        """
        sch = self.schedule
        if t >= sch.T_inf:
            return Evaluation(ScalarField(grid, np.zeros((grid.n, grid.n)), mean_zero=True), -1, True)
        n, tl = sch.patch(t)
        if tl == 0.0:
            return Evaluation(self.checkpoint(n, grid), n)
        return Evaluation(self._advect(n, tl, grid, cfg), n)

    def advected_checkpoint(self, n: int, grid: TorusGrid,
                            cfg: IntegratorConfig = IntegratorConfig()) -> ScalarField:
        """Solution at T_(n+1) advected through period n from the exact pattern at T_n."""
        sch = self.schedule
        if sch.T(n + 1) >= sch.T_inf:
            raise ValueError(f"period {n} ends past T_inf")
        return self._advect(n, sch.T(n + 1) - sch.T(n), grid, cfg)


def composite(mixer: MixerConstruction, schedule: MixSchedule) -> CompositeSolution:
    return CompositeSolution(schedule, mixer)


def envelope(schedule: MixSchedule, t: float) -> float:
    """Upper envelope M lam^n on [T_n, T_{n+1})."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t >= schedule.T_inf:
        raise ValueError(f"t = {t} is past T_inf = {schedule.T_inf}")
    n, _ = schedule.patch(t)
    return schedule.M * float(schedule.lam) ** n


def envelope_exponential(M: float, lam: float, t: float) -> float:
    return M * lam ** (t - 1.0)


def envelope_polynomial(M: float, lam: float, s: float, t: float) -> float:
    if s <= 1:
        raise ValueError("polynomial envelope needs s > 1")
    return M * (1.0 + t * (lam ** (1.0 - s) - 1.0)) ** (-1.0 / (s - 1.0)) / lam
