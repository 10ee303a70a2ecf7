"""Mixing-scale measurements: homogeneous Sobolev norms, velocity seminorms,
the geometric mixing scale, decay-rate fits and component counting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .torus import ScalarField, TorusGrid, VelocityModel, spectral_gradient, thread_cap

MEAN_TOL = 1e-8


class _NotMixed:
    """Sentinel returned when no candidate radius mixes the field."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotMixed"

    def __bool__(self):
        return False


NotMixed = _NotMixed()


def hs_norm(f: ScalarField, s: float) -> float:
    """Homogeneous H^s norm with weight (2 pi |k|)^s; the k = 0 mode is dropped."""
    if s < 0 and abs(f.mean) > MEAN_TOL:
        raise ValueError(f"H^{s} norm needs a mean-zero field (mean = {f.mean:.3e})")
    c = f.spectral().coeffs
    k1, k2 = f.grid.wavenumbers()
    ksq = (k1 ** 2 + k2 ** 2).astype(np.float64)
    ksq[0, 0] = 1.0
    w = (4.0 * np.pi ** 2 * ksq) ** s
    w[0, 0] = 0.0
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2)))


def hm1(f: ScalarField) -> float:
    """Functional mixing scale."""
    return hs_norm(f, -1.0)


def gradient_magnitude(vm: VelocityModel, t: float, grid: TorusGrid) -> np.ndarray:
    """Pointwise Frobenius norm of the spectral velocity gradient on one period cell."""
    u1, u2 = vm.sample(t, grid, cell=True)
    a, b = spectral_gradient(u1, vm.period)
    c, d = spectral_gradient(u2, vm.period)
    return np.sqrt(a * a + b * b + c * c + d * d)


def w1p_seminorm(vm: VelocityModel, t: float, p: float, grid: TorusGrid) -> float:
    """L^p norm over the torus of the velocity gradient (p = inf gives the max).

    A field with spatial period ``vm.period`` is sampled on a single period
    cell, which has the same normalised L^p norm as the whole torus.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    g = gradient_magnitude(vm, t, grid)
    if math.isinf(p):
        return float(g.max())
    return float(np.mean(g ** p) ** (1.0 / p))


def w1p_resolution_change(vm: VelocityModel, t: float, p: float, grid: TorusGrid) -> float:
    """Relative change of the seminorm when the grid is doubled (>1% means under-resolved)."""
    coarse = w1p_seminorm(vm, t, p, grid)
    fine = w1p_seminorm(vm, t, p, TorusGrid(2 * grid.n))
    return abs(fine - coarse) / max(abs(fine), 1e-300)


@dataclass(frozen=True)
class GeomScaleParams:
    kappa: float = 0.25
    radius_set: Tuple[float, ...] = ()
    center_stride: int = 1

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (0, 1/2), got {self.kappa}")
        radii = tuple(float(r) for r in self.radius_set)
        if any(not 0.0 < r <= 0.5 for r in radii):
            raise ValueError("radii must lie in (0, 1/2]")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radius_set must be strictly increasing")
        if self.center_stride < 1:
            raise ValueError("center_stride must be positive")
        object.__setattr__(self, "radius_set", radii)


def default_radii(grid: TorusGrid, per_octave: int = 8) -> Tuple[float, ...]:
    """Dyadic radii 2^{-j} refined by ``per_octave`` steps, from one cell up to 1/2."""
    radii = []
    j = per_octave
    while True:
        r = 2.0 ** (-j / per_octave)
        if r < grid.spacing:
            break
        radii.append(r)
        j += 1
    return tuple(sorted(radii))


def _torus_dist2(grid: TorusGrid) -> np.ndarray:
    x = grid.coords()
    d = np.minimum(x, 1.0 - x)
    return d[:, None] ** 2 + d[None, :] ** 2


def geometric_scale(f: ScalarField, params: GeomScaleParams):
    """Smallest radius in ``params.radius_set`` at which every tested ball holds a
    fraction of (+1)-nodes inside [kappa, 1 - kappa]; ``NotMixed`` otherwise."""
    vals = np.asarray(f.values)
    pos = np.abs(vals - 1.0) <= 1e-6
    neg = np.abs(vals + 1.0) <= 1e-6
    if not np.all(pos | neg):
        raise ValueError("geometric scale needs a field with values in {-1, +1}")
    grid = f.grid
    if grid.n % params.center_stride:
        raise ValueError("center_stride must divide n_per_axis")
    radii = params.radius_set or default_radii(grid)
    w = thread_cap()
    ind_hat = sfft.rfft2(pos.astype(np.float64), workers=w)
    d2 = _torus_dist2(grid)
    sl = slice(None, None, params.center_stride)
    kappa = params.kappa
    for r in sorted(radii):
        kernel = d2 <= r * r + 1e-12
        count = int(kernel.sum())
        # Disk is symmetric, so correlation equals convolution.
        hits = sfft.irfft2(ind_hat * sfft.rfft2(kernel.astype(np.float64), workers=w), s=vals.shape, workers=w)
        hits = np.rint(hits[sl, sl])
        lo, hi = hits.min() / count, hits.max() / count
        if lo >= kappa - 1e-12 and hi <= 1.0 - kappa + 1e-12:
            return r
    return NotMixed


@dataclass(frozen=True)
class RateFit:
    model: str
    rate: float
    amplitude: float
    residual: float
    n_samples: int = 0

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        if self.model == "exponential":
            return self.amplitude * np.exp(-self.rate * t)
        return self.amplitude * t ** (-self.rate)


def fit_decay(samples: Iterable[Tuple[float, float]], model: str = "exponential") -> RateFit:
    """Least-squares fit of log(value) against t (exponential) or log t (power-law)."""
    pts = np.asarray(list(samples), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 samples")
    t, v = pts[:, 0], pts[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if np.any(v <= 0):
        raise ValueError("sample values must be positive")
    if model == "exponential":
        x = t
    elif model == "power-law":
        if np.any(t <= 0):
            raise ValueError("power-law fit needs t > 0")
        x = np.log(t)
    else:
        raise ValueError(f"unknown model {model!r}")
    y = np.log(v)
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return RateFit(model, float(-coef[1]), float(np.exp(coef[0])),
                   float(np.sqrt(np.mean(resid ** 2))), len(t))


@dataclass(frozen=True)
class InterpolationReport:
    lhs: float
    rhs: float
    holds: bool


def interpolation_check(f: ScalarField, s: float, slack: float = 1e-10) -> InterpolationReport:
    """Check ||f||_{L2} <= ||f||_{H^s}^{1/2} ||f||_{H^-s}^{1/2}."""
    if s <= 0:
        raise ValueError("s must be positive")
    if abs(f.mean) > MEAN_TOL:
        raise ValueError("interpolation check needs a mean-zero field")
    # The residual mean allowed above is invisible to both homogeneous norms,
    # so it is dropped from the L2 side as well.
    vals = np.asarray(f.values)
    lhs = float(np.sqrt(np.mean((vals - vals.mean()) ** 2)))
    rhs = math.sqrt(hs_norm(f, s) * hs_norm(f, -s))
    return InterpolationReport(lhs, rhs, lhs <= rhs * (1.0 + slack) + 1e-300)


def count_components(mask: np.ndarray, periodic: bool = True) -> int:
    """Number of 4-connected components of a boolean grid mask, wrapping on the torus."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask)
    if n == 0 or not periodic:
        return int(n)
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in ((labels[0, :], labels[-1, :]), (labels[:, 0], labels[:, -1])):
        both = (a > 0) & (b > 0)
        for i, j in zip(a[both], b[both]):
            ri, rj = find(int(i)), find(int(j))
            if ri != rj:
                parent[ri] = rj
    return len({find(i) for i in range(1, n + 1)})
