"""Grids, periodic fields and velocity models on the unit torus [0, 1)^2.

Grid values are sampled at the nodes ``x_i = i / n``; axis 0 of every array
is the x1 direction and axis 1 is x2.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import fft as sfft

MEAN_ZERO_TOL = 1e-12
HERMITIAN_TOL = 1e-10
SNAPSHOT_MAGIC = b"TMIX01"

FLAG_MEAN_ZERO = 0x01
FLAG_TWO_VALUED = 0x02


def thread_cap() -> int:
    """Worker count for FFTs, from TMIX_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("TMIX_THREADS", "1")))
    except ValueError:
        return 1


def _is_smooth_235(n: int) -> bool:
    for p in (2, 3):
        while n % p == 0:
            n //= p
    return n == 1


@dataclass(frozen=True)
class TorusGrid:
    n_per_axis: int

    def __post_init__(self):
        n = self.n_per_axis
        if not isinstance(n, (int, np.integer)) or n < 4:
            raise ValueError(f"n_per_axis must be an integer >= 4, got {n!r}")
        if not _is_smooth_235(int(n)):
            raise ValueError(f"n_per_axis must be a product of 2s and 3s, got {n}")

    @property
    def n(self) -> int:
        return int(self.n_per_axis)

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    def coords(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self.coords()
        return np.meshgrid(x, x, indexing="ij")

    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Integer frequency arrays (k1, k2) broadcastable against fft2 output."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return k[:, None], k[None, :]


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray
    mean_zero: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        n = self.grid.n
        if vals.shape != (n, n):
            raise ValueError(f"values must have shape {(n, n)}, got {vals.shape}")
        bad = ~np.isfinite(vals)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise ValueError(f"non-finite value at index {idx}")
        if self.mean_zero and abs(vals.mean()) > MEAN_ZERO_TOL:
            raise ValueError(f"field flagged mean_zero has mean {vals.mean():.3e}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def content_hash(self) -> str:
        return hashlib.sha1(self.values.tobytes()).hexdigest()

    def is_two_valued(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(np.abs(self.values) - 1.0) <= tol))

    def spectral(self) -> "SpectralField":
        key = self.content_hash()
        sf = self._cache.get(key)
        if sf is None:
            sf = to_spectral(self)
            self._cache.clear()
            self._cache[key] = sf
        return sf


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients normalised so that sum |c_k|^2 = mean(f^2)."""

    grid: TorusGrid
    coeffs: np.ndarray

    def coefficient(self, k1: int, k2: int) -> complex:
        n = self.grid.n
        return complex(self.coeffs[k1 % n, k2 % n])


def to_spectral(f: ScalarField) -> SpectralField:
    vals = np.asarray(f.values, dtype=np.float64)
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"non-finite value at index {idx}")
    n = f.grid.n
    return SpectralField(f.grid, sfft.fft2(vals, workers=thread_cap()) / (n * n))


def hermitian_defect(coeffs: np.ndarray) -> float:
    """Relative violation of c(-k) = conj(c(k))."""
    flipped = np.roll(coeffs[::-1, ::-1], 1, axis=(0, 1))
    scale = max(float(np.abs(coeffs).max()), 1e-300)
    return float(np.abs(flipped - np.conj(coeffs)).max()) / scale


def from_spectral(sf: SpectralField, mean_zero: bool = False) -> ScalarField:
    if np.any(sf.coeffs != 0):
        defect = hermitian_defect(sf.coeffs)
        if defect > HERMITIAN_TOL:
            raise ValueError(f"coefficients violate Hermitian symmetry (defect {defect:.2e})")
    n = sf.grid.n
    vals = sfft.ifft2(sf.coeffs * (n * n), workers=thread_cap()).real
    return ScalarField(sf.grid, vals, mean_zero=mean_zero)


def spectral_gradient(values: np.ndarray, length: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Spectral partial derivatives of a periodic sample array on [0, length)^2."""
    n = values.shape[0]
    k = np.fft.fftfreq(n, d=1.0 / n)
    kr = np.fft.rfftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        # The Nyquist mode has no well-defined real derivative.
        k[n // 2] = 0.0
        kr[-1] = 0.0
    scale = 2j * np.pi / length
    w = thread_cap()
    vh = sfft.rfft2(values, workers=w)
    d1 = sfft.irfft2(scale * k[:, None] * vh, s=values.shape, workers=w)
    d2 = sfft.irfft2(scale * kr[None, :] * vh, s=values.shape, workers=w)
    return d1, d2


def lambda_inverse(lam: Union[Fraction, float, int]) -> int:
    q = lam if isinstance(lam, Fraction) else Fraction(lam).limit_denominator(10**6)
    if q <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    inv = 1 / q
    if inv.denominator != 1:
        raise ValueError(f"1/lambda must be a positive integer, got lambda={lam}")
    return int(inv)


def rescale_pattern(f: ScalarField, lam: Union[Fraction, float]) -> ScalarField:
    """Return x -> f(x / lam mod 1), exact by index arithmetic on the node grid."""
    m = lambda_inverse(lam)
    n = f.grid.n
    if n % m:
        raise ValueError(f"grid size {n} not divisible by 1/lambda = {m}")
    idx = (m * np.arange(n)) % n
    vals = f.values[np.ix_(idx, idx)]
    return ScalarField(f.grid, vals, mean_zero=f.mean_zero)


VelocityFn = Callable[[float, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class VelocityModel:
    """Time-dependent divergence-free field ``fn(t, x1, x2) -> (u1, u2)``.

    ``period`` is the spatial period (the field is ``period``-periodic in both
    axes, and ``1/period`` is an integer); norms of such fields may be
    evaluated on a single period cell.
    """

    fn: VelocityFn
    t_start: float = 0.0
    t_end: Optional[float] = 1.0
    period: float = 1.0
    tol_div: float = 1e-8
    name: str = "velocity"
    smoothness: str = "smooth"

    def __call__(self, t: float, x1, x2):
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        u1, u2 = self.fn(t, x1, x2)
        return np.broadcast_to(u1, x1.shape), np.broadcast_to(u2, x1.shape)

    def in_domain(self, t: float, slack: float = 1e-12) -> bool:
        if t < self.t_start - slack:
            return False
        return self.t_end is None or t <= self.t_end + slack

    def sample(self, t: float, grid: TorusGrid, cell: bool = False):
        """Velocity on the grid nodes; with ``cell`` the nodes span one period cell."""
        x1, x2 = grid.mesh()
        if cell:
            x1, x2 = x1 * self.period, x2 * self.period
        u1, u2 = self(t, x1, x2)
        return np.array(u1), np.array(u2)


def zero_velocity(t_start=0.0, t_end=1.0) -> VelocityModel:
    return VelocityModel(lambda t, x1, x2: (np.zeros_like(x1), np.zeros_like(x2)),
                         t_start=t_start, t_end=t_end, name="zero")


def divergence_norm(vm: VelocityModel, t: float, grid: TorusGrid) -> float:
    """L^2 norm of the spectral divergence of a grid sampling (over one period cell)."""
    u1, u2 = vm.sample(t, grid, cell=True)
    d11, _ = spectral_gradient(u1, vm.period)
    _, d22 = spectral_gradient(u2, vm.period)
    return float(np.sqrt(np.mean((d11 + d22) ** 2)))


def check_divergence(vm: VelocityModel, grid: TorusGrid, times=None, tol=None) -> float:
    tol = vm.tol_div if tol is None else tol
    if times is None:
        t1 = vm.t_start + 1.0 if vm.t_end is None else vm.t_end
        times = np.linspace(vm.t_start, t1, 5)
    worst = max(divergence_norm(vm, float(t), grid) for t in times)
    if worst > tol:
        raise ValueError(f"{vm.name}: divergence {worst:.3e} exceeds tolerance {tol:.1e}")
    return worst


def save_field(path: Union[str, Path], f: ScalarField) -> None:
    flags = 0
    if f.mean_zero:
        flags |= FLAG_MEAN_ZERO
    if f.is_two_valued(0.0):
        flags |= FLAG_TWO_VALUED
    header = SNAPSHOT_MAGIC + struct.pack("<IB", f.grid.n, flags)
    body = np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(header + body)


def load_field(path: Union[str, Path]) -> ScalarField:
    raw = Path(path).read_bytes()
    if raw[:6] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:6]!r}")
    n, flags = struct.unpack("<IB", raw[6:11])
    body = raw[11:]
    if len(body) != 8 * n * n:
        raise ValueError(f"{path}: expected {8 * n * n} payload bytes, found {len(body)}")
    vals = np.frombuffer(body, dtype="<f8").reshape(n, n)
    return ScalarField(TorusGrid(n), vals, mean_zero=bool(flags & FLAG_MEAN_ZERO))
