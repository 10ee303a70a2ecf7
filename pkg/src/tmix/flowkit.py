"""Constructive divergence-free velocity fields: stream functions, area-preserving
isotopies, rotations, bends, shears and the regularised square-root pinch."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .torus import TorusGrid, VelocityModel

TOL_AREA = 1e-8
TOL_DIV_NUMERIC = 1e-3


# ---------------------------------------------------------------- smooth steps

def _psi_exp(z):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)


def smooth_step(z):
    """C^inf step: 0 for z <= 0, 1 for z >= 1, built from exp(-1/z)."""
    z = np.clip(np.asarray(z, dtype=np.float64), 0.0, 1.0)
    a, b = _psi_exp(z), _psi_exp(1.0 - z)
    return a / (a + b)


def smooth_step_deriv(z):
    z = np.asarray(z, dtype=np.float64)
    inside = (z > 0) & (z < 1)
    zi = np.where(inside, z, 0.5)
    a, b = _psi_exp(zi), _psi_exp(1.0 - zi)
    da = a / zi ** 2
    db = -b / (1.0 - zi) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


def time_ramp(tau):
    """Cubic ramp on [0, 1] whose derivative vanishes at both ends."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau * tau * (3.0 - 2.0 * tau)


def time_ramp_rate(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return 6.0 * tau * (1.0 - tau)


def plateau(r, inner, outer):
    """1 for |r| <= inner, 0 for |r| >= outer, smooth and monotone between."""
    return 1.0 - smooth_step((np.abs(r) - inner) / (outer - inner))


def plateau_deriv(r, inner, outer):
    return -np.sign(r) * smooth_step_deriv((np.abs(r) - inner) / (outer - inner)) / (outer - inner)


def wrap(d):
    """Signed torus displacement in [-1/2, 1/2)."""
    return d - np.floor(d + 0.5)


# ------------------------------------------------------------ stream functions

@dataclass(frozen=True)
class StreamFunction:
    """psi(t, x1, x2); ``grad`` returns (d1 psi, d2 psi) analytically when given."""

    psi: Optional[Callable] = None
    grad: Optional[Callable] = None
    smoothness: str = "smooth"
    t_start: float = 0.0
    t_end: Optional[float] = 1.0


_FD_STEP = 1e-3


def _fd_grad(psi, t, x1, x2, h=_FD_STEP):
    # Fourth-order central differences.
    def d(e1, e2):
        f = lambda s: psi(t, x1 + s * e1, x2 + s * e2)
        return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h)
    return d(1.0, 0.0), d(0.0, 1.0)


def velocity_from_stream(sf: StreamFunction, check_grid: Optional[TorusGrid] = None) -> VelocityModel:
    """u = (d2 psi, -d1 psi)."""
    if sf.grad is None and sf.psi is None:
        raise ValueError("stream function needs psi or grad")
    if sf.psi is not None and sf.grad is None:
        rng = np.random.default_rng(0)
        pts = rng.random((2, 64))
        t = sf.t_start
        base = sf.psi(t, pts[0], pts[1])
        for e in ((1.0, 0.0), (0.0, 1.0)):
            shifted = sf.psi(t, pts[0] + e[0], pts[1] + e[1])
            if np.max(np.abs(shifted - base)) > 1e-9 * max(1.0, np.max(np.abs(base))):
                raise ValueError("stream function is not periodic on the unit torus")

    def fn(t, x1, x2):
        if sf.grad is not None:
            g1, g2 = sf.grad(t, x1, x2)
        else:
            g1, g2 = _fd_grad(sf.psi, t, x1, x2)
        return g2, -g1

    vm = VelocityModel(fn, sf.t_start, sf.t_end, tol_div=1e-8, name="stream", smoothness=sf.smoothness)
    if check_grid is not None:
        from .torus import check_divergence
        check_divergence(vm, check_grid)
    return vm


# ------------------------------------------------------------------ isotopies

@dataclass(frozen=True)
class IsotopySpec:
    """Area-preserving family Phi_t, t in [0, 1], with Phi_0 = id.

    ``forward(t, x1, x2)`` and ``inverse(t, x1, x2)`` return point pairs,
    ``jacobian(t, x1, x2)`` the determinant of D Phi_t.
    """

    forward: Callable
    inverse: Callable
    jacobian: Optional[Callable] = None
    periodic: bool = True
    name: str = "isotopy"


def check_isotopy(iso: IsotopySpec, x1, x2, times=(0.0, 0.25, 0.5, 0.75, 1.0)):
    """Return the worst (identity, area, inverse) defects over the sample points."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    y1, y2 = iso.forward(0.0, x1, x2)
    ident = float(np.max(np.hypot(y1 - x1, y2 - x2)))
    area = inv = 0.0
    for t in times:
        if iso.jacobian is not None:
            area = max(area, float(np.max(np.abs(iso.jacobian(t, x1, x2) - 1.0))))
        y1, y2 = iso.forward(t, x1, x2)
        z1, z2 = iso.inverse(t, y1, y2)
        d1, d2 = z1 - x1, z2 - x2
        if iso.periodic:
            d1, d2 = wrap(d1), wrap(d2)
        inv = max(inv, float(np.max(np.hypot(d1, d2))))
    return ident, area, inv


def velocity_from_isotopy(iso: IsotopySpec, h_t: float = 1e-4, check: bool = True,
                          tol_div: float = TOL_DIV_NUMERIC) -> VelocityModel:
    """u(t, x) = d/dt Phi_t evaluated at Phi_t^{-1}(x), by centred differences in t."""

    def fn(t, x1, x2):
        y1, y2 = iso.inverse(t, x1, x2)
        lo, hi = t - h_t, t + h_t
        if lo < 0.0:
            lo, hi = 0.0, 2.0 * h_t
        elif hi > 1.0:
            lo, hi = 1.0 - 2.0 * h_t, 1.0
        a1, a2 = iso.forward(lo, y1, y2)
        b1, b2 = iso.forward(hi, y1, y2)
        d1, d2 = b1 - a1, b2 - a2
        if iso.periodic:
            d1, d2 = wrap(d1), wrap(d2)
        return d1 / (hi - lo), d2 / (hi - lo)

    vm = VelocityModel(fn, 0.0, 1.0, tol_div=tol_div, name=f"isotopy:{iso.name}")
    if check:
        div = pointwise_divergence(vm, (0.1, 0.5, 0.9))
        if div > tol_div:
            raise ValueError(f"isotopy {iso.name} is not area preserving: divergence {div:.3e}")
    return vm


def pointwise_divergence(vm: VelocityModel, times, n_points: int = 256, h: float = 1e-3,
                         box=((0.0, 1.0), (0.0, 1.0)), seed: int = 0) -> float:
    """RMS divergence by central differences at random points of ``box``."""
    rng = np.random.default_rng(seed)
    (a1, b1), (a2, b2) = box
    x1 = a1 + (b1 - a1) * rng.random(n_points)
    x2 = a2 + (b2 - a2) * rng.random(n_points)
    worst = 0.0
    for t in times:
        u1p, _ = vm(t, x1 + h, x2)
        u1m, _ = vm(t, x1 - h, x2)
        _, u2p = vm(t, x1, x2 + h)
        _, u2m = vm(t, x1, x2 - h)
        div = (u1p - u1m + u2p - u2m) / (2 * h)
        worst = max(worst, float(np.sqrt(np.mean(div ** 2))))
    return worst


# ------------------------------------------------------------------ rotations

def _check_rotation_params(radius_core, radius_outer):
    if not 0.0 < radius_core < radius_outer <= 0.5:
        raise ValueError("need 0 < radius_core < radius_outer <= 1/2")


def rotation_field(center, radius_core, radius_outer, angle_rate) -> VelocityModel:
    """Rigid rotation at ``angle_rate`` inside ``radius_core``, zero beyond
    ``radius_outer``; u = angle_rate * m(r) * (-xi2, xi1) is exactly solenoidal."""
    _check_rotation_params(radius_core, radius_outer)
    c1, c2 = center

    def fn(t, x1, x2):
        xi1, xi2 = wrap(x1 - c1), wrap(x2 - c2)
        m = angle_rate * plateau(np.hypot(xi1, xi2), radius_core, radius_outer)
        return -m * xi2, m * xi1

    return VelocityModel(fn, 0.0, None, tol_div=1e-8, name="rotation")


def rotation_stream(center, radius_core, radius_outer, angle_rate) -> StreamFunction:
    _check_rotation_params(radius_core, radius_outer)
    c1, c2 = center

    def grad(t, x1, x2):
        xi1, xi2 = wrap(x1 - c1), wrap(x2 - c2)
        m = angle_rate * plateau(np.hypot(xi1, xi2), radius_core, radius_outer)
        return -m * xi1, -m * xi2

    return StreamFunction(grad=grad, t_start=0.0, t_end=None)


def rotation_isotopy(center, radius_core, radius_outer, angle_rate) -> IsotopySpec:
    """Twist map: each circle about ``center`` turns by angle_rate * t * m(r)."""
    _check_rotation_params(radius_core, radius_outer)
    c1, c2 = center

    def turn(sign):
        def f(t, x1, x2):
            xi1, xi2 = wrap(x1 - c1), wrap(x2 - c2)
            ang = sign * angle_rate * t * plateau(np.hypot(xi1, xi2), radius_core, radius_outer)
            c, s = np.cos(ang), np.sin(ang)
            return c1 + c * xi1 - s * xi2, c2 + s * xi1 + c * xi2
        return f

    # Radial twists have unit Jacobian identically.
    return IsotopySpec(turn(1.0), turn(-1.0), lambda t, x1, x2: np.ones_like(np.asarray(x1, float)),
                       name="rotation")


# ---------------------------------------------------------------------- bends

@dataclass(frozen=True)
class BendMap:
    """Area-preserving bend of the strip [0, L] x [0, thickness] onto an annular
    sector of inner radius ``inner_radius`` and opening ``angle_span``.

    Local coordinates: the strip's lower edge becomes the inner arc, the
    bending centre sits at (0, -inner_radius).  ``isotopy`` interpolates the
    curvature linearly from 0 (identity) to 1 / inner_radius.
    """

    inner_radius: float
    angle_span: float
    thickness: float

    @property
    def length(self) -> float:
        return self.inner_radius * self.angle_span

    def _k(self, t):
        return t / self.inner_radius

    def forward_at(self, t, xi, eta):
        xi = np.asarray(xi, float)
        eta = np.asarray(eta, float)
        k = self._k(t)
        if k == 0.0:
            return xi.copy(), eta.copy()
        s = np.sqrt(1.0 + 2.0 * eta * k)
        th = k * xi
        x = s * np.sin(th) / k
        y = 2.0 * eta * np.cos(th) / (s + 1.0) - 2.0 * np.sin(th / 2) ** 2 / k
        return x, y

    def inverse_at(self, t, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        k = self._k(t)
        if k == 0.0:
            return x.copy(), y.copy()
        th = np.arctan2(k * x, 1.0 + k * y)
        return th / k, y + 0.5 * k * (x * x + y * y)

    def jacobian_at(self, t, xi, eta):
        xi = np.asarray(xi, float)
        eta = np.asarray(eta, float)
        k = self._k(t)
        if k == 0.0:
            return np.ones_like(xi)
        s = np.sqrt(1.0 + 2.0 * eta * k)
        th = k * xi
        x_xi, x_eta = s * np.cos(th), np.sin(th) / s
        y_xi, y_eta = -s * np.sin(th), np.cos(th) / s
        return x_xi * y_eta - x_eta * y_xi

    def sector(self):
        """(r_inner, r_outer, angle) of the image of the full strip."""
        r_out = math.sqrt(self.inner_radius ** 2 + 2.0 * self.thickness * self.inner_radius)
        return self.inner_radius, r_out, self.angle_span

    def isotopy(self) -> IsotopySpec:
        return IsotopySpec(self.forward_at, self.inverse_at, self.jacobian_at,
                           periodic=False, name="bend")


def bend_map(inner_radius: float, angle_span: float, thickness: float) -> BendMap:
    if inner_radius <= 0 or thickness <= 0:
        raise ValueError("inner_radius and thickness must be positive")
    if not 0.0 < angle_span <= math.pi:
        raise ValueError("angle_span must lie in (0, pi]")
    return BendMap(inner_radius, angle_span, thickness)


def squeeze_isotopy(factor: float = 3.0) -> IsotopySpec:
    """Linear squeeze diag(factor^-t, factor^t) in cell-local coordinates."""
    lf = math.log(factor)
    fwd = lambda t, x1, x2: (np.exp(-lf * t) * np.asarray(x1, float), np.exp(lf * t) * np.asarray(x2, float))
    inv = lambda t, x1, x2: (np.exp(lf * t) * np.asarray(x1, float), np.exp(-lf * t) * np.asarray(x2, float))
    jac = lambda t, x1, x2: np.ones_like(np.asarray(x1, float))
    return IsotopySpec(fwd, inv, jac, periodic=False, name="squeeze")


# --------------------------------------------------------------------- shears

def sawtooth(y, width):
    """Smoothed fractional part: equals y mod 1 outside a layer of ``width``
    around the integers, where it drops smoothly from 1 to 0."""
    y = np.asarray(y, float)
    z = y - np.round(y)
    return z + 1.0 - smooth_step(z / width + 0.5)


def sawtooth_deriv(y, width):
    y = np.asarray(y, float)
    z = y - np.round(y)
    return 1.0 - smooth_step_deriv(z / width + 0.5) / width


@dataclass(frozen=True)
class ShearStage:
    """One shear x_axis += amount * S(x_other) spread over [t0, t1].

    S(y) = sawtooth(y - offset) + offset agrees with y mod 1 up to an integer,
    with its smoothed jump moved to y = offset.
    """

    axis: int
    amount: float
    t0: float
    t1: float
    width: float
    offset: float = 0.0

    def profile(self, other):
        return sawtooth(np.asarray(other, float) - self.offset, self.width) + self.offset

    def displacement(self, t, other):
        tau = (t - self.t0) / (self.t1 - self.t0)
        return self.amount * time_ramp(tau) * self.profile(other)

    def speed(self, t, other):
        if not self.t0 <= t <= self.t1:
            return np.zeros_like(np.asarray(other, float))
        tau = (t - self.t0) / (self.t1 - self.t0)
        rate = time_ramp_rate(tau) / (self.t1 - self.t0)
        return self.amount * rate * self.profile(other)

    def apply(self, x1, x2, t=None, inverse=False):
        """Map points by the stage's flow up to time t (default: full stage)."""
        t = self.t1 if t is None else t
        sgn = -1.0 if inverse else 1.0
        if self.axis == 0:
            return x1 + sgn * self.displacement(t, x2), x2
        return x1, x2 + sgn * self.displacement(t, x1)


def shear_field(stages: Sequence[ShearStage], t_start=0.0, t_end=1.0, name="shear") -> VelocityModel:
    """Velocity of sequential shear stages; each is a stream-function flow
    u = (f(x2), 0) or (0, f(x1)) and therefore exactly solenoidal."""

    def fn(t, x1, x2):
        u1 = np.zeros_like(x1)
        u2 = np.zeros_like(x2)
        for st in stages:
            if st.t0 <= t <= st.t1:
                if st.axis == 0:
                    u1 = u1 + st.speed(t, x2)
                else:
                    u2 = u2 + st.speed(t, x1)
        return u1, u2

    return VelocityModel(fn, t_start, t_end, tol_div=1e-8, name=name, smoothness="lipschitz")


def shear_flow_map(stages: Sequence[ShearStage], t, x1, x2, inverse=False):
    """Exact flow map of sequential shears from 0 to t (or its inverse)."""
    active = [st for st in stages if st.t0 < t]
    if inverse:
        for st in reversed(active):
            x1, x2 = st.apply(x1, x2, t=min(t, st.t1), inverse=True)
    else:
        for st in active:
            x1, x2 = st.apply(x1, x2, t=min(t, st.t1))
    return x1, x2


# ---------------------------------------------------------------------- pinch

def root_profile(xi, delta):
    """xi (xi^2 + delta^2)^(-1/4): ~ sign(xi) sqrt|xi| away from 0, linear near 0."""
    return xi * (xi * xi + delta * delta) ** -0.25


def root_profile_deriv(xi, delta):
    q = xi * xi + delta * delta
    return (0.5 * xi * xi + delta * delta) * q ** -1.25


@dataclass(frozen=True)
class PinchGeometry:
    center: Tuple[float, float]
    half_width: float
    half_height: float
    delta: float
    rate: float
    vertical: bool = False
    margin: float = 1.25


def pinch_velocity(g: PinchGeometry, x1, x2, scale=1.0):
    """Velocity of psi = -rate * H(xi_c) * B(xi_s), with H ~ sqrt compression
    along the compression axis xi_c and B(xi_s) = xi_s * cutoff.

    The compression axis is x1 (horizontal diameter shrinks) unless
    ``vertical``, in which case roles of the axes are swapped.
    """
    xi1, xi2 = wrap(x1 - g.center[0]), wrap(x2 - g.center[1])
    xc, xs = (xi2, xi1) if g.vertical else (xi1, xi2)
    a1, a2 = g.half_width, g.half_width * g.margin
    b1, b2 = g.half_height, g.half_height * g.margin
    A = plateau(xc, a1, a2)
    dA = plateau_deriv(xc, a1, a2)
    h = root_profile(xc, g.delta)
    H = h * A
    dH = root_profile_deriv(xc, g.delta) * A + h * dA
    chi = plateau(xs, b1, b2)
    B = xs * chi
    dB = chi + xs * plateau_deriv(xs, b1, b2)
    uc = -g.rate * scale * H * dB
    us = g.rate * scale * dH * B
    return (us, uc) if g.vertical else (uc, us)


def pinch_field(neck_center, neck_width, delta, rate, half_height=None, vertical=False,
                margin=1.25) -> VelocityModel:
    """Regularised square-root pinch, supported in the neck box.

    Along the compression diameter the speed is rate * xi (xi^2 + delta^2)^(-1/4);
    the transverse decompression is the exact solenoidal completion.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if neck_width <= 0:
        raise ValueError("neck_width must be positive")
    half_height = neck_width if half_height is None else half_height
    if margin <= 1.0 or neck_width * margin >= 0.5 or half_height * margin >= 0.5:
        raise ValueError("neck box must fit in the unit cell")
    geom = PinchGeometry(tuple(neck_center), neck_width, half_height, delta, rate, vertical, margin)
    smooth = "sobolev" if delta == 0 else "smooth"
    return VelocityModel(lambda t, x1, x2: pinch_velocity(geom, x1, x2), 0.0, None,
                         tol_div=1e-8, name="pinch", smoothness=smooth)
