"""Unit-time mixers: a velocity on [0, 1], an initial two-valued pattern and
the exact rearrangement that pattern undergoes over one period.

Two constructions are provided.

``pinch`` (lambda = 1/2) splits a disk of area 1/2 into pieces with
regularised square-root pinches. The nominal pattern after one period is the
disk copied into the four quadrants at half scale.

``snake`` (lambda = 1/3) refolds the vertical stripe pattern
``+1 iff |x1 - 1/2| < 1/4`` into three copies of itself with three sawtooth
shears. With an ideal sawtooth the composite map pulls x1 back to 3 x1 mod 1,
so the stripe pattern is self-similar exactly; the smoothed sawtooth used for
the velocity only perturbs a layer of width ``fold_width``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .flowkit import ShearStage, root_profile, root_profile_deriv, shear_field, time_ramp_rate
from .torus import ScalarField, TorusGrid, VelocityModel, lambda_inverse, rescale_pattern, thread_cap

MIN_CELLS_PER_PERIOD = 8

Datum = Callable[[np.ndarray, np.ndarray], np.ndarray]
Preimage = Callable[[np.ndarray, np.ndarray, int], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class MixerConstruction:
    """A unit-time mixer.

    ``datum`` is the exact initial pattern as a function of position and
    ``grid_pattern`` overrides node sampling of ``datum`` when the sampled
    set would not be balanced. ``preimage`` sends integer node indices (i, j) of an n-grid to the node
    indices whose value lands there after one period, evaluated in exact
    integer arithmetic. ``isometry`` (optional) is an index map applied after
    the rescaling in the self-similarity relation; ``None`` means identity.
    """

    name: str
    u0: VelocityModel
    datum: Datum
    preimage: Preimage
    lam: Fraction
    regularity: str
    grid_multiple: int
    isometry: Optional[Callable[[ScalarField], ScalarField]] = None
    grid_pattern: Optional[Callable[[TorusGrid], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    @property
    def inv_lambda(self) -> int:
        return lambda_inverse(self.lam)

    def check_grid(self, grid: TorusGrid) -> None:
        if grid.n % self.grid_multiple:
            raise ValueError(f"{self.name} mixer needs a grid divisible by {self.grid_multiple}, "
                             f"got {grid.n}")

    def rho0(self, grid: TorusGrid) -> ScalarField:
        self.check_grid(grid)
        if self.grid_pattern is not None:
            vals = self.grid_pattern(grid)
        else:
            x1, x2 = grid.mesh()
            vals = self.datum(x1, x2)
        return ScalarField(grid, vals, mean_zero=abs(float(vals.mean())) <= 1e-12)

    def checkpoint_map(self, f: ScalarField) -> ScalarField:
        """Apply the exact one-period rearrangement to a grid pattern."""
        self.check_grid(f.grid)
        n = f.grid.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        pi, pj = self.preimage(i, j, n)
        out = ScalarField(f.grid, f.values[pi % n, pj % n], mean_zero=f.mean_zero)
        return self.isometry(out) if self.isometry is not None else out

    def rescaled(self, f: ScalarField) -> ScalarField:
        """Right-hand side of the self-similarity relation: rescale then isometry."""
        out = rescale_pattern(f, self.lam)
        return self.isometry(out) if self.isometry is not None else out


def nominal_pattern(mixer: MixerConstruction, n: int, grid: TorusGrid) -> ScalarField:
    """Exact pattern at the start of period n: the initial pattern rescaled n times."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    m = mixer.inv_lambda ** n
    if grid.n % m or grid.n // m < MIN_CELLS_PER_PERIOD:
        need = MIN_CELLS_PER_PERIOD * m
        raise ValueError(f"grid {grid.n} cannot resolve pattern period 1/{m}: "
                         f"use a multiple of {need} (at least {need} nodes per axis)")
    f = mixer.rho0(grid)
    for _ in range(n):
        f = mixer.rescaled(f)
    return f


def mollify(f: ScalarField, cells: float = 2.0) -> ScalarField:
    """Gaussian smoothing with standard deviation ``cells`` grid spacings."""
    sigma = cells * f.grid.spacing
    k1, k2 = f.grid.wavenumbers()
    mult = np.exp(-2.0 * (np.pi * sigma) ** 2 * (k1 ** 2 + k2 ** 2))
    w = thread_cap()
    vals = sfft.ifft2(sfft.fft2(f.values, workers=w) * mult, workers=w).real
    if f.mean_zero:
        vals = vals - vals.mean()
    return ScalarField(f.grid, vals, mean_zero=f.mean_zero)


# ----------------------------------------------------------------------- snake

SNAKE_FOLD_WIDTH = 0.003
SNAKE_STAGES = ((0, 1.0), (1, 2.0), (0, -1.0 / 3.0))


def snake_datum(x1, x2):
    return np.where(np.abs(np.asarray(x1) - 0.5) < 0.25, 1.0, -1.0) + 0.0 * np.asarray(x2)


def snake_stages(width: float = SNAKE_FOLD_WIDTH, offset: float = 0.0):
    return tuple(ShearStage(axis, amount, k / 3.0, (k + 1) / 3.0, width, offset)
                 for k, (axis, amount) in enumerate(SNAKE_STAGES))


def _snake_preimage(i, j, n):
    # Work on the lattice of spacing 1/(3n) so the 1/3 shear stays integral.
    q = 3 * n
    a, b = 3 * i, 3 * j
    a = (a + (b % q) // 3) % q          # undo x1 -= S(x2) / 3
    b = (b - 2 * (a % q)) % q           # undo x2 += 2 S(x1)
    a = (a - (b % q)) % q               # undo x1 += S(x2)
    return a // 3, b // 3


def build_snake_mixer(grid: TorusGrid, fold_width: Optional[float] = None) -> MixerConstruction:
    """Three sawtooth shears that turn the stripe pattern into three stripes.

    Every rescaled stripe pattern is balanced only when n / 3^k is 2 mod 4,
    so the grid must be 6 times an odd number (2 * 3^b among allowed sizes).

    The profiles jump half a cell off the node rows. Characteristics traced
    back from nodes only visit the lattice of spacing h / 3 (a coarser one in
    later periods), which stays h / 6 away from the jump. A layer narrower
    than h / 3 is therefore never entered. The default is
    min(SNAKE_FOLD_WIDTH, h / 4).
    """
    if grid.n % 6 or grid.n % 4 != 2:
        raise ValueError(f"snake mixer needs a grid of the form 2 * 3^b, got {grid.n}")
    if fold_width is None:
        fold_width = min(SNAKE_FOLD_WIDTH, 0.25 * grid.spacing)
    if not 0.0 < fold_width < 0.1:
        raise ValueError("fold_width must lie in (0, 0.1)")
    vm = shear_field(snake_stages(fold_width, 0.5 * grid.spacing), 0.0, 1.0, name="snake")
    return MixerConstruction("snake", vm, snake_datum, _snake_preimage, Fraction(1, 3),
                             "lipschitz", 6, params={"fold_width": fold_width})


# ----------------------------------------------------------------------- pinch

PINCH_RADIUS = math.sqrt(1.0 / (2.0 * math.pi))


@dataclass(frozen=True)
class PinchDesign:
    """Parameters of the two-stage pinch.

    Stage one (t in [0, split]) is a cellular pinch centred on the disk. It
    pulls the outside in along the x1 axis, so the disk is cut into an upper
    and a lower piece. Stage two is the same construction turned a quarter
    turn with half the period in x2. It pulls the gap rows between the pieces
    towards the rows a quarter period above and below the centre, which cuts
    each piece into a left and a right half. In both stages the ejection
    profile vanishes to third order on the cell edge, so separated pieces do
    not meet again across it.
    """

    delta: float = 1e-3
    split: float = 0.5
    rate1: float = 1.6
    rate2: float = 1.2

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive: the unregularised pinch is not "
                             "integrable through the splitting time")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")


def _root_cell(xi, delta, k=1):
    """root_profile of sin(2 pi k xi) / (2 pi k) and its derivative."""
    w = 2 * np.pi * k
    s = np.sin(w * xi) / w
    return root_profile(s, delta), root_profile_deriv(s, delta) * np.cos(w * xi)


def _damped_cell(xi):
    """sin(2 pi xi) / 2 pi times (1 + cos 2 pi xi) / 2, and its derivative."""
    s, c = np.sin(2 * np.pi * xi), np.cos(2 * np.pi * xi)
    d = 0.5 * (1.0 + c)
    return s / (2 * np.pi) * d, c * d - s * s / 2.0


def pinch_velocity_fn(design: PinchDesign, center: float):
    ts = design.split

    def fn(t, x1, x2):
        if t <= ts:
            rate = design.rate1 * time_ramp_rate(t / ts) / ts
            f, df = _root_cell(x1 - center, design.delta)
            g, dg = _damped_cell(x2 - center)
            return -rate * f * dg, rate * df * g
        rate = design.rate2 * time_ramp_rate((t - ts) / (1.0 - ts)) / (1.0 - ts)
        f, df = _root_cell(x2 - center - 0.25, design.delta, k=2)
        g, dg = _damped_cell(x1 - center)
        return rate * df * g, -rate * f * dg

    return fn


def _pinch_preimage(i, j, n):
    return 2 * i, 2 * j


def build_pinch_mixer(delta: float, grid: TorusGrid, design: Optional[PinchDesign] = None) -> MixerConstruction:
    """Disk of area 1/2 split into four pieces within one period.

    The flow is centred half a cell off the node lattice so the cut lines fall
    between nodes of ``grid``.
    """
    if grid.n % 2:
        raise ValueError(f"pinch mixer needs an even grid, got {grid.n}")
    design = PinchDesign(delta=delta) if design is None else design
    if design.delta != delta:
        design = PinchDesign(**{**design.__dict__, "delta": delta})
    center = 0.5 + 0.5 * grid.spacing
    r2 = PINCH_RADIUS ** 2

    def datum(x1, x2):
        return np.where((np.asarray(x1) - 0.5) ** 2 + (np.asarray(x2) - 0.5) ** 2 < r2, 1.0, -1.0)

    vm = VelocityModel(pinch_velocity_fn(design, center), 0.0, 1.0, tol_div=1e-3,
                       name="pinch", smoothness="sobolev_p")
    return MixerConstruction("pinch", vm, datum, _pinch_preimage, Fraction(1, 2), "sobolev_p", 2,
                             grid_pattern=balanced_disk, params={"delta": delta, "design": design})


def balanced_disk(grid: TorusGrid) -> np.ndarray:
    return _balanced_disk(grid.n).copy()


@lru_cache(maxsize=8)
def _balanced_disk(n: int) -> np.ndarray:
    """Disk of area 1/2 about (1/2, 1/2) sampled so every rescaled copy is balanced.

    Rescaling by 1/2 keeps only the even sub-lattice, so balance is needed on
    each nested sub-lattice L_k (indices divisible by 2^k) that still has
    MIN_CELLS_PER_PERIOD nodes per side; coarser ones are never resolved by
    a rescaled pattern. Balancing every difference L_k minus L_(k+1), and
    the coarsest L_K, balances all of them. Starting from the node sampling of the disk, each
    such level is corrected by switching the nodes of that level nearest the
    circle (ties by polar angle). A node is only switched on next to a +1
    node and only switched off when no +1 neighbour is left alone.

    The coarse levels can force a few nodes a cell or two outside the circle.
    Before the finest level (nodes with an odd index) is balanced, each such
    stray piece is joined to the disk by the shortest path of finest-level
    nodes, which that balancing then leaves alone. Holes are joined to the
    outside the same way.
    """
    idx = np.arange(n)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    d1, d2 = i / n - 0.5, j / n - 0.5
    gap = d1 * d1 + d2 * d2 - PINCH_RADIUS ** 2
    ang = np.arctan2(d2, d1)
    on = gap < 0
    step = 1
    while (n // (2 * step)) % 2 == 0 and n // (2 * step) >= MIN_CELLS_PER_PERIOD:
        step *= 2
    levels = []
    k = 1
    while k < step:
        levels.append((i % k == 0) & (j % k == 0) & ~((i % (2 * k) == 0) & (j % (2 * k) == 0)))
        k *= 2
    levels.append((i % step == 0) & (j % step == 0))
    for mask in levels[1:]:
        _balance_level(on, mask, gap, ang)
    keep = np.zeros_like(on)
    if len(levels) > 1:
        keep = _bridge(on, levels[0])
        off = ~on
        keep |= _bridge(off, levels[0])
        on[...] = ~off
    _balance_level(on, levels[0], gap, ang, keep)
    return np.where(on, 1.0, -1.0)


_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _bridge(on: np.ndarray, finest: np.ndarray) -> np.ndarray:
    """Join every piece of ``on`` to the largest one through finest-level nodes."""
    n = on.shape[0]
    keep = np.zeros_like(on)
    while True:
        labels, count = ndimage.label(on)
        # Merge labels across the periodic seams.
        for a, b in ((labels[0, :], labels[-1, :]), (labels[:, 0], labels[:, -1])):
            both = (a > 0) & (b > 0) & (a != b)
            for x, y in zip(a[both], b[both]):
                labels[labels == y] = x
        ids, sizes = np.unique(labels[labels > 0], return_counts=True)
        if ids.size <= 1:
            return keep
        main = labels == ids[np.argmax(sizes)]
        start = tuple(np.argwhere(labels == ids[np.argmin(sizes)])[0])
        prev = {start: None}
        queue = deque([start])
        end = None
        while queue and end is None:
            a, b = queue.popleft()
            for da, db in _NEIGHBOURS:
                c = ((a + da) % n, (b + db) % n)
                if c in prev:
                    continue
                if main[c]:
                    end = (a, b)
                    break
                if finest[c] and not on[c]:
                    prev[c] = (a, b)
                    queue.append(c)
        if end is None:
            raise RuntimeError("cannot connect the disk sampling on this grid")
        while end is not None:
            on[end] = keep[end] = True
            end = prev[end]


def _balance_level(on: np.ndarray, mask: np.ndarray, gap: np.ndarray, ang: np.ndarray,
                   keep: Optional[np.ndarray] = None) -> None:
    n = on.shape[0]
    excess = int(on[mask].sum()) - int(mask.sum()) // 2
    if excess == 0:
        return
    switch_on = excess < 0
    movable = mask & (on != switch_on)
    if keep is not None:
        movable &= ~keep
    sel = np.flatnonzero(movable.ravel())
    order = sel[np.lexsort((ang.ravel()[sel], np.abs(gap.ravel()[sel])))]

    def nbrs(a, b):
        return [((a + da) % n, (b + db) % n) for da, db in _NEIGHBOURS]

    def lonely(a, b):
        return on[a, b] and not any(on[c] for c in nbrs(a, b))

    todo, strict = abs(excess), True
    while todo:
        for flat in order:
            a, b = divmod(int(flat), n)
            if on[a, b] == switch_on:
                continue
            if switch_on:
                if strict and not any(on[c] for c in nbrs(a, b)):
                    continue
                on[a, b] = True
            else:
                on[a, b] = False
                if strict and any(lonely(*c) for c in nbrs(a, b)):
                    on[a, b] = True
                    continue
            todo -= 1
            break
        else:
            # Very coarse grids: no admissible node is left, take the nearest.
            strict = False


# ---------------------------------------------------------------------- powers

def mixer_power(mixer: MixerConstruction, k: int) -> MixerConstruction:
    """k consecutive periods of ``mixer`` compressed into unit time (lambda -> lambda^k).

    Period j runs on [j/k, (j+1)/k] with the spatially rescaled velocity
    k lam^j u0(k t - j, x / lam^j), so the pattern after unit time is the
    datum rescaled k times.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k == 1:
        return mixer
    if mixer.isometry is not None:
        raise ValueError("powers of mixers with a nontrivial isometry are not supported")
    lam = float(mixer.lam)
    m = mixer.inv_lambda
    u = mixer.u0

    def fn(t, x1, x2):
        j = min(int(math.floor(t * k)), k - 1)
        sc = lam ** j
        a, b = u(k * t - j, np.mod(x1 / sc, 1.0), np.mod(x2 / sc, 1.0))
        return k * sc * a, k * sc * b

    vm = VelocityModel(fn, 0.0, 1.0, tol_div=u.tol_div, name=f"{mixer.name}^{k}",
                       smoothness=u.smoothness)

    def preimage(i, j, n):
        for _ in range(k):
            i, j = mixer.preimage(i, j, n)
        return i, j

    return MixerConstruction(f"{mixer.name}^{k}", vm, mixer.datum, preimage, mixer.lam ** k,
                             mixer.regularity, mixer.grid_multiple * m ** (k - 1),
                             grid_pattern=mixer.grid_pattern, params={**mixer.params, "power": k})
