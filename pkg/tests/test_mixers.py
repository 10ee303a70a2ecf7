from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tmix.advect import IntegratorConfig, solve
from tmix.flowkit import shear_flow_map
from tmix.mixers import (PinchDesign, balanced_disk, build_pinch_mixer, build_snake_mixer,
                         mixer_power, mollify, nominal_pattern, snake_stages)
from tmix.norms import count_components
from tmix.torus import ScalarField, TorusGrid


def snake_preimage_oracle(i, j, n):
    """Inverse of the three ideal sawtooth shears in exact rational arithmetic.

    S(y) is the representative of y mod 1 in [0, 1). Forward the shears are
    x1 += S(x2), x2 += 2 S(x1), x1 -= S(x2) / 3, so the inverse undoes them in
    reverse order.
    """
    def S(y):
        return y - (y.numerator // y.denominator)

    x1, x2 = Fraction(i, n), Fraction(j, n)
    x1 = S(x1 + S(x2) / 3)
    x2 = S(x2 - 2 * S(x1))
    x1 = S(x1 - S(x2))
    return x1, x2


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([6, 18, 54, 162]).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(0, n - 1), st.integers(0, n - 1))))
def test_snake_preimage_matches_rational_oracle(nij):
    n, i, j = nij
    mixer = build_snake_mixer(TorusGrid(n))
    pi, pj = mixer.preimage(np.array(i), np.array(j), n)
    x1, x2 = snake_preimage_oracle(i, j, n)
    # x1 always lands on a node; x2 may not, and the stripe datum ignores it.
    assert Fraction(int(pi) % n, n) == x1
    assert int(pj) % n == (x2 * n).numerator // (x2 * n).denominator


@pytest.mark.parametrize("n", [6, 18, 54, 162, 486])
def test_snake_self_similarity_on_grid(n):
    mixer = build_snake_mixer(TorusGrid(n))
    rho = mixer.rho0(TorusGrid(n))
    assert rho.mean_zero
    assert np.array_equal(mixer.checkpoint_map(rho).values, mixer.rescaled(rho).values)


def test_snake_flow_map_reproduces_checkpoint():
    g = TorusGrid(162)
    mixer = build_snake_mixer(g)
    stages = snake_stages(mixer.params["fold_width"], 0.5 * g.spacing)
    x1, x2 = g.mesh()
    y1, y2 = shear_flow_map(stages, 1.0, x1, x2, inverse=True)
    pulled = mixer.datum(np.mod(y1, 1.0), np.mod(y2, 1.0))
    assert np.array_equal(pulled, mixer.rescaled(mixer.rho0(g)).values)


def test_snake_advection_reproduces_checkpoint():
    g = TorusGrid(54)
    mixer = build_snake_mixer(g)
    out = solve(mixer.datum, mixer.u0, 1.0, g, IntegratorConfig(1e-3))
    assert np.array_equal(out.values, mixer.rescaled(mixer.rho0(g)).values)


@pytest.mark.parametrize("n", [8, 9, 12, 27, 36, 48])
def test_snake_rejects_unbalanced_grids(n):
    with pytest.raises(ValueError, match="2 \\* 3\\^b"):
        build_snake_mixer(TorusGrid(n))


def test_snake_fold_width_bounds():
    g = TorusGrid(54)
    assert build_snake_mixer(g).params["fold_width"] == 0.003
    assert build_snake_mixer(TorusGrid(1458)).params["fold_width"] == pytest.approx(0.25 / 1458)
    with pytest.raises(ValueError):
        build_snake_mixer(g, fold_width=0.2)
    with pytest.raises(ValueError):
        build_snake_mixer(g, fold_width=0.0)


@pytest.mark.parametrize("n", [16, 64, 96, 128, 144, 512])
def test_balanced_disk_is_balanced_on_every_sublattice(n):
    vals = balanced_disk(TorusGrid(n))
    step = 1
    # Only sub-lattices a rescaled pattern can resolve (8 nodes per side).
    while n % step == 0 and n // step >= 8 and (n // step) % 2 == 0:
        sub = vals[::step, ::step]
        assert sub.sum() == 0, step
        step *= 2


def test_balanced_disk_is_close_to_the_disk():
    g = TorusGrid(256)
    x1, x2 = g.mesh()
    disk = (x1 - 0.5) ** 2 + (x2 - 0.5) ** 2 < 1 / (2 * np.pi)
    vals = balanced_disk(g)
    assert np.mean((vals > 0) != disk) < 1e-3
    assert count_components(vals > 0) == 1 and count_components(vals < 0) == 1


def test_pinch_pattern_rescales_by_subsampling():
    g = TorusGrid(64)
    mixer = build_pinch_mixer(1e-3, g)
    rho = mixer.rho0(g)
    assert rho.mean_zero
    once = mixer.checkpoint_map(rho)
    assert np.array_equal(once.values, mixer.rescaled(rho).values)
    assert np.array_equal(once.values[:32, :32], rho.values[::2, ::2])
    assert once.values.sum() == 0


def test_pinch_splits_into_four_at_small_grid():
    # 256 is the smallest power of two that resolves the second-stage cut.
    g = TorusGrid(256)
    mixer = build_pinch_mixer(1e-3, g)
    cfg = IntegratorConfig(2e-3)
    counts = [count_components(mixer.rho0(g).values > 0)]
    for t in (0.5, 1.0):
        counts.append(count_components(solve(mixer.datum, mixer.u0, t, g, cfg).values > 0))
    assert counts == [1, 2, 4]


def test_pinch_design_validation():
    with pytest.raises(ValueError, match="positive"):
        PinchDesign(delta=0.0)
    with pytest.raises(ValueError):
        PinchDesign(split=1.0)
    with pytest.raises(ValueError, match="even"):
        build_pinch_mixer(1e-3, TorusGrid(27))
    m = build_pinch_mixer(2e-3, TorusGrid(16), PinchDesign(delta=1e-3, rate1=1.5))
    assert m.params["design"].delta == 2e-3 and m.params["design"].rate1 == 1.5


def test_mixer_power_composes_preimages():
    g = TorusGrid(162)
    snake = build_snake_mixer(g)
    sq = mixer_power(snake, 2)
    assert sq.lam == Fraction(1, 9) and sq.grid_multiple == 18
    rho = sq.rho0(g)
    assert np.array_equal(sq.checkpoint_map(rho).values, sq.rescaled(rho).values)
    assert mixer_power(snake, 1) is snake
    with pytest.raises(ValueError):
        mixer_power(snake, 0)


def test_mixer_power_velocity_is_rescaled_copy():
    g = TorusGrid(64)
    pinch = build_pinch_mixer(1e-3, g)
    sq = mixer_power(pinch, 2)
    x1, x2 = np.array([0.1, 0.3]), np.array([0.2, 0.45])
    a = sq.u0(0.7, x1, x2)
    b = pinch.u0(0.4, np.mod(2 * x1, 1.0), np.mod(2 * x2, 1.0))
    assert np.allclose(a, np.multiply(2 * 0.5, b), atol=1e-14)


def test_nominal_pattern_resolution_error():
    g = TorusGrid(54)
    snake = build_snake_mixer(g)
    assert np.array_equal(nominal_pattern(snake, 0, g).values, snake.rho0(g).values)
    nominal_pattern(snake, 1, g)
    with pytest.raises(ValueError, match="cannot resolve"):
        nominal_pattern(snake, 2, g)
    with pytest.raises(ValueError):
        nominal_pattern(snake, -1, g)


def test_mollify_keeps_mean_and_damps_modes():
    g = TorusGrid(32)
    x1, _ = g.mesh()
    f = ScalarField(g, np.sin(2 * np.pi * 4 * x1), mean_zero=True)
    out = mollify(f, cells=1.0)
    factor = np.exp(-2 * (np.pi / 32) ** 2 * 16)
    assert np.allclose(out.values, factor * f.values, atol=1e-13)
    assert out.mean_zero and abs(out.values.mean()) < 1e-15
