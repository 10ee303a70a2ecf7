from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tmix.torus import (ScalarField, SpectralField, TorusGrid, VelocityModel, check_divergence,
                        from_spectral, lambda_inverse, load_field, rescale_pattern, save_field,
                        spectral_gradient, to_spectral)

SMOOTH_SIZES = [4, 6, 8, 9, 12, 16, 18, 24, 27, 32, 36, 48]


def naive_dft(values):
    """Direct double sum, normalised by n^2 (independent of numpy.fft)."""
    n = values.shape[0]
    idx = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return w @ values @ w.T / n ** 2


@pytest.mark.parametrize("n", SMOOTH_SIZES)
def test_grid_accepts_2_3_smooth(n):
    g = TorusGrid(n)
    assert g.n == n and g.spacing == 1.0 / n
    x1, x2 = g.mesh()
    assert x1[1, 0] == 1.0 / n and x2[0, 1] == 1.0 / n


@pytest.mark.parametrize("n", [2, 3, 5, 10, 20, 25, 49, 100])
def test_grid_rejects_other_sizes(n):
    with pytest.raises(ValueError):
        TorusGrid(n)


def test_field_checks():
    g = TorusGrid(8)
    with pytest.raises(ValueError, match="shape"):
        ScalarField(g, np.zeros((8, 9)))
    bad = np.zeros((8, 8))
    bad[2, 3] = np.nan
    with pytest.raises(ValueError, match=r"\(2, 3\)"):
        ScalarField(g, bad)
    with pytest.raises(ValueError, match="mean"):
        ScalarField(g, np.ones((8, 8)), mean_zero=True)
    f = ScalarField(g, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_spectral_matches_direct_sum():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((12, 12))
    c = to_spectral(ScalarField(TorusGrid(12), v)).coeffs
    assert np.allclose(c, naive_dft(v), atol=1e-13)


def test_single_mode_coefficient():
    g = TorusGrid(16)
    x1, x2 = g.mesh()
    sf = to_spectral(ScalarField(g, np.cos(2 * np.pi * (3 * x1 - 2 * x2))))
    assert abs(sf.coefficient(3, -2) - 0.5) < 1e-14
    assert abs(sf.coefficient(-3, 2) - 0.5) < 1e-14
    assert abs(sf.coefficient(1, 1)) < 1e-14


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SMOOTH_SIZES).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-1e3, 1e3))))
def test_round_trip(v):
    g = TorusGrid(v.shape[0])
    back = from_spectral(to_spectral(ScalarField(g, v))).values
    assert np.allclose(back, v, atol=1e-9 * max(1.0, np.abs(v).max()))


def test_parseval():
    rng = np.random.default_rng(1)
    v = rng.standard_normal((18, 18))
    c = to_spectral(ScalarField(TorusGrid(18), v)).coeffs
    assert abs(np.sum(np.abs(c) ** 2) - np.mean(v ** 2)) < 1e-12


def test_non_hermitian_rejected():
    g = TorusGrid(8)
    c = np.zeros((8, 8), complex)
    c[1, 0] = 1.0
    with pytest.raises(ValueError, match="Hermitian"):
        from_spectral(SpectralField(g, c))


@pytest.mark.parametrize("lam, m", [(Fraction(1, 2), 2), (Fraction(1, 3), 3), (0.25, 4), (Fraction(1, 9), 9)])
def test_lambda_inverse(lam, m):
    assert lambda_inverse(lam) == m


@pytest.mark.parametrize("lam", [Fraction(2, 3), 0.4, -0.5, 0])
def test_lambda_inverse_rejects(lam):
    with pytest.raises(ValueError):
        lambda_inverse(lam)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(36, 2), (36, 3), (48, 4), (54, 3), (72, 6)]), st.integers(0, 2 ** 31))
def test_rescale_matches_pointwise_definition(nm, seed):
    n, m = nm
    g = TorusGrid(n)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(4)

    def fn(x1, x2):
        return a[0] * np.sin(2 * np.pi * x1) + a[1] * np.cos(2 * np.pi * x2) + a[2] * np.sin(2 * np.pi * (x1 + 2 * x2)) + a[3]

    x1, x2 = g.mesh()
    out = rescale_pattern(ScalarField(g, fn(x1, x2)), Fraction(1, m)).values
    assert np.allclose(out, fn(np.mod(m * x1, 1), np.mod(m * x2, 1)), atol=1e-12)


def test_rescale_needs_divisible_grid():
    with pytest.raises(ValueError, match="divisible"):
        rescale_pattern(ScalarField(TorusGrid(16), np.zeros((16, 16))), Fraction(1, 3))


def test_snapshot_round_trip(tmp_path):
    g = TorusGrid(12)
    v = np.where(np.arange(144).reshape(12, 12) % 2 == 0, 1.0, -1.0)
    f = ScalarField(g, v, mean_zero=True)
    save_field(tmp_path / "f.bin", f)
    back = load_field(tmp_path / "f.bin")
    assert back.mean_zero and np.array_equal(back.values, v)
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXX" + raw[6:])
    with pytest.raises(ValueError, match="magic"):
        load_field(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_field(tmp_path / "short.bin")


def test_spectral_gradient_of_mode():
    g = TorusGrid(32)
    x1, x2 = g.mesh()
    d1, d2 = spectral_gradient(np.sin(2 * np.pi * (2 * x1 + 5 * x2)))
    c = np.cos(2 * np.pi * (2 * x1 + 5 * x2))
    assert np.allclose(d1, 4 * np.pi * c, atol=1e-11)
    assert np.allclose(d2, 10 * np.pi * c, atol=1e-11)


def test_divergence_check():
    g = TorusGrid(32)
    good = VelocityModel(lambda t, x1, x2: (np.sin(2 * np.pi * x2), np.cos(2 * np.pi * x1)))
    assert check_divergence(good, g) < 1e-10
    bad = VelocityModel(lambda t, x1, x2: (np.sin(2 * np.pi * x1), 0 * x2), name="compressive")
    with pytest.raises(ValueError, match="compressive"):
        check_divergence(bad, g)


def test_velocity_time_domain():
    vm = VelocityModel(lambda t, x1, x2: (x1, x2), 0.0, 1.0)
    assert vm.in_domain(0.5) and not vm.in_domain(1.1) and not vm.in_domain(-0.1)
