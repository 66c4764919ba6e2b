import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpme.errors import InvalidRadius, NonFinite, NonZeroMean
from vpme.grid import (
    ScalarField,
    TorusGrid,
    VectorField,
    convolve_mollifier,
    divergence,
    fft_workers,
    gradient,
    invert_laplacian,
    laplacian,
    mollifier_multiplier,
)

TWO_PI = 2 * np.pi


def trig_field(grid, coeffs):
    """Sum of a_k cos(2 pi k.x) + b_k sin(2 pi k.x) over the given mode vectors."""
    x = grid.nodes()
    vals = np.zeros(grid.shape)
    for k, a, b in coeffs:
        phase = TWO_PI * sum(ki * xi for ki, xi in zip(k, x))
        vals = vals + a * np.cos(phase) + b * np.sin(phase)
    return ScalarField(grid, vals)


band_limited = st.lists(
    st.tuples(st.tuples(st.integers(-7, 7), st.integers(-7, 7)),
              st.floats(-1, 1), st.floats(-1, 1)),
    min_size=1, max_size=6)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(1, 6)
    with pytest.raises(ValueError):
        TorusGrid(4, 8)
    with pytest.raises(ValueError):
        TorusGrid(1, 2)
    g = TorusGrid(2, 16)
    assert g.h == 1 / 16 and g.shape == (16, 16) and g.size == 256
    assert g.cell_volume == 1 / 256


def test_rfft_mode_layout():
    g = TorusGrid(2, 8)
    assert g.modes[0].shape == (8, 5)
    assert list(g.modes[0][:, 0]) == [0, 1, 2, 3, -4, -3, -2, -1]
    assert list(g.modes[1][0]) == [0, 1, 2, 3, 4]
    assert g.laplacian_symbol[1, 2] == pytest.approx(-(TWO_PI**2) * 5)


def test_laplacian_of_cosine():
    g = TorusGrid(1, 32)
    f = trig_field(g, [((3,), 1.0, 0.0)])
    lap = laplacian(f)
    np.testing.assert_allclose(lap.values, -(TWO_PI * 3) ** 2 * f.values, atol=1e-9)


def test_laplacian_keeps_nyquist():
    g = TorusGrid(1, 8)
    f = ScalarField(g, np.cos(np.pi * np.arange(8)))  # (-1)^j, the Nyquist mode
    np.testing.assert_allclose(laplacian(f).values, -(TWO_PI * 4) ** 2 * f.values, atol=1e-9)


def test_gradient_of_sine_2d():
    g = TorusGrid(2, 16)
    x, y = g.nodes()
    f = ScalarField(g, np.sin(TWO_PI * x) * np.cos(2 * TWO_PI * y))
    gx, gy = gradient(f).components
    np.testing.assert_allclose(gx.values, TWO_PI * np.cos(TWO_PI * x) * np.cos(2 * TWO_PI * y),
                               atol=1e-10)
    np.testing.assert_allclose(gy.values, -2 * TWO_PI * np.sin(TWO_PI * x) * np.sin(2 * TWO_PI * y),
                               atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(band_limited)
def test_inverse_laplacian_round_trip(coeffs):
    g = TorusGrid(2, 16)
    f = trig_field(g, coeffs)
    f0 = ScalarField(g, f.values - f.mean)
    back = invert_laplacian(laplacian(f0))
    np.testing.assert_allclose(back.values, f0.values, atol=1e-10)
    assert abs(back.mean) < 1e-12


@settings(max_examples=40, deadline=None)
@given(band_limited)
def test_divergence_of_gradient_is_laplacian(coeffs):
    # |k| <= 7 < n/2 keeps the Nyquist mode empty
    g = TorusGrid(2, 16)
    f = trig_field(g, coeffs)
    np.testing.assert_allclose(divergence(gradient(f)).values, laplacian(f).values, atol=1e-8)


def test_invert_laplacian_rejects_mean():
    g = TorusGrid(1, 16)
    with pytest.raises(NonZeroMean):
        invert_laplacian(ScalarField.constant(g, 1.0))


def test_operators_reject_non_finite():
    g = TorusGrid(1, 8)
    vals = np.zeros(8)
    vals[3] = np.nan
    with pytest.raises(NonFinite):
        laplacian(ScalarField(g, vals))
    with pytest.raises(NonFinite):
        gradient(ScalarField(g, vals))


def test_fields_are_immutable():
    g = TorusGrid(1, 8)
    f = ScalarField(g, np.ones(8))
    with pytest.raises(ValueError):
        f.values[0] = 2.0
    with pytest.raises(ValueError):
        ScalarField(g, np.ones(4))
    with pytest.raises(ValueError):
        VectorField((f, f))


def test_mollifier_matches_gaussian_transform():
    # sampling aliasing is of order exp(-(pi r n)^2 / 2) ~ 1e-22 here
    g = TorusGrid(1, 64)
    r = 0.05
    mult = mollifier_multiplier(g, r)
    k = g.modes[0]
    np.testing.assert_allclose(mult, np.exp(-((TWO_PI * r * k) ** 2) / 2), atol=1e-13)


def test_mollifier_tensor_product_2d():
    g = TorusGrid(2, 32)
    mult = mollifier_multiplier(g, 0.1)
    m1 = mollifier_multiplier(TorusGrid(1, 32), 0.1)
    assert mult[3, 2] == pytest.approx(m1[3] * m1[2], abs=1e-15)
    assert mult[-3, 2] == pytest.approx(m1[3] * m1[2], abs=1e-15)


@pytest.mark.parametrize("r", [1e-4, 0.01, 0.1, 0.5])
def test_mollifier_multiplier_range(r):
    mult = mollifier_multiplier(TorusGrid(2, 16), r)
    assert mult.flat[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all((mult >= 0) & (mult <= 1))


@pytest.mark.parametrize("r", [0.0, -0.1, 0.51, np.inf])
def test_mollifier_rejects_radius(r):
    with pytest.raises(InvalidRadius):
        mollifier_multiplier(TorusGrid(1, 8), r)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=32, max_size=32), st.floats(1e-3, 0.5))
def test_mollifier_contracts_sup_norm(vals, r):
    g = TorusGrid(1, 32)
    f = ScalarField(g, np.array(vals))
    sm = convolve_mollifier(f, r)
    assert sm.sup_norm() <= f.sup_norm() * (1 + 1e-12) + 1e-12
    assert sm.mean == pytest.approx(f.mean, abs=1e-12)


def test_fft_workers_env(monkeypatch):
    monkeypatch.setenv("VPME_THREADS", "3")
    assert fft_workers() == 3
    monkeypatch.setenv("VPME_THREADS", "junk")
    assert fft_workers() == 1
    monkeypatch.delenv("VPME_THREADS")
    assert fft_workers() == 1
