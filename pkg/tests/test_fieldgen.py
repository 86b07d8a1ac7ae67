import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from platecvae.fieldgen import (
    FillLoad, GaussianLoad, PlateSpec, Region, StrainField, fill_pressure, flexural_rigidity,
    gaussian_pressure, normalize_by_yield, simulate, solve_plate, strain_fields, strip_plate,
    uniform_square_plate, write_field_csv, yield_strains,
)

# Classical series-solution coefficient for the centre deflection of a clamped
# square plate under uniform pressure: w_max = 0.00126 q a^4 / D.
CLAMPED_COEFF = 0.00126


def _uniform_max_deflection(n, q=1e4, t_mm=10.0):
    spec = uniform_square_plate(1.0, n, t_mm)
    w = solve_plate(spec, [t_mm], np.full((n + 1, n + 1), q))
    D = flexural_rigidity(spec.youngs_modulus, spec.poisson_ratio, t_mm * 1e-3)
    return w.max() * D / (q * 1.0**4)


# --- loads -------------------------------------------------------------------

def test_gaussian_peak_and_one_sigma():
    load = GaussianLoad(25e3, 0.1, -0.2, 0.2)
    assert gaussian_pressure(load, 0.1, -0.2) == pytest.approx(25e3)
    assert gaussian_pressure(load, 0.3, -0.2) == pytest.approx(25e3 * 0.6065306597, rel=1e-9)


@given(st.floats(-0.5, 0.5), st.floats(0.05, 1.0))
def test_gaussian_even_symmetry(d, s):
    load = GaussianLoad(1e4, 0.05, 0.0, s)
    assert gaussian_pressure(load, 0.05 + d, 0.3) == pytest.approx(
        gaussian_pressure(load, 0.05 - d, 0.3), rel=1e-12)


def test_gaussian_rejects_bad_input():
    with pytest.raises(ValueError):
        GaussianLoad(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        GaussianLoad(float("nan"), 0.0, 0.0, 0.2)
    with pytest.raises(ValueError):
        gaussian_pressure(GaussianLoad(1.0, 0, 0, 0.2), np.inf, 0.0)


def test_fill_pressure():
    assert fill_pressure(FillLoad(2e4, 1.0)) == 2e4
    assert fill_pressure(FillLoad(2e4, 0.0)) == 0.0
    assert fill_pressure(FillLoad(2e4, 0.95)) == pytest.approx(0.95 * 2e4)
    with pytest.raises(ValueError):
        FillLoad(2e4, 1.01)


# --- material ----------------------------------------------------------------

def test_flexural_rigidity_hand_value():
    # 206e9 * 0.008**3 / (12 * 0.91) = 105472 / 10.92
    assert flexural_rigidity(206e9, 0.3, 0.008) == pytest.approx(9658.608, rel=1e-6)
    assert flexural_rigidity(206e9, 0.3, 0.016) == pytest.approx(8 * flexural_rigidity(206e9, 0.3, 0.008),
                                                                  rel=1e-14)
    with pytest.raises(ValueError):
        flexural_rigidity(206e9, 0.3, 0.0)


def test_yield_strains_hand_values():
    spec = uniform_square_plate(1.0, 4)
    eps_y, gamma_y = yield_strains(spec)
    assert eps_y == pytest.approx(235e6 / 206e9)
    assert gamma_y == pytest.approx(235e6 * 2 * 1.3 / (math.sqrt(3) * 206e9), rel=1e-12)
    assert gamma_y == pytest.approx(1.7125e-3, rel=1e-4)


def test_normalize_by_yield():
    spec = uniform_square_plate(1.0, 4)
    eps_y, _ = yield_strains(spec)
    out = normalize_by_yield(StrainField("xx", np.full((4, 4), eps_y)), spec)
    np.testing.assert_allclose(out.values, 1.0)
    assert np.all(normalize_by_yield(StrainField("xy", np.zeros((4, 4))), spec).values == 0)
    with pytest.raises(ValueError):
        StrainField("zz", np.zeros((2, 2)))


# --- geometry validation -----------------------------------------------------

def test_platespec_invariants():
    r = Region(-0.5, 0.5, -0.5, 0.5, 10.0)
    with pytest.raises(ValueError):
        PlateSpec(1.0, 1.0, 3, 8, regions=(r,))
    with pytest.raises(ValueError):
        PlateSpec(1.0, 1.0, 8, 8, poisson_ratio=0.5, regions=(r,))
    with pytest.raises(ValueError):  # gap in the tiling
        PlateSpec(1.0, 1.0, 8, 8, regions=(Region(-0.5, 0.0, -0.5, 0.5, 10.0),))
    with pytest.raises(ValueError):  # overlap
        PlateSpec(1.0, 1.0, 8, 8, regions=(r, Region(-0.5, 0.0, -0.5, 0.5, 10.0)))
    with pytest.raises(ValueError):
        PlateSpec(1.0, 1.0, 8, 8, regions=(Region(-0.5, 0.5, -0.5, 0.5, 0.0),))


def test_strip_plate_regions():
    spec = strip_plate()
    idx = spec.region_index()
    assert idx.shape == (8, 24)
    # strips split the short side: two element rows each, full length
    for k in range(4):
        assert np.all(idx[2 * k:2 * k + 2] == k)
    t = spec.element_thickness([12, 11, 10, 9])
    assert t[0, 0] == pytest.approx(0.012) and t[-1, -1] == pytest.approx(0.009)


# --- solver ------------------------------------------------------------------

def test_zero_load_zero_deflection():
    spec = uniform_square_plate(1.0, 10)
    assert np.all(solve_plate(spec, [8.0], np.zeros((11, 11))) == 0)


def test_solver_linearity():
    spec = strip_plate()
    x, y = spec.node_coordinates()
    q = gaussian_pressure(GaussianLoad(1e4, 0.1, 0.3, 0.3), x, y)
    t = [12.0, 11.5, 10.2, 11.0]
    w1 = solve_plate(spec, t, q)
    w2 = solve_plate(spec, t, 2 * q)
    assert np.linalg.norm(w2 - 2 * w1) <= 1e-10 * np.linalg.norm(w2)


def test_clamped_boundary():
    spec = uniform_square_plate(1.0, 12)
    w = solve_plate(spec, [10.0], np.full((13, 13), 1e4))
    assert np.all(w[0] == 0) and np.all(w[-1] == 0) and np.all(w[:, 0] == 0) and np.all(w[:, -1] == 0)
    assert np.all(w[1:-1, 1:-1] > 0)


def test_plate_oracle_convergence():
    ratios = [_uniform_max_deflection(n) for n in (25, 50, 100)]
    errs = [abs(r - CLAMPED_COEFF) / CLAMPED_COEFF for r in ratios]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


def test_solver_rejects_bad_input():
    spec = uniform_square_plate(1.0, 6)
    with pytest.raises(ValueError):
        solve_plate(spec, [10.0], np.zeros((6, 6)))
    with pytest.raises(ValueError):
        solve_plate(spec, [-1.0], np.ones((7, 7)))
    with pytest.raises(ValueError):
        solve_plate(spec, [10.0], np.full((7, 7), np.nan))


# --- strains -----------------------------------------------------------------

def test_strains_of_quadratic_field():
    spec = uniform_square_plate(1.0, 8, 10.0)
    x, y = spec.node_coordinates()
    c = 0.3
    exx, eyy, exy = strain_fields(c * x**2, [10.0], spec)
    np.testing.assert_allclose(exx, -0.010 * c, rtol=1e-10)
    np.testing.assert_allclose(eyy, 0.0, atol=1e-15)
    np.testing.assert_allclose(exy, 0.0, atol=1e-15)


def test_strains_of_twist_field():
    spec = uniform_square_plate(1.0, 8, 10.0)
    x, y = spec.node_coordinates()
    _, _, exy = strain_fields(2.0 * x * y, [10.0], spec)
    np.testing.assert_allclose(exy, -0.005 * 2.0, rtol=1e-10)


@given(st.floats(-5, 5))
@settings(max_examples=20)
def test_strains_linear_in_w(alpha):
    spec = uniform_square_plate(1.0, 6, 9.0)
    w = np.random.default_rng(3).standard_normal((7, 7))
    a = strain_fields(alpha * w, [9.0], spec)
    b = strain_fields(w, [9.0], spec)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, alpha * v, rtol=1e-12, atol=1e-300)


def test_centered_load_symmetry():
    spec = uniform_square_plate(1.0, 20, 8.0)
    x, y = spec.node_coordinates()
    q = gaussian_pressure(GaussianLoad(25e3, 0.0, 0.0, 0.2), x, y)
    exx, eyy, exy = simulate(spec, [8.0], q)
    scale = np.abs(exx).max()
    np.testing.assert_allclose(exx, eyy.T, atol=1e-9 * scale)
    np.testing.assert_allclose(exy[::-1, :], -exy, atol=1e-9 * scale)
    np.testing.assert_allclose(exy[:, ::-1], -exy, atol=1e-9 * scale)


def test_simulate_shape_and_bending_sign():
    spec = uniform_square_plate(1.0, 16, 8.0)
    out = simulate(spec, [8.0], np.full((17, 17), 2e4))
    assert out.shape == (3, 16, 16)
    # w follows the pressure, so the centre curvature is negative and -t/2 w_xx > 0;
    # the clamped edge bends the other way
    assert out[0, 8, 8] > 0 and out[0, 0, 8] < 0


def test_field_csv(tmp_path):
    p = tmp_path / "f.csv"
    write_field_csv(p, "xx", np.arange(6.0).reshape(2, 3))
    lines = p.read_text().splitlines()
    assert lines[0] == "component,nx,ny" and lines[1] == "xx,2,3"
    assert [float(v) for v in lines[3].split(",")] == [3.0, 4.0, 5.0]
