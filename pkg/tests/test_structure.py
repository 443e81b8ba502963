import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochnls.field import FieldState, Grid1D, TangentField, UnsupportedOperation, gaussian
from stochnls.integrators import SchemeConfig, step, tangent_step
from stochnls.structure import (GLOBAL_FORM_FACTOR, K, K_MINUS, K_PLUS, M, M_PLUS,
                                max_ms_residual, ms_local_forms, ms_residual, ms_tangent,
                                record_step, symplectic_form, temporal_forms, write_diagnostics)

from conftest import random_values


def test_constant_matrices_split_the_skew_operators():
    assert np.array_equal(K_PLUS + K_MINUS, K)
    assert np.array_equal(M_PLUS - M_PLUS.T, M)
    assert np.array_equal(K_PLUS.T, -K_MINUS)
    assert np.array_equal(M.T, -M) and np.array_equal(K.T, -K)


@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_symplectic_form_is_skew_and_bilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    g = Grid1D(2.0, 16, "periodic")
    x, y, z = (TangentField.random(g, rng) for _ in range(3))
    assert symplectic_form(x, y) == pytest.approx(-symplectic_form(y, x), abs=1e-12)
    lin = TangentField(g, a * x.values + b * z.values)
    assert symplectic_form(lin, y) == pytest.approx(
        a * symplectic_form(x, y) + b * symplectic_form(z, y), abs=1e-10)


def test_local_forms_sum_to_global_form(small_grid, rng):
    xi, eta = TangentField.random(small_grid, rng), TangentField.random(small_grid, rng)
    zx, ze = ms_tangent(xi, xi), ms_tangent(eta, eta)
    total = small_grid.dx * np.sum(temporal_forms(zx.start, ze.start))
    assert total == pytest.approx(GLOBAL_FORM_FACTOR * symplectic_form(xi, eta), rel=1e-12)


def _setup(grid, rng, scheme, dt, dW):
    cfg = SchemeConfig(scheme, dt=dt)
    u = FieldState(grid, random_values(grid, rng, 0.8))
    xi, eta = TangentField.random(grid, rng), TangentField.random(grid, rng)
    u1 = step(u, dW, cfg)
    return cfg, (xi, tangent_step(u, u1, dW, cfg, xi)), (eta, tangent_step(u, u1, dW, cfg, eta))


@pytest.mark.parametrize("scheme", ["midpoint", "lie_splitting"])
def test_symplectic_schemes_preserve_two_form(scheme, small_grid, rng):
    for dW in (0.2, -0.05):
        _, (x0, x1), (e0, e1) = _setup(small_grid, rng, scheme, 2**-6, dW)
        w0, w1 = symplectic_form(x0, e0), symplectic_form(x1, e1)
        assert abs(w1 - w0) <= 1e-9 * max(abs(w0), 1e-300)


def test_euler_maruyama_breaks_two_form(rng):
    g = Grid1D(4.0, 64, "periodic")
    _, (x0, x1), (e0, e1) = _setup(g, rng, "euler_maruyama", 2**-6, 0.01)
    w0, w1 = symplectic_form(x0, e0), symplectic_form(x1, e1)
    assert abs(w1 - w0) > 1e-3 * abs(w0)


def test_midpoint_multi_symplectic_residual(small_grid, rng):
    cfg, (x0, x1), (e0, e1) = _setup(small_grid, rng, "midpoint", 2**-10, 0.03)
    r = ms_residual(x0, x1, e0, e1, 0.03, cfg.dt)
    n_expected = small_grid.n_points - (1 if small_grid.bc == "dirichlet" else 0)
    assert r.shape == (n_expected,)
    assert max_ms_residual(x0, x1, e0, e1, 0.03, cfg.dt) <= 1e-8


def test_euler_maruyama_residual_is_large(rng):
    g = Grid1D.from_spacing(30.0, 0.05)
    cfg, (x0, x1), (e0, e1) = _setup(g, rng, "euler_maruyama", 2**-6, 0.05)
    res = max_ms_residual(x0, x1, e0, e1, 0.05, cfg.dt, "euler_maruyama", negative_control=True)
    assert res > 1e-4


def test_residual_restricted_to_midpoint(rng):
    g = Grid1D(2.0, 16)
    x = TangentField.random(g, rng)
    with pytest.raises(UnsupportedOperation):
        ms_residual(x, x, x, x, 0.1, 0.01, scheme="lie_splitting")
    with pytest.raises(UnsupportedOperation):
        ms_residual(x, x, x, x, 0.1, 0.01, scheme="euler_maruyama")


def test_local_forms_index_checked(rng):
    g = Grid1D(2.0, 16)
    z = ms_tangent(TangentField.random(g, rng), TangentField.random(g, rng))
    omega, kappa = ms_local_forms(z, z, 3)
    assert omega == 0.0 and kappa == 0.0
    with pytest.raises(IndexError):
        ms_local_forms(z, z, 16)


def test_records_and_csv(tmp_path, rng):
    g = Grid1D(2.0, 16)
    u = gaussian(g)
    r0 = record_step(0, u, 123.0)
    assert r0.charge_error == 0.0 and r0.energy is None
    tangents = (TangentField.random(g, rng), TangentField.random(g, rng))
    r1 = record_step(1, u, r0.charge, sigma=1, tangents=tangents, ms_res=1e-13)
    write_diagnostics([r0, r1], tmp_path / "d.csv")
    rows = list(csv.DictReader(open(tmp_path / "d.csv")))
    assert list(rows[0]) == ["n", "t", "Q", "err", "H", "omega", "ms_residual"]
    assert rows[0]["H"] == "" and rows[1]["H"] != ""
    assert float(rows[1]["err"]) == 0.0
