"""Acceptance gate: one group of tests per criterion, summarized at the end of the run.

Run directly with ``pytest tests/test_acceptance.py -v``.  The full-scale
convergence study takes several minutes on one core.
"""
import json
import time

import numpy as np
import pytest
import scipy.linalg as sla

from stochnls.cli import main, parse_config
from stochnls.field import FieldState, Grid1D, TangentField, gaussian, l2_error, l2_norm
from stochnls.harness import (ConvergenceSpec, DiagnosticOptions, conservation_study,
                              convergence_study, run_trajectory)
from stochnls.integrators import SchemeConfig, midpoint_step, step, tangent_step
from stochnls.linear_ops import (CayleyPair, cayley_step, free_gaussian, kernel_oracle,
                                 semigroup_step, thomas_solve)
from stochnls.path import sample_path
from stochnls.structure import symplectic_form

from oracles import dense_midpoint_step

DEFAULTS = parse_config("")
SCHEMES = (SchemeConfig("midpoint"), SchemeConfig("lie_splitting"))


def default_grid(scheme):
    return DEFAULTS.grid_for(scheme)


def _study(half_width, dx, n_ref, samples):
    cfg = parse_config(json.dumps({"grid": {"half_width": half_width, "dx": dx}}))
    grids = {n: cfg.grid_for(n) for n in ("midpoint", "lie_splitting")}
    spec = ConvergenceSpec(T=0.5, n_ref=n_ref, factors=tuple(2**p for p in range(3, 8)),
                           samples=samples, schemes=SCHEMES)
    start = time.perf_counter()
    report = convergence_study(spec, grids, gaussian, seed=0)
    return report, time.perf_counter() - start


@pytest.fixture(scope="module")
def full_study():
    return _study(30.0, 0.05, 2**15, 20)


@pytest.fixture(scope="module")
def ci_study():
    return _study(10.0, 0.2, 2**11, 8)


def _describe(report, elapsed, name):
    s = report.schemes[name]
    rms = ", ".join(f"{e:.3e}" for e in s.rms)
    return f"{name}: slope {s.slope:.3f}, rms [{rms}], {elapsed:.0f} s"


C1 = pytest.mark.criterion("1", "convergence order: log-log slopes near 1")


@C1
@pytest.mark.parametrize("scheme", ["midpoint", "lie_splitting"])
def test_c1_full_scale_slope(full_study, scheme, record_property):
    report, elapsed = full_study
    record_property("detail", "full: " + _describe(report, elapsed, scheme))
    assert 0.85 <= report.schemes[scheme].slope <= 1.15


@C1
@pytest.mark.parametrize("scheme", ["midpoint", "lie_splitting"])
def test_c1_ci_scale_slope(ci_study, scheme, record_property):
    report, elapsed = ci_study
    record_property("detail", "ci: " + _describe(report, elapsed, scheme))
    assert elapsed <= 120.0
    assert 0.8 <= report.schemes[scheme].slope <= 1.2


@pytest.mark.criterion("2", "charge conservation over 4096 steps; Euler-Maruyama far worse")
def test_c2_charge_conservation(record_property):
    path = sample_path(DEFAULTS.seed, 4096 * 2**-12, 4096)
    cfgs = [SchemeConfig(n, dt=path.dt) for n in ("midpoint", "lie_splitting", "euler_maruyama")]
    with np.errstate(over="ignore", invalid="ignore"):
        series = conservation_study(cfgs, default_grid, gaussian, path)
    q0 = series["midpoint"].records[0].charge
    mid, split = series["midpoint"].max_abs_error, series["lie_splitting"].max_abs_error
    em = series["euler_maruyama"].max_abs_error
    record_property("detail", f"max|err|: midpoint {mid:.2e}, splitting {split:.2e}, "
                              f"Euler-Maruyama {em:.2e} (diverged at step "
                              f"{series['euler_maruyama'].diverged_at}); Q(0) = {q0:.6f}")
    assert mid <= 1e-9 * q0 and split <= 1e-9 * q0
    assert em >= 1e3 * max(mid, split)


@pytest.mark.criterion("3", "symplectic 2-form invariance of the tangent maps")
def test_c3_two_form_invariance(record_property):
    rng = np.random.default_rng(3)
    worst = {"midpoint": 0.0, "lie_splitting": 0.0}
    dt = 2**-10
    for _ in range(50):
        for name in worst:
            grid = default_grid(name)
            base = gaussian(grid).values
            noise = 0.3 * (rng.standard_normal(grid.n_points)
                           + 1j * rng.standard_normal(grid.n_points))
            u = FieldState(grid, grid.enforce_bc(base * (1 + noise)))
            xi, eta = TangentField.random(grid, rng), TangentField.random(grid, rng)
            dW = float(rng.standard_normal() * np.sqrt(dt))
            cfg = SchemeConfig(name, dt=dt)
            u1 = step(u, dW, cfg)
            w0 = symplectic_form(xi, eta)
            w1 = symplectic_form(tangent_step(u, u1, dW, cfg, xi),
                                 tangent_step(u, u1, dW, cfg, eta))
            worst[name] = max(worst[name], abs(w1 - w0) / abs(w0))
    record_property("detail", f"max relative change: midpoint {worst['midpoint']:.1e}, "
                              f"splitting {worst['lie_splitting']:.1e}")
    assert max(worst.values()) <= 1e-9


def _ms_run(scheme, dt, steps):
    grid = default_grid(scheme)
    rng = np.random.default_rng(4)
    path = sample_path(DEFAULTS.seed, steps * dt, steps)
    tangents = (TangentField.random(grid, rng), TangentField.random(grid, rng))
    opts = DiagnosticOptions(stride=1, energy=False, tangents=tangents, ms_residual=True)
    cfg = SchemeConfig(scheme, dt=dt, fp_tol=1e-12)
    with np.errstate(over="ignore", invalid="ignore"):
        _, records = run_trajectory(cfg, grid, gaussian(grid), path, opts)
    return max(r.ms_residual for r in records[1:])


@pytest.mark.criterion("4", "multi-symplectic residual; Euler-Maruyama negative control")
def test_c4_multisymplectic_residual(record_property):
    mid = _ms_run("midpoint", 2**-10, 8)
    em = _ms_run("euler_maruyama", 2**-6, 1)
    record_property("detail", f"midpoint {mid:.2e} (bound 1e-8); Euler-Maruyama {em:.2e} "
                              f"(needs > 1e-4)")
    assert mid <= 1e-8
    assert em > 1e-4


@pytest.mark.criterion("5", "exact linear propagator vs closed form and kernel quadrature")
def test_c5_linear_propagator(record_property):
    grid = Grid1D.from_spacing(30.0, 0.05, "periodic")
    worst = 0.0
    for tau in np.linspace(-0.2, 0.2, 9):
        u = semigroup_step(gaussian(grid), tau, "continuous")
        worst = max(worst, l2_error(u, FieldState(grid, free_gaussian(grid.x, 3.0, tau))))
    small = Grid1D.from_spacing(4.0, 0.05, "periodic")
    quad = kernel_oracle(gaussian(small), 0.1)
    kern = l2_error(quad, semigroup_step(gaussian(small), 0.1))
    record_property("detail", f"closed form {worst:.1e}; kernel quadrature {kern:.1e}")
    assert worst <= 1e-8
    assert kern <= 1e-3


@pytest.mark.criterion("6", "unitarity and tridiagonal solver accuracy")
def test_c6_unitarity_and_thomas(record_property):
    rng = np.random.default_rng(6)
    worst_u = 0.0
    for k in range(100):
        grid = default_grid("midpoint" if k % 2 else "lie_splitting")
        v = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
        u = FieldState(grid, grid.enforce_bc(v))
        dW = float(rng.standard_normal() * 0.1)
        n0 = l2_norm(u)
        for out in (cayley_step(CayleyPair(grid, dW), u), semigroup_step(u, dW, "fd"),
                    semigroup_step(u, dW, "continuous")):
            worst_u = max(worst_u, abs(l2_norm(out) - n0) / n0)
    worst_t = 0.0
    for n in range(1, 9):
        for _ in range(25):
            off = 1j * rng.uniform(0.1, 5.0)
            diag = np.full(n, 1 - 2 * off)
            lower = upper = np.full(n - 1, off)
            rhs = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            A = np.diag(diag) + np.diag(lower, -1) + np.diag(upper, 1)
            ref = sla.lu_solve(sla.lu_factor(A), rhs)
            got = thomas_solve(lower, diag, upper, rhs)
            worst_t = max(worst_t, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    record_property("detail", f"norm drift {worst_u:.1e}; Thomas vs LU {worst_t:.1e}")
    assert worst_u <= 1e-12
    assert worst_t <= 1e-12


@pytest.mark.criterion("7", "midpoint step vs brute-force dense solve on 6 nodes")
def test_c7_dense_oracle(record_property):
    rng = np.random.default_rng(7)
    grid = Grid1D(1.5, 6, "dirichlet")
    worst = 0.0
    for _ in range(10):
        v = 0.8 * (rng.standard_normal(6) + 1j * rng.standard_normal(6))
        u = FieldState(grid, grid.enforce_bc(v))
        dt = 2**-6
        dW = float(rng.standard_normal() * np.sqrt(dt))
        cfg = SchemeConfig("midpoint", dt=dt, fp_tol=1e-15, max_iter=200)
        got = midpoint_step(u, dW, cfg)[0].values
        ref = dense_midpoint_step(u.values[1:], grid.dx, dt, dW)
        worst = max(worst, float(np.max(np.abs(got[1:] - ref))))
    record_property("detail", f"max deviation {worst:.1e}")
    assert worst <= 1e-11


SMALL = {"T": 0.125, "grid": {"half_width": 6.0, "dx": 0.1},
         "convergence": {"ref_steps": 512, "samples": 3},
         "conserve": {"steps": 256}, "msymp": {"steps": 4}}
OUTPUTS = {"simulate": ["profile.csv", "diagnostics.csv"], "conserve": ["charge.csv"],
           "converge": ["convergence.csv", "tail.csv"], "msymp-check": ["diagnostics.csv"]}


@pytest.mark.criterion("8", "repeat runs from a manifest are byte-identical")
@pytest.mark.parametrize("command", list(OUTPUTS))
def test_c8_determinism(tmp_path, command, record_property):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    first, second = tmp_path / "a", tmp_path / "b"
    assert main([command, "--config", str(cfg), "--out", str(first)]) == 0
    assert main([command, "--config", str(first / "manifest.json"), "--out", str(second)]) == 0
    for name in OUTPUTS[command]:
        assert (first / name).read_bytes() == (second / name).read_bytes()
    record_property("detail", f"{command}: {', '.join(OUTPUTS[command])} identical")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
