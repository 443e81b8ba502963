"""Time steppers for ``i du + Delta u o dW + |u|^(2 sigma) u dt = 0``.

* ``midpoint``: implicit midpoint in time with the centered difference
  Laplacian; the half-step value is found by Picard iteration, each sweep
  solving the linear implicit part exactly.
* ``lie_splitting``: exact pointwise phase rotation followed by the exact
  linear propagator (or the reverse order).
* ``euler_maruyama``: the explicit, non-symplectic comparator.

Each scheme also has a tangent (linearized) step used by the structure
diagnostics.  Tangents linearize the untruncated schemes only.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .field import FieldState, Grid1D, TangentField, UnsupportedOperation, hs_norm, l2_norm
from .linear_ops import CayleyPair, laplacian_values, semigroup_values

__all__ = [
    "SCHEMES",
    "ConvergenceFailure",
    "TruncationConfig",
    "SchemeConfig",
    "cutoff",
    "truncation_factor",
    "nonlinearity",
    "nonlinearity_jacobian",
    "midpoint_step",
    "splitting_step",
    "euler_maruyama_step",
    "step",
    "midpoint_tangent_step",
    "splitting_tangent_step",
    "euler_maruyama_tangent_step",
    "tangent_step",
]

SCHEMES = ("midpoint", "lie_splitting", "euler_maruyama")
SchemeName = Literal["midpoint", "lie_splitting", "euler_maruyama"]


class ConvergenceFailure(RuntimeError):
    """The fixed-point iteration did not reach its tolerance."""

    def __init__(self, residual: float, iterations: int, step_index: int | None = None):
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index
        where = "" if step_index is None else f" at step {step_index}"
        super().__init__(f"fixed-point iteration stalled{where}: residual {residual:.3e} "
                         f"after {iterations} iterations")


@dataclass(frozen=True)
class TruncationConfig:
    """Smooth cutoff ``theta(||u|| / radius)`` applied to the nonlinearity.

    ``norm=None`` selects the spectral H^1 norm on periodic grids and l2 on
    Dirichlet grids.
    """

    radius: float
    norm: Literal["l2", "h1"] | None = None

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"truncation radius must be positive, got {self.radius}")
        if self.norm not in (None, "l2", "h1"):
            raise ValueError(f"unknown truncation norm {self.norm!r}")


@dataclass(frozen=True)
class SchemeConfig:
    scheme: SchemeName = "midpoint"
    sigma: int = 1
    dt: float = 2.0**-12
    fp_tol: float = 1e-12
    max_iter: int = 100
    truncation: TruncationConfig | None = None
    splitting_order: Literal["nonlinear_first", "linear_first"] = "nonlinear_first"
    # None: "continuous" for the splitting propagator; the midpoint and
    # Euler-Maruyama schemes always use the difference Laplacian.
    linear_symbol: Literal["fd", "continuous"] | None = None
    nonlinear: bool = True

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.sigma not in (1, 2):
            raise ValueError(f"sigma must be 1 or 2, got {self.sigma}")
        if not (np.isfinite(self.dt) and self.dt >= 0):
            raise ValueError(f"dt must be nonnegative, got {self.dt}")
        if not self.fp_tol > 0:
            raise ValueError(f"fp_tol must be positive, got {self.fp_tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.splitting_order not in ("nonlinear_first", "linear_first"):
            raise ValueError(f"unknown splitting order {self.splitting_order!r}")
        if self.linear_symbol not in (None, "fd", "continuous"):
            raise ValueError(f"unknown linear symbol {self.linear_symbol!r}")

    @property
    def symbol(self) -> str:
        return self.linear_symbol or "continuous"

    def with_dt(self, dt: float) -> "SchemeConfig":
        return replace(self, dt=dt)


def _psi(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def cutoff(r):
    """Smooth monotone cutoff: 1 on ``[0, 1]``, 0 on ``[2, inf)``."""
    r = np.asarray(r, dtype=float)
    a, b = _psi(2.0 - r), _psi(r - 1.0)
    out = a / (a + b)
    return out if out.ndim else float(out)


def truncation_factor(values: np.ndarray, grid: Grid1D, trunc: TruncationConfig | None) -> float:
    if trunc is None:
        return 1.0
    norm = trunc.norm or ("h1" if grid.bc == "periodic" else "l2")
    state = FieldState(grid, values)
    r = hs_norm(state, 1.0) if norm == "h1" else l2_norm(state)
    return cutoff(r / trunc.radius)


def _g(values: np.ndarray, sigma: int) -> np.ndarray:
    return np.abs(values) ** (2 * sigma) * values


def _dg(values: np.ndarray, sigma: int, xi: np.ndarray) -> np.ndarray:
    mod2 = values.real**2 + values.imag**2
    return ((sigma + 1) * mod2**sigma * xi
            + sigma * mod2 ** (sigma - 1) * values**2 * np.conj(xi))


def nonlinearity(u: FieldState, sigma: int) -> FieldState:
    """Pointwise ``|u|^(2 sigma) u``."""
    return u.with_values(_g(u.values, sigma))


def nonlinearity_jacobian(u: FieldState, sigma: int, xi: TangentField) -> TangentField:
    """Real-linear derivative ``(s+1)|u|^2s xi + s|u|^(2s-2) u^2 conj(xi)``."""
    if u.grid != xi.grid:
        raise ValueError("grid mismatch between field and tangent")
    return TangentField(xi.grid, _dg(u.values, sigma, xi.values))


def _wnorm(values: np.ndarray, dx: float) -> float:
    return float(np.sqrt(dx * np.sum(values.real**2 + values.imag**2)))


def _degenerate(cfg: SchemeConfig) -> bool:
    return cfg.dt == 0.0


def midpoint_step(u: FieldState, dWn: float, cfg: SchemeConfig) -> tuple[FieldState, int]:
    """One step of the midpoint scheme; returns the new state and the sweep count.

    Iterates ``(I - i dW/2 Delta_h) w = u + i dt/2 g_R(w)`` from ``w = u``.  The
    reported residual is that of the half-step equation, i.e. ``dt/2`` times the
    residual of the difference equation itself.
    """
    if _degenerate(cfg):
        return u.with_values(u.values.copy(), u.time), 0
    grid, dt, base = u.grid, cfg.dt, u.values
    pair = CayleyPair(grid, dWn)
    if not cfg.nonlinear:
        w = pair.implicit(base)
        return u.with_values(grid.enforce_bc(2.0 * w - base), u.time + dt), 1

    def g_r(v):
        return truncation_factor(v, grid, cfg.truncation) * _g(v, cfg.sigma)

    w, gw = base, g_r(base)
    residual = np.inf
    for it in range(1, cfg.max_iter + 1):
        w = pair.implicit(base + 0.5j * dt * gw)
        g_new = g_r(w)
        residual = 0.5 * dt * _wnorm(g_new - gw, grid.dx)
        gw = g_new
        if residual <= cfg.fp_tol:
            return u.with_values(grid.enforce_bc(2.0 * w - base), u.time + dt), it
    raise ConvergenceFailure(residual, cfg.max_iter)


def _rotate(values: np.ndarray, cfg: SchemeConfig, grid: Grid1D) -> np.ndarray:
    if not cfg.nonlinear:
        return values
    theta = truncation_factor(values, grid, cfg.truncation)
    return np.exp(1j * cfg.dt * theta * np.abs(values) ** (2 * cfg.sigma)) * values


def splitting_step(u: FieldState, dWn: float, cfg: SchemeConfig) -> FieldState:
    """Lie splitting: phase rotation by ``dt |u|^(2 sigma)`` and ``exp(i dW Delta)``."""
    if _degenerate(cfg):
        return u.with_values(u.values.copy(), u.time)
    grid = u.grid
    if cfg.splitting_order == "nonlinear_first":
        v = semigroup_values(_rotate(u.values, cfg, grid), grid, dWn, cfg.symbol)
    else:
        v = _rotate(semigroup_values(u.values, grid, dWn, cfg.symbol), cfg, grid)
    return u.with_values(grid.enforce_bc(v), u.time + cfg.dt)


def euler_maruyama_step(u: FieldState, dWn: float, cfg: SchemeConfig) -> FieldState:
    """Explicit ``u + i dW Delta_h u + i dt g(u)``."""
    if _degenerate(cfg):
        return u.with_values(u.values.copy(), u.time)
    grid, v = u.grid, u.values
    new = v + 1j * dWn * laplacian_values(v, grid)
    if cfg.nonlinear:
        new = new + 1j * cfg.dt * truncation_factor(v, grid, cfg.truncation) * _g(v, cfg.sigma)
    return u.with_values(grid.enforce_bc(new), u.time + cfg.dt)


def step(u: FieldState, dWn: float, cfg: SchemeConfig) -> FieldState:
    if cfg.scheme == "midpoint":
        return midpoint_step(u, dWn, cfg)[0]
    if cfg.scheme == "lie_splitting":
        return splitting_step(u, dWn, cfg)
    return euler_maruyama_step(u, dWn, cfg)


def _require_untruncated(cfg: SchemeConfig) -> None:
    if cfg.truncation is not None:
        raise UnsupportedOperation("tangent steps linearize the untruncated scheme only")


def midpoint_tangent_step(u: FieldState, u_next: FieldState, dWn: float, cfg: SchemeConfig,
                          xi: TangentField) -> TangentField:
    """Linearized midpoint step about the half-step value ``(u + u_next)/2``."""
    _require_untruncated(cfg)
    if _degenerate(cfg):
        return TangentField(xi.grid, xi.values.copy())
    grid, dt, x0 = xi.grid, cfg.dt, xi.values
    pair = CayleyPair(grid, dWn)
    if not cfg.nonlinear:
        eta = pair.implicit(x0)
        return TangentField(grid, grid.enforce_bc(2.0 * eta - x0))
    w = 0.5 * (u.values + u_next.values)
    scale = max(_wnorm(x0, grid.dx), np.finfo(float).tiny)
    eta, d_eta = x0, _dg(w, cfg.sigma, x0)
    residual = np.inf
    for _ in range(cfg.max_iter):
        eta = pair.implicit(x0 + 0.5j * dt * d_eta)
        d_new = _dg(w, cfg.sigma, eta)
        residual = 0.5 * dt * _wnorm(d_new - d_eta, grid.dx) / scale
        d_eta = d_new
        if residual <= cfg.fp_tol:
            return TangentField(grid, grid.enforce_bc(2.0 * eta - x0))
    raise ConvergenceFailure(residual, cfg.max_iter)


def _rotate_tangent(values: np.ndarray, xi: np.ndarray, cfg: SchemeConfig) -> np.ndarray:
    if not cfg.nonlinear:
        return xi
    s = cfg.sigma
    mod2 = values.real**2 + values.imag**2
    d_mod = s * mod2 ** (s - 1) * 2.0 * np.real(np.conj(values) * xi)
    return np.exp(1j * cfg.dt * mod2**s) * (xi + 1j * cfg.dt * d_mod * values)


def splitting_tangent_step(u: FieldState, dWn: float, cfg: SchemeConfig,
                           xi: TangentField) -> TangentField:
    _require_untruncated(cfg)
    if _degenerate(cfg):
        return TangentField(xi.grid, xi.values.copy())
    grid = xi.grid
    if cfg.splitting_order == "nonlinear_first":
        rotated = _rotate_tangent(u.values, xi.values, cfg)
        out = semigroup_values(rotated, grid, dWn, cfg.symbol)
    else:
        v = semigroup_values(u.values, grid, dWn, cfg.symbol)
        out = _rotate_tangent(v, semigroup_values(xi.values, grid, dWn, cfg.symbol), cfg)
    return TangentField(grid, grid.enforce_bc(out))


def euler_maruyama_tangent_step(u: FieldState, dWn: float, cfg: SchemeConfig,
                                xi: TangentField) -> TangentField:
    _require_untruncated(cfg)
    if _degenerate(cfg):
        return TangentField(xi.grid, xi.values.copy())
    grid, x0 = xi.grid, xi.values
    out = x0 + 1j * dWn * laplacian_values(x0, grid)
    if cfg.nonlinear:
        out = out + 1j * cfg.dt * _dg(u.values, cfg.sigma, x0)
    return TangentField(grid, grid.enforce_bc(out))


def tangent_step(u: FieldState, u_next: FieldState, dWn: float, cfg: SchemeConfig,
                 xi: TangentField) -> TangentField:
    if cfg.scheme == "midpoint":
        return midpoint_tangent_step(u, u_next, dWn, cfg, xi)
    if cfg.scheme == "lie_splitting":
        return splitting_tangent_step(u, dWn, cfg, xi)
    return euler_maruyama_tangent_step(u, dWn, cfg, xi)
