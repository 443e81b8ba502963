"""Linear building blocks: discrete Laplacian, Cayley operators, exact propagator.

Two Laplacian symbols are available wherever a spectral basis is used:

``"fd"``
    eigenvalues of the centered second difference, ``-4/dx^2 sin^2(k dx/2)``;
``"continuous"``
    the symbol ``-k^2`` of the continuous Laplacian on the same basis.

The spectral basis is the discrete Fourier basis on periodic grids and the
discrete sine basis of the interior nodes on Dirichlet grids (the sine basis
diagonalizes the Dirichlet difference matrix exactly).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.fft as sfft
from numba import njit

from .field import FieldState, Grid1D, l2_norm

__all__ = [
    "DiscreteLaplacian",
    "CayleyPair",
    "apply_laplacian",
    "laplacian_values",
    "spectral_eigenvalues",
    "solve_implicit",
    "cayley_step",
    "semigroup_step",
    "semigroup_values",
    "kernel_oracle",
    "free_gaussian",
    "thomas_solve",
]

Symbol = Literal["fd", "continuous"]
_RESIDUAL_GUARD = 1e-12


@dataclass(frozen=True)
class DiscreteLaplacian:
    grid: Grid1D

    @property
    def representation(self) -> str:
        return "tridiagonal-dirichlet" if self.grid.bc == "dirichlet" else "spectral-periodic"

    def matrix(self) -> np.ndarray:
        """Dense matrix on the stored nodes (boundary row/column zero for Dirichlet)."""
        n, h2 = self.grid.n_points, self.grid.dx**2
        A = (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1)
             + np.diag(np.ones(n - 1), -1))
        if self.grid.bc == "periodic":
            A[0, -1] = A[-1, 0] = 1.0
        else:
            A[0, :] = 0.0
            A[:, 0] = 0.0
        return A / h2


def laplacian_values(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    h2 = grid.dx**2
    if grid.bc == "periodic":
        return (np.roll(values, -1) - 2.0 * values + np.roll(values, 1)) / h2
    out = np.zeros_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / h2
    out[-1] = (-2.0 * values[-1] + values[-2]) / h2
    return out


def apply_laplacian(L: DiscreteLaplacian, f: FieldState) -> FieldState:
    if L.grid != f.grid:
        raise ValueError("grid mismatch between operator and field")
    return f.with_values(laplacian_values(f.values, f.grid))


def spectral_eigenvalues(grid: Grid1D, symbol: Symbol = "fd") -> np.ndarray:
    """Laplacian eigenvalues in FFT order (periodic) or sine-mode order (Dirichlet)."""
    if symbol not in ("fd", "continuous"):
        raise ValueError(f"unknown symbol {symbol!r}")
    dx = grid.dx
    if grid.bc == "periodic":
        k = grid.wavenumbers
    else:
        k = np.pi * np.arange(1, grid.n_points) / (2.0 * grid.half_width)
    if symbol == "continuous":
        return -(k**2)
    return -4.0 / dx**2 * np.sin(0.5 * k * dx) ** 2


def _to_spectral(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    if grid.bc == "periodic":
        return np.fft.fft(values)
    return sfft.dst(values[1:], type=1, norm="ortho")


def _from_spectral(coeff: np.ndarray, grid: Grid1D) -> np.ndarray:
    if grid.bc == "periodic":
        return np.fft.ifft(coeff)
    out = np.zeros(grid.n_points, dtype=np.complex128)
    out[1:] = sfft.dst(coeff, type=1, norm="ortho")
    return out


def _spectral_multiply(values: np.ndarray, grid: Grid1D, multiplier: np.ndarray) -> np.ndarray:
    return _from_spectral(multiplier * _to_spectral(values, grid), grid)


@njit(cache=True)
def _thomas_factor(lower, diag, upper):
    n = diag.shape[0]
    cp = np.empty(n, dtype=np.complex128)
    denom = np.empty(n, dtype=np.complex128)
    denom[0] = diag[0]
    cp[0] = upper[0] / diag[0] if n > 1 else 0.0
    for i in range(1, n):
        denom[i] = diag[i] - lower[i - 1] * cp[i - 1]
        if i < n - 1:
            cp[i] = upper[i] / denom[i]
    return cp, denom


@njit(cache=True)
def _thomas_sweep(lower, cp, denom, rhs):
    n = rhs.shape[0]
    x = np.empty(n, dtype=np.complex128)
    x[0] = rhs[0] / denom[0]
    for i in range(1, n):
        x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / denom[i]
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a complex tridiagonal system by elimination without pivoting.

    ``lower`` and ``upper`` have length ``n-1``.  Intended for diagonally
    dominant matrices; no pivoting is performed.
    """
    lower = np.ascontiguousarray(lower, dtype=np.complex128)
    diag = np.ascontiguousarray(diag, dtype=np.complex128)
    upper = np.ascontiguousarray(upper, dtype=np.complex128)
    cp, denom = _thomas_factor(lower, diag, upper)
    return _thomas_sweep(lower, cp, denom, np.ascontiguousarray(rhs, dtype=np.complex128))


class _ImplicitSolver:
    """Factorized ``(I - alpha * Delta_h)`` on a fixed grid."""

    def __init__(self, grid: Grid1D, alpha: complex):
        self.grid = grid
        self.alpha = complex(alpha)
        if grid.bc == "periodic":
            self._inv_symbol = 1.0 / (1.0 - self.alpha * spectral_eigenvalues(grid, "fd"))
        else:
            m = grid.n_points - 1
            off = -self.alpha / grid.dx**2
            self._lower = np.full(m - 1, off, dtype=np.complex128)
            diag = np.full(m, 1.0 + 2.0 * self.alpha / grid.dx**2, dtype=np.complex128)
            self._cp, self._denom = _thomas_factor(self._lower, diag, self._lower)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.grid.bc == "periodic":
            return np.fft.ifft(self._inv_symbol * np.fft.fft(rhs))
        out = np.zeros(self.grid.n_points, dtype=np.complex128)
        out[1:] = _thomas_sweep(self._lower, self._cp, self._denom,
                                np.ascontiguousarray(rhs[1:]))
        return out


def solve_implicit(L: DiscreteLaplacian, rhs: FieldState, alpha: complex) -> FieldState:
    """Return ``v`` with ``(I - alpha*Delta_h) v = rhs``.

    For imaginary ``alpha`` the Dirichlet matrix is strictly diagonally dominant
    in modulus (``|1 + 2 alpha/dx^2| > 2|alpha|/dx^2``), so elimination without
    pivoting is stable; the residual is still checked.
    """
    if L.grid != rhs.grid:
        raise ValueError("grid mismatch between operator and field")
    if not np.isfinite(alpha) or not rhs.is_finite():
        raise ValueError("alpha and rhs must be finite")
    v = _ImplicitSolver(rhs.grid, alpha).solve(rhs.values)
    resid = v - alpha * laplacian_values(v, rhs.grid) - rhs.grid.enforce_bc(rhs.values.copy())
    scale = max(l2_norm(rhs), np.finfo(float).tiny)
    res_norm = np.sqrt(rhs.grid.dx * np.sum(np.abs(resid) ** 2))
    if res_norm > _RESIDUAL_GUARD * scale * max(1.0, abs(alpha) / rhs.grid.dx**2):
        raise ArithmeticError(f"tridiagonal solve residual {res_norm:.3e} exceeds guard")
    return rhs.with_values(v)


class CayleyPair:
    """``T = (I - i dW/2 Delta_h)^-1`` and ``S = T (I + i dW/2 Delta_h)`` for one step."""

    def __init__(self, grid: Grid1D, dWn: float):
        if not np.isfinite(dWn):
            raise ValueError("dWn must be finite")
        self.grid = grid
        self.half_increment = 0.5 * float(dWn)
        self._solver = _ImplicitSolver(grid, 1j * self.half_increment)

    def implicit(self, values: np.ndarray) -> np.ndarray:
        return self._solver.solve(values)

    def propagate(self, values: np.ndarray) -> np.ndarray:
        explicit = values + 1j * self.half_increment * laplacian_values(values, self.grid)
        return self._solver.solve(explicit)


def cayley_step(pair: CayleyPair, f: FieldState) -> FieldState:
    if pair.grid != f.grid:
        raise ValueError("grid mismatch between operator and field")
    return f.with_values(pair.propagate(f.values))


def semigroup_values(values: np.ndarray, grid: Grid1D, tau: float,
                     symbol: Symbol = "continuous") -> np.ndarray:
    if tau == 0.0:
        return values.copy()
    return _spectral_multiply(values, grid, np.exp(1j * tau * spectral_eigenvalues(grid, symbol)))


def semigroup_step(f: FieldState, tau: float, symbol: Symbol = "continuous") -> FieldState:
    """Apply ``exp(i tau Delta)`` exactly in the spectral basis of the grid."""
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    return f.with_values(semigroup_values(f.values, f.grid, float(tau), symbol))


def free_gaussian(x: np.ndarray, a: float, tau: float) -> np.ndarray:
    """Closed-form ``exp(i tau d_xx) exp(-a x^2)`` on the whole line."""
    z = 1.0 + 4j * a * tau
    return np.exp(-a * x**2 / z) / np.sqrt(z)


def kernel_oracle(phi: FieldState, tau: float) -> FieldState:
    """Direct rectangle-rule quadrature of the free Schroedinger kernel.

    Cost is quadratic in the number of nodes; the integrand must be resolved,
    i.e. ``|x - y| * dx / (2|tau|)`` should stay below ``pi`` over the support.
    """
    if tau == 0.0:
        raise ValueError("tau = 0 is the identity and has no kernel representation")
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    x = phi.grid.x
    diff = x[:, None] - x[None, :]
    kernel = np.exp(1j * diff**2 / (4.0 * tau)) / np.sqrt(4j * np.pi * tau + 0j)
    return phi.with_values(phi.grid.dx * (kernel @ phi.values))
