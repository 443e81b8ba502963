"""Grids, field states and the discrete functionals (charge, energy, norms).

Storage convention, shared by both boundary conditions: a grid with
``n_points = N_x`` stores the nodes ``x_j = -L + j*dx`` for ``j = 0..N_x-1``.
Under ``periodic`` the node ``x_{N_x} = L`` is identified with ``x_0``.  Under
``dirichlet`` the stored node ``x_0 = -L`` is a boundary node held at zero and
``x_{N_x} = L`` is an implicit zero ghost, so the unknowns are ``j = 1..N_x-1``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

__all__ = [
    "Grid1D",
    "FieldState",
    "TangentField",
    "Functionals",
    "UnsupportedOperation",
    "gaussian",
    "charge",
    "energy",
    "l2_norm",
    "l2_error",
    "hs_norm",
    "forward_difference",
    "write_snapshots",
]

BoundaryKind = Literal["dirichlet", "periodic"]


class UnsupportedOperation(ValueError):
    """Raised when an operation is not defined for the given configuration."""


@dataclass(frozen=True)
class Grid1D:
    half_width: float
    n_points: int
    bc: BoundaryKind = "dirichlet"

    def __post_init__(self) -> None:
        if self.bc not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if int(self.n_points) != self.n_points or self.n_points < 4:
            raise ValueError(f"n_points must be an integer >= 4, got {self.n_points}")
        if not (np.isfinite(self.half_width) and self.half_width > 0):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "half_width", float(self.half_width))

    @classmethod
    def from_spacing(cls, half_width: float, dx: float, bc: BoundaryKind = "dirichlet") -> "Grid1D":
        n = 2.0 * half_width / dx
        if not np.isclose(n, round(n), rtol=0, atol=1e-9):
            raise ValueError(f"dx={dx} does not divide the interval of width {2 * half_width}")
        return cls(half_width, int(round(n)), bc)

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n_points) * self.dx

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers of the discrete Fourier modes (periodic grids)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_points, dtype=np.complex128)

    def enforce_bc(self, values: np.ndarray) -> np.ndarray:
        if self.bc == "dirichlet":
            values[0] = 0.0
        return values


@dataclass(frozen=True, eq=False)
class FieldState:
    """Complex amplitudes ``u_j`` at time ``t``; ``p``/``q`` are views."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"values must have shape ({self.grid.n_points},), got {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid1D, func, time: float = 0.0) -> "FieldState":
        values = np.asarray(func(grid.x), dtype=np.complex128).copy()
        return cls(grid, grid.enforce_bc(values), time)

    @property
    def p(self) -> np.ndarray:
        return self.values.real

    @property
    def q(self) -> np.ndarray:
        return self.values.imag

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def with_values(self, values: np.ndarray, time: float | None = None) -> "FieldState":
        return FieldState(self.grid, values, self.time if time is None else time)


@dataclass(frozen=True, eq=False)
class TangentField:
    """A perturbation ``(xi_p, xi_q)`` stored as one complex array.

    Tangent maps act real-linearly on it: ``D(u)[a*xi] = a*D(u)[xi]`` only for
    real ``a``.
    """

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"values must have shape ({self.grid.n_points},), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> np.ndarray:
        return self.values.real

    @property
    def q(self) -> np.ndarray:
        return self.values.imag

    @classmethod
    def random(cls, grid: Grid1D, rng: np.random.Generator) -> "TangentField":
        v = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
        return cls(grid, grid.enforce_bc(v))


@dataclass(frozen=True)
class Functionals:
    charge: float
    energy: float
    kinetic: float
    potential: float


def gaussian(grid: Grid1D, a: float = 3.0) -> FieldState:
    """Pointwise samples of ``exp(-a x^2)``."""
    return FieldState.from_function(grid, lambda x: np.exp(-a * x**2))


def _check_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


def charge(f: FieldState) -> float:
    """Rectangle-rule charge ``dx * sum |u_j|^2``."""
    return float(f.grid.dx * np.sum(np.abs(f.values) ** 2))


def l2_norm(f: FieldState | TangentField) -> float:
    return float(np.sqrt(f.grid.dx * np.sum(np.abs(f.values) ** 2)))


def forward_difference(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """``(u_{j+1} - u_j) / dx`` with the periodic wrap or the zero ghost node."""
    nxt = np.empty_like(values)
    nxt[:-1] = values[1:]
    nxt[-1] = values[0] if grid.bc == "periodic" else 0.0
    return (nxt - values) / grid.dx


def energy(f: FieldState, sigma: int) -> Functionals:
    """Charge, energy and the two Hamiltonians of the discrete field.

    ``kinetic = -1/2 dx sum |D+ u|^2`` and ``potential = dx/(2s+2) sum |u|^(2s+2)``,
    so that ``energy == -kinetic - potential``.
    """
    if sigma not in (1, 2):
        raise ValueError(f"sigma must be 1 or 2, got {sigma}")
    dx = f.grid.dx
    grad = forward_difference(f.values, f.grid)
    kinetic = -0.5 * dx * float(np.sum(np.abs(grad) ** 2))
    potential = dx / (2 * sigma + 2) * float(np.sum(np.abs(f.values) ** (2 * sigma + 2)))
    return Functionals(charge=charge(f), energy=-kinetic - potential,
                       kinetic=kinetic, potential=potential)


def l2_error(a: FieldState, b: FieldState) -> float:
    _check_same_grid(a, b)
    return float(np.sqrt(a.grid.dx * np.sum(np.abs(a.values - b.values) ** 2)))


def hs_norm(f: FieldState, s: float) -> float:
    """Spectral Sobolev norm on the periodic grid, normalized so ``s=0`` is l2."""
    if f.grid.bc != "periodic":
        raise UnsupportedOperation("the spectral H^s norm is defined on periodic grids only")
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s}")
    n = f.grid.n_points
    coeff = np.fft.fft(f.values) * np.sqrt(f.grid.dx / n)
    weight = (1.0 + f.grid.wavenumbers**2) ** s
    return float(np.sqrt(np.sum(weight * np.abs(coeff) ** 2)))


def write_snapshots(states, target: str | Path) -> None:
    """Write field snapshots as CSV rows ``(t, x, re, im, abs)``."""
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "re", "im", "abs"])
        for st in states:
            for xj, uj in zip(st.grid.x, st.values):
                writer.writerow([repr(float(st.time)), repr(float(xj)), repr(float(uj.real)),
                                 repr(float(uj.imag)), repr(float(abs(uj)))])
