"""Structural observables: charge drift, symplectic 2-form, multi-symplectic residual.

Differential 2-forms are evaluated on explicit pairs of tangent fields.  For a
constant matrix ``A`` and tangent z-vectors ``a, b`` at nodes ``i, j``::

    (dz_i ^ A dz_j)(xi, eta) = xi_i^T A eta_j - eta_i^T A xi_j

With ``z = (p, q, v, w)`` and the forward differences ``v = D+ p``,
``w = D+ q`` of the half-step tangents, the midpoint full discretization
satisfies, node by node,

    (omega_j^{n+1} - omega_j^n)/dt + (kappa_{j+1} - kappa_j)/dx * dW/dt = 0

with ``omega_j = dz_j ^ M+ dz_j`` and ``kappa_j = dz_{j-1} ^ K- dz_j``.
Summing ``omega_j`` over nodes gives ``-1`` times the symplectic form
``dx sum (xi_p eta_q - xi_q eta_p)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import FieldState, Grid1D, TangentField, UnsupportedOperation, charge, energy, \
    forward_difference

__all__ = [
    "M",
    "K",
    "K_PLUS",
    "K_MINUS",
    "M_PLUS",
    "GLOBAL_FORM_FACTOR",
    "MSTangent",
    "DiagnosticsRecord",
    "symplectic_form",
    "ms_tangent",
    "temporal_forms",
    "spatial_forms",
    "ms_local_forms",
    "ms_residual",
    "max_ms_residual",
    "record_step",
    "write_diagnostics",
]

M = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
K = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]], dtype=float)
K_PLUS = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
K_MINUS = np.array([[0, 0, 0, 0], [0, 0, 0, 0], [-1, 0, 0, 0], [0, -1, 0, 0]], dtype=float)
M_PLUS = np.array([[0, -1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)

GLOBAL_FORM_FACTOR = -1.0


def symplectic_form(xi: TangentField, eta: TangentField) -> float:
    """``dx * sum_j (xi_p eta_q - xi_q eta_p)``."""
    if xi.grid != eta.grid:
        raise ValueError("grid mismatch between tangents")
    return float(xi.grid.dx * np.sum(xi.p * eta.q - xi.q * eta.p))


@dataclass(frozen=True, eq=False)
class MSTangent:
    """Tangent z-vectors, shape ``(n_points, 4)``, at levels n, n+1/2 and n+1."""

    grid: Grid1D
    start: np.ndarray
    half: np.ndarray
    end: np.ndarray


def _zvec(pq: np.ndarray, half: np.ndarray, grid: Grid1D) -> np.ndarray:
    d = forward_difference(half, grid)
    return np.column_stack([pq.real, pq.imag, d.real, d.imag])


def ms_tangent(xi_n: TangentField, xi_next: TangentField) -> MSTangent:
    if xi_n.grid != xi_next.grid:
        raise ValueError("grid mismatch between tangents")
    grid = xi_n.grid
    half = 0.5 * (xi_n.values + xi_next.values)
    return MSTangent(grid, _zvec(xi_n.values, half, grid), _zvec(half, half, grid),
                     _zvec(xi_next.values, half, grid))


def _pair_form(a_left, b_left, a_right, b_right, A) -> np.ndarray:
    return (np.einsum("ja,ab,jb->j", a_left, A, b_right)
            - np.einsum("ja,ab,jb->j", b_left, A, a_right))


def temporal_forms(xi_z: np.ndarray, eta_z: np.ndarray) -> np.ndarray:
    """``omega_j`` for every node."""
    return _pair_form(xi_z, eta_z, xi_z, eta_z, M_PLUS)


def _shift_left_neighbour(z: np.ndarray, grid: Grid1D) -> np.ndarray:
    prev = np.empty_like(z)
    prev[1:] = z[:-1]
    prev[0] = z[-1] if grid.bc == "periodic" else 0.0
    return prev


def spatial_forms(xi_half: np.ndarray, eta_half: np.ndarray, grid: Grid1D) -> np.ndarray:
    """``kappa_j`` for ``j = 0..N_x``; the last entry couples to the ghost node."""
    xp, ep = _shift_left_neighbour(xi_half, grid), _shift_left_neighbour(eta_half, grid)
    kappa = _pair_form(xp, ep, xi_half, eta_half, K_MINUS)
    if grid.bc == "periodic":
        last = kappa[0]
    else:
        # z_{N_x} has zero p, q; only those components enter on the right.
        last = 0.0
    return np.append(kappa, last)


def ms_local_forms(xi: MSTangent, eta: MSTangent, j: int) -> tuple[float, float]:
    """``(omega_j^n, kappa_j^{n+1/2})`` at node ``j``."""
    n = xi.grid.n_points
    if not 0 <= j < n:
        raise IndexError(f"node index {j} outside 0..{n - 1}")
    omega = temporal_forms(xi.start[j:j + 1], eta.start[j:j + 1])[0]
    kappa = spatial_forms(xi.half, eta.half, xi.grid)[j]
    return float(omega), float(kappa)


def ms_residual(xi_n: TangentField, xi_next: TangentField, eta_n: TangentField,
                eta_next: TangentField, dWn: float, dt: float, scheme: str = "midpoint",
                negative_control: bool = False) -> np.ndarray:
    """Per-node residual of the discrete multi-symplectic law over one step.

    Interior nodes only: ``1..N_x-1`` on Dirichlet grids, all nodes when
    periodic.  ``negative_control=True`` admits the Euler-Maruyama scheme.
    """
    if scheme != "midpoint" and not (negative_control and scheme == "euler_maruyama"):
        raise UnsupportedOperation(
            f"the multi-symplectic law is a property of the midpoint scheme, not {scheme!r}")
    xi, eta = ms_tangent(xi_n, xi_next), ms_tangent(eta_n, eta_next)
    grid = xi.grid
    if eta.grid != grid:
        raise ValueError("grid mismatch between tangents")
    d_omega = (temporal_forms(xi.end, eta.end) - temporal_forms(xi.start, eta.start)) / dt
    kappa = spatial_forms(xi.half, eta.half, grid)
    r = d_omega + (kappa[1:] - kappa[:-1]) / grid.dx * (dWn / dt)
    return r[1:] if grid.bc == "dirichlet" else r


def max_ms_residual(xi_n, xi_next, eta_n, eta_next, dWn, dt, scheme="midpoint",
                    negative_control=False) -> float:
    """Max residual normalized by ``max|xi^n| * max|eta^n|``."""
    r = ms_residual(xi_n, xi_next, eta_n, eta_next, dWn, dt, scheme, negative_control)
    scale = np.max(np.abs(xi_n.values)) * np.max(np.abs(eta_n.values))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(r)) / scale)


@dataclass(frozen=True)
class DiagnosticsRecord:
    n: int
    t: float
    charge: float
    charge_error: float
    energy: float | None = None
    omega: float | None = None
    ms_residual: float | None = None


def record_step(n: int, u: FieldState, charge0: float, sigma: int | None = None,
                tangents: tuple[TangentField, TangentField] | None = None,
                ms_res: float | None = None) -> DiagnosticsRecord:
    """Diagnostics of the state ``u = u^n``; ``charge0`` is ``Q(u^0)``."""
    q = charge(u)
    err = 0.0 if n == 0 else q - charge0
    h = None if sigma is None else energy(u, sigma).energy
    om = None if tangents is None else symplectic_form(*tangents)
    return DiagnosticsRecord(n=n, t=float(u.time), charge=q, charge_error=err, energy=h,
                             omega=om, ms_residual=ms_res)


DIAGNOSTIC_COLUMNS = ("n", "t", "Q", "err", "H", "omega", "ms_residual")


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_diagnostics(records, target: str | Path) -> None:
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for r in records:
            writer.writerow([r.n, _fmt(r.t), _fmt(r.charge), _fmt(r.charge_error),
                             _fmt(r.energy), _fmt(r.omega), _fmt(r.ms_residual)])
