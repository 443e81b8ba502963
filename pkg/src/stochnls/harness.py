"""Trajectory driver and the path-coupled experiments.

All coarse runs reuse the increments of one fine master path per sample,
coarsened with :func:`stochnls.path.subsample`.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .field import FieldState, Grid1D, TangentField, charge
from .integrators import ConvergenceFailure, SchemeConfig, step, tangent_step
from .path import BrownianPath, sample_path, subsample
from .structure import DiagnosticsRecord, max_ms_residual, record_step

__all__ = [
    "SchemeDivergence",
    "DiagnosticOptions",
    "run_trajectory",
    "ConvergenceSpec",
    "SchemeConvergence",
    "ConvergenceReport",
    "convergence_study",
    "ChargeSeries",
    "conservation_study",
    "profile_dump",
    "write_convergence_csv",
    "write_tail_csv",
    "write_charge_csv",
]

log = logging.getLogger(__name__)

Initial = Callable[[Grid1D], FieldState]


class SchemeDivergence(RuntimeError):
    """The state left the finite range; ``records`` holds the diagnostics so far."""

    def __init__(self, step_index: int, records: list[DiagnosticsRecord]):
        self.step_index = step_index
        self.records = records
        super().__init__(f"non-finite state after step {step_index}")


@dataclass(frozen=True)
class DiagnosticOptions:
    stride: int = 1
    energy: bool = True
    tangents: tuple[TangentField, TangentField] | None = None
    ms_residual: bool = False

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def _check_dt(cfg: SchemeConfig, path: BrownianPath) -> None:
    if not math.isclose(cfg.dt, path.dt, rel_tol=1e-12):
        raise ValueError(f"scheme dt={cfg.dt} does not match path dt={path.dt}")


def run_trajectory(cfg: SchemeConfig, grid: Grid1D, u0: FieldState, path: BrownianPath,
                   options: DiagnosticOptions | None = None, n_steps: int | None = None,
                   ) -> tuple[FieldState, list[DiagnosticsRecord]]:
    """Advance ``u0`` along ``path``; return the final state and strided diagnostics.

    Diagnostics are recorded at ``n = 0``, every ``stride`` steps and at the
    final step.  With tangents enabled, both are propagated by the linearized
    scheme and the multi-symplectic residual (midpoint, or Euler-Maruyama as a
    negative control) is maximized over the steps between records.
    """
    if u0.grid != grid:
        raise ValueError("initial state lives on a different grid")
    n_total = path.n_steps if n_steps is None else int(n_steps)
    if not 0 <= n_total <= path.n_steps:
        raise ValueError(f"n_steps must lie in 0..{path.n_steps}")
    if n_total == 0:
        return u0, []
    _check_dt(cfg, path)
    opts = options or DiagnosticOptions()
    sigma = cfg.sigma if opts.energy else None
    track = opts.tangents is not None
    want_ms = track and opts.ms_residual and cfg.scheme in ("midpoint", "euler_maruyama")
    xi, eta = opts.tangents if track else (None, None)
    q0 = charge(u0)
    records = [record_step(0, u0, q0, sigma, opts.tangents)]
    u = u0
    ms_window = 0.0
    for n in range(n_total):
        dWn = float(path.increments[n])
        try:
            u_next = step(u, dWn, cfg)
        except ConvergenceFailure as exc:
            exc.step_index = n
            raise
        if track:
            xi_next = tangent_step(u, u_next, dWn, cfg, xi)
            eta_next = tangent_step(u, u_next, dWn, cfg, eta)
            if want_ms:
                ms_window = max(ms_window, max_ms_residual(
                    xi, xi_next, eta, eta_next, dWn, cfg.dt, cfg.scheme,
                    negative_control=cfg.scheme != "midpoint"))
            xi, eta = xi_next, eta_next
        u = u_next
        if not u.is_finite():
            raise SchemeDivergence(n + 1, records)
        if (n + 1) % opts.stride == 0 or n + 1 == n_total:
            records.append(record_step(n + 1, u, q0, sigma, (xi, eta) if track else None,
                                       ms_window if want_ms else None))
            ms_window = 0.0
    return u, records


@dataclass(frozen=True)
class ConvergenceSpec:
    """Path-coupled strong-error study.

    ``reference`` is ``"self"`` (each scheme against itself at ``n_ref`` steps)
    or a scheme name used as the common reference.
    """

    T: float = 0.5
    n_ref: int = 2**15
    factors: tuple[int, ...] = (8, 16, 32, 64, 128)
    samples: int = 20
    schemes: tuple[SchemeConfig, ...] = (SchemeConfig("midpoint"), SchemeConfig("lie_splitting"))
    reference: str = "self"
    cross_check: bool = True
    tail_constants: tuple[float, ...] = (1.0,)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.factors:
            raise ValueError("at least one coarse factor is required")
        for f in self.factors:
            if f < 1 or self.n_ref % f:
                raise ValueError(f"factor {f} does not divide n_ref={self.n_ref}")
        if self.reference not in ("self", "midpoint", "lie_splitting"):
            raise ValueError(f"unknown reference {self.reference!r}")
        names = [c.scheme for c in self.schemes]
        if len(set(names)) != len(names):
            raise ValueError("scheme names must be unique")

    def scheme_config(self, name: str) -> SchemeConfig:
        for c in self.schemes:
            if c.scheme == name:
                return c
        return SchemeConfig(name)


@dataclass
class SchemeConvergence:
    scheme: str
    dts: list[float]
    rms: list[float]
    errors: np.ndarray
    slope: float
    tail: dict[float, list[float]]
    incomplete: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class ConvergenceReport:
    spec: ConvergenceSpec
    seed: int
    schemes: dict[str, SchemeConvergence]
    cross_reference: list[float] | None
    warnings: list[str]


def _grid_for(grids, name: str) -> Grid1D:
    """``grids`` is one grid, a mapping by scheme name, or a callable of the name."""
    if isinstance(grids, Grid1D):
        return grids
    return grids(name) if callable(grids) else grids[name]


def _values_error(a: FieldState, b: FieldState) -> float:
    if a.grid.n_points != b.grid.n_points or a.grid.dx != b.grid.dx:
        raise ValueError("states are not on comparable grids")
    return float(np.sqrt(a.grid.dx * np.sum(np.abs(a.values - b.values) ** 2)))


def _final_state(cfg: SchemeConfig, grid: Grid1D, initial: Initial, path: BrownianPath):
    cfg = cfg.with_dt(path.dt)
    u, _ = run_trajectory(cfg, grid, initial(grid), path,
                          DiagnosticOptions(stride=path.n_steps, energy=False))
    return u


def _convergence_sample(args) -> dict:
    spec, grids, initial, seed, m = args
    fine = sample_path(seed, spec.T, spec.n_ref, sample_index=m)
    out: dict = {"errors": {}, "failures": [], "cross": None}
    refs: dict[str, FieldState] = {}

    def reference(name: str) -> FieldState:
        if name not in refs:
            refs[name] = _final_state(spec.scheme_config(name), _grid_for(grids, name),
                                      initial, fine)
        return refs[name]

    for cfg in spec.schemes:
        errs = []
        ref_name = cfg.scheme if spec.reference == "self" else spec.reference
        for f in spec.factors:
            try:
                ref = reference(ref_name)
                coarse = _final_state(cfg, _grid_for(grids, cfg.scheme), initial,
                                      subsample(fine, f))
                errs.append(_values_error(coarse, ref))
            except (ConvergenceFailure, SchemeDivergence) as exc:
                log.warning("sample %d, scheme %s, factor %d failed: %s", m, cfg.scheme, f, exc)
                out["failures"].append((cfg.scheme, f, str(exc)))
                errs.append(float("nan"))
        out["errors"][cfg.scheme] = errs
    if spec.cross_check:
        try:
            out["cross"] = _values_error(reference("midpoint"), reference("lie_splitting"))
        except (ConvergenceFailure, SchemeDivergence) as exc:
            log.warning("sample %d cross-reference failed: %s", m, exc)
    return out


def _fit_slope(dts: np.ndarray, values: np.ndarray) -> float:
    ok = np.isfinite(values) & (values > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(dts[ok]), np.log(values[ok]), 1)[0])


def convergence_study(spec: ConvergenceSpec, grids, initial: Initial, seed: int
                      ) -> ConvergenceReport:
    """Strong l2 errors at ``T`` over ``spec.samples`` path-coupled samples.

    Samples are independent jobs; results are aggregated in sample order, so
    the report does not depend on ``spec.workers``.
    """
    jobs = [(spec, grids, initial, seed, m) for m in range(spec.samples)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_convergence_sample, jobs))
    else:
        results = [_convergence_sample(j) for j in jobs]

    dts = np.array([spec.T * f / spec.n_ref for f in spec.factors])
    warnings: list[str] = []
    per_scheme: dict[str, SchemeConvergence] = {}
    for cfg in spec.schemes:
        name = cfg.scheme
        errors = np.array([r["errors"][name] for r in results])
        with np.errstate(invalid="ignore"):
            rms = np.sqrt(np.nanmean(errors**2, axis=0)) if np.isfinite(errors).any() \
                else np.full(len(dts), np.nan)
        incomplete = [(m, spec.factors[i]) for m, i in zip(*np.nonzero(~np.isfinite(errors)))]
        tail = {}
        for c in spec.tail_constants:
            finite = np.isfinite(errors)
            hits = (errors >= c * dts[None, :]) & finite
            tail[c] = [float(hits[:, i].sum() / max(finite[:, i].sum(), 1))
                       for i in range(len(dts))]
        slope = _fit_slope(dts, rms)
        per_scheme[name] = SchemeConvergence(name, dts.tolist(), rms.tolist(), errors, slope,
                                             tail, incomplete)
        # Errors should shrink with dt; one inversion at the finest level is tolerated.
        order = np.argsort(dts)[::-1]
        inversions = [i for a, i in zip(order[:-1], order[1:]) if rms[i] > rms[a]]
        if len(inversions) > 1 or (inversions and inversions[0] != order[-1]):
            warnings.append(f"{name}: RMS error not monotone in dt ({len(inversions)} inversions)")
        if incomplete:
            warnings.append(f"{name}: {len(incomplete)} incomplete (sample, factor) cells")

    cross = None
    if spec.cross_check:
        cross = [r["cross"] for r in results]
        finite = [c for c in cross if c is not None]
        smallest = min((float(np.nanmin(s.rms)) for s in per_scheme.values()
                        if np.isfinite(s.rms).any()), default=float("nan"))
        if finite and max(finite) >= smallest:
            warnings.append(
                f"reference disagreement midpoint vs lie_splitting ({max(finite):.3e}) "
                f"is not below the smallest coarse error ({smallest:.3e})")
    for w in warnings:
        log.warning(w)
    return ConvergenceReport(spec, seed, per_scheme, cross, warnings)


@dataclass
class ChargeSeries:
    scheme: str
    records: list[DiagnosticsRecord]
    diverged_at: int | None = None

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.charge_error for r in self.records])

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.errors)))


def conservation_study(configs: Sequence[SchemeConfig], grids, initial: Initial,
                       path: BrownianPath, n_steps: int | None = None,
                       stride: int = 1) -> dict[str, ChargeSeries]:
    """Charge error ``err(n)`` for each scheme along the same path.

    A scheme whose state overflows keeps the records up to the last finite
    state and reports the step where it diverged.
    """
    out: dict[str, ChargeSeries] = {}
    for cfg in configs:
        grid = _grid_for(grids, cfg.scheme)
        cfg = cfg.with_dt(path.dt)
        opts = DiagnosticOptions(stride=stride, energy=False)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                _, records = run_trajectory(cfg, grid, initial(grid), path, opts, n_steps)
            out[cfg.scheme] = ChargeSeries(cfg.scheme, records)
        except SchemeDivergence as exc:
            log.warning("%s diverged at step %d", cfg.scheme, exc.step_index)
            out[cfg.scheme] = ChargeSeries(cfg.scheme, exc.records, exc.step_index)
    return out


def profile_dump(cfg: SchemeConfig, grid: Grid1D, u0: FieldState, path: BrownianPath,
                 stride: int, target: str | Path | None = None) -> list[FieldState]:
    """Snapshots at ``t = 0``, every ``stride`` steps and ``t = T``; optional CSV (t, x, abs)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    _check_dt(cfg, path)
    snaps = [u0]
    u = u0
    for n, dWn in enumerate(path.increments):
        u = step(u, float(dWn), cfg)
        if (n + 1) % stride == 0 or n + 1 == path.n_steps:
            snaps.append(u)
    if target is not None:
        with open(target, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "abs"])
            for s in snaps:
                for xj, aj in zip(s.grid.x, np.abs(s.values)):
                    writer.writerow([repr(float(s.time)), repr(float(xj)), repr(float(aj))])
    return snaps


def write_convergence_csv(report: ConvergenceReport, target: str | Path) -> None:
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "dt", "rms_error", "n_samples"])
        for name, s in report.schemes.items():
            counts = np.isfinite(s.errors).sum(axis=0)
            for dt, r, c in zip(s.dts, s.rms, counts):
                writer.writerow([name, repr(float(dt)), repr(float(r)), int(c)])


def write_tail_csv(report: ConvergenceReport, target: str | Path) -> None:
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "dt", "threshold", "probability"])
        for name, s in report.schemes.items():
            for c, probs in s.tail.items():
                for dt, pr in zip(s.dts, probs):
                    writer.writerow([name, repr(float(dt)), repr(float(c)), repr(float(pr))])


def write_charge_csv(series: Mapping[str, ChargeSeries], target: str | Path) -> None:
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "n", "t", "Q", "err"])
        for name, s in series.items():
            for r in s.records:
                writer.writerow([name, r.n, repr(float(r.t)), repr(float(r.charge)),
                                 repr(float(r.charge_error))])
