"""Command line front end: ``stochnls {simulate,converge,conserve,msymp-check}``.

Runs are described by a JSON config (see README for the key set).  Every
output directory receives ``manifest.json``, which can be passed back as
``--config`` to repeat the run exactly.
"""
from __future__ import annotations

import argparse
import ast
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .field import FieldState, Grid1D, TangentField, gaussian
from .harness import (ConvergenceSpec, DiagnosticOptions, SchemeDivergence, conservation_study,
                      convergence_study, profile_dump, run_trajectory, write_charge_csv,
                      write_convergence_csv, write_tail_csv)
from .integrators import SCHEMES, ConvergenceFailure, SchemeConfig, TruncationConfig
from .path import sample_path
from .structure import write_diagnostics

__all__ = ["ConfigError", "RunConfig", "InitialDatum", "parse_config", "serialize_config",
           "main"]

log = logging.getLogger("stochnls")

MANIFEST_VERSION = 1
CSV_SCHEMAS = {
    "convergence.csv": ["scheme", "dt", "rms_error", "n_samples"],
    "tail.csv": ["scheme", "dt", "threshold", "probability"],
    "charge.csv": ["scheme", "n", "t", "Q", "err"],
    "profile.csv": ["t", "x", "abs"],
    "diagnostics.csv": ["n", "t", "Q", "err", "H", "omega", "ms_residual"],
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class GridSection:
    half_width: float = 30.0
    dx: float = 0.05
    # None: Dirichlet for midpoint and Euler-Maruyama, periodic for splitting.
    bc: str | None = None


@dataclass(frozen=True)
class SchemeSection:
    name: str = "midpoint"
    sigma: int = 1
    dt: float = 2.0**-12
    fp_tol: float = 1e-12
    max_iter: int = 100
    truncation_radius: float | None = None
    truncation_norm: str | None = None
    splitting_order: str = "nonlinear_first"
    linear_symbol: str | None = None
    nonlinear: bool = True


@dataclass(frozen=True)
class InitialDatum:
    """``gaussian``: ``exp(-a x^2)``; ``custom``: an expression in ``x``."""

    kind: str = "gaussian"
    a: float = 3.0
    expression: str | None = None

    def __call__(self, grid: Grid1D) -> FieldState:
        if self.kind == "gaussian":
            return gaussian(grid, self.a)
        code = compile(_checked_expression(self.expression), "<initial>", "eval")
        namespace = dict(_EXPR_NAMES, x=grid.x)
        values = eval(code, {"__builtins__": {}}, namespace)
        return FieldState.from_function(grid, lambda x: np.broadcast_to(values, x.shape))


@dataclass(frozen=True)
class ConvergenceSection:
    ref_steps: int = 2**15
    factors_log2: tuple[int, ...] = (3, 4, 5, 6, 7)
    samples: int = 20
    schemes: tuple[str, ...] = ("midpoint", "lie_splitting")
    reference: str = "self"
    cross_check: bool = True
    tail_constants: tuple[float, ...] = (1.0,)
    workers: int = 1


@dataclass(frozen=True)
class SimulateSection:
    stride: int | None = None


@dataclass(frozen=True)
class ConserveSection:
    steps: int = 4096
    schemes: tuple[str, ...] = ("midpoint", "lie_splitting", "euler_maruyama")
    stride: int = 1


@dataclass(frozen=True)
class MsympSection:
    dt: float = 2.0**-10
    steps: int = 8
    threshold: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    T: float = 0.5
    grid: GridSection = field(default_factory=GridSection)
    scheme: SchemeSection = field(default_factory=SchemeSection)
    initial: InitialDatum = field(default_factory=InitialDatum)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    conserve: ConserveSection = field(default_factory=ConserveSection)
    msymp: MsympSection = field(default_factory=MsympSection)

    def scheme_config(self, name: str | None = None, dt: float | None = None) -> SchemeConfig:
        s = self.scheme
        trunc = None
        if s.truncation_radius is not None:
            trunc = TruncationConfig(s.truncation_radius, s.truncation_norm)
        return SchemeConfig(scheme=name or s.name, sigma=s.sigma, dt=s.dt if dt is None else dt,
                            fp_tol=s.fp_tol, max_iter=s.max_iter, truncation=trunc,
                            splitting_order=s.splitting_order, linear_symbol=s.linear_symbol,
                            nonlinear=s.nonlinear)

    def grid_for(self, scheme: str) -> Grid1D:
        bc = self.grid.bc or ("periodic" if scheme == "lie_splitting" else "dirichlet")
        return Grid1D.from_spacing(self.grid.half_width, self.grid.dx, bc)

    def convergence_spec(self) -> ConvergenceSpec:
        c = self.convergence
        return ConvergenceSpec(T=self.T, n_ref=c.ref_steps,
                               factors=tuple(2**p for p in c.factors_log2), samples=c.samples,
                               schemes=tuple(self.scheme_config(n) for n in c.schemes),
                               reference=c.reference, cross_check=c.cross_check,
                               tail_constants=c.tail_constants, workers=c.workers)


_EXPR_NAMES = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "tanh": np.tanh,
               "cosh": np.cosh, "sqrt": np.sqrt, "abs": np.abs, "pi": np.pi, "j": 1j}


def _checked_expression(expr: str | None) -> str:
    if not expr:
        raise ConfigError("initial.expression", "a custom initial datum needs an expression")
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError("initial.expression", f"invalid syntax: {exc.msg}") from None
    allowed = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
               ast.Constant, ast.operator, ast.unaryop)
    for node in ast.walk(tree):
        if not isinstance(node, allowed):
            raise ConfigError("initial.expression", f"{type(node).__name__} is not allowed")
        if isinstance(node, ast.Name) and node.id not in _EXPR_NAMES and node.id != "x":
            raise ConfigError("initial.expression", f"unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not isinstance(node.func, ast.Name):
            raise ConfigError("initial.expression", "only plain function calls are allowed")
    return expr


_SECTIONS = {
    "grid": GridSection,
    "scheme": SchemeSection,
    "initial": InitialDatum,
    "convergence": ConvergenceSection,
    "simulate": SimulateSection,
    "conserve": ConserveSection,
    "msymp": MsympSection,
}


def _coerce(value, key: str, annotation: str):
    """Check ``value`` against the type implied by the field annotation."""
    optional = "None" in annotation
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "must not be null")
    if annotation.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {type(value).__name__}")
        inner = annotation[len("tuple["):].split(",")[0].strip()
        return tuple(_coerce(v, f"{key}[{i}]", inner) for i, v in enumerate(value))
    base = annotation.replace("| None", "").strip()
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {type(value).__name__}")
        return value
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {type(value).__name__}")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {type(value).__name__}")
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {type(value).__name__}")
        return value
    raise AssertionError(annotation)


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", f"expected an object, got {type(data).__name__}")
    fields = cls.__dataclass_fields__
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}" if prefix else unknown[0], "unknown key")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        key = f"{prefix}.{name}" if prefix else name
        if name in _SECTIONS and not prefix:
            kwargs[name] = _build(_SECTIONS[name], data[name], name)
        else:
            kwargs[name] = _coerce(data[name], key, str(f.type))
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    def check(ok: bool, key: str, message: str) -> None:
        if not ok:
            raise ConfigError(key, message)

    check(cfg.seed >= 0, "seed", "must be nonnegative")
    check(math.isfinite(cfg.T) and cfg.T > 0, "T", "must be positive")
    g = cfg.grid
    check(math.isfinite(g.half_width) and g.half_width > 0, "grid.half_width", "must be positive")
    check(math.isfinite(g.dx) and g.dx > 0, "grid.dx", "must be positive")
    check(g.bc in (None, "dirichlet", "periodic"), "grid.bc", f"unknown boundary {g.bc!r}")
    s = cfg.scheme
    check(s.name in SCHEMES, "scheme.name", f"unknown scheme {s.name!r}")
    check(s.sigma in (1, 2), "scheme.sigma", "must be 1 or 2")
    check(math.isfinite(s.dt) and s.dt > 0, "scheme.dt", "must be positive")
    check(s.fp_tol > 0, "scheme.fp_tol", "must be positive")
    check(s.max_iter >= 1, "scheme.max_iter", "must be >= 1")
    check(s.truncation_radius is None or s.truncation_radius > 0, "scheme.truncation_radius",
          "must be positive")
    check(s.truncation_norm in (None, "l2", "h1"), "scheme.truncation_norm",
          f"unknown norm {s.truncation_norm!r}")
    check(s.splitting_order in ("nonlinear_first", "linear_first"), "scheme.splitting_order",
          f"unknown order {s.splitting_order!r}")
    check(s.linear_symbol in (None, "fd", "continuous"), "scheme.linear_symbol",
          f"unknown symbol {s.linear_symbol!r}")
    i = cfg.initial
    check(i.kind in ("gaussian", "custom"), "initial.kind", f"unknown kind {i.kind!r}")
    check(i.a > 0, "initial.a", "must be positive")
    if i.kind == "custom":
        _checked_expression(i.expression)
    c = cfg.convergence
    check(c.ref_steps >= 1, "convergence.ref_steps", "must be >= 1")
    check(len(c.factors_log2) > 0, "convergence.factors_log2", "must not be empty")
    for k, p in enumerate(c.factors_log2):
        check(p >= 0 and c.ref_steps % 2**p == 0, f"convergence.factors_log2[{k}]",
              f"2^{p} does not divide ref_steps={c.ref_steps}")
    check(c.samples >= 1, "convergence.samples", "must be >= 1")
    check(len(c.schemes) > 0 and len(set(c.schemes)) == len(c.schemes),
          "convergence.schemes", "must be a nonempty list of distinct names")
    for k, n in enumerate(c.schemes):
        check(n in SCHEMES, f"convergence.schemes[{k}]", f"unknown scheme {n!r}")
    check(c.reference in ("self", "midpoint", "lie_splitting"), "convergence.reference",
          f"unknown reference {c.reference!r}")
    check(c.workers >= 1, "convergence.workers", "must be >= 1")
    check(cfg.simulate.stride is None or cfg.simulate.stride >= 1, "simulate.stride",
          "must be >= 1")
    check(cfg.conserve.steps >= 1, "conserve.steps", "must be >= 1")
    check(cfg.conserve.stride >= 1, "conserve.stride", "must be >= 1")
    for k, n in enumerate(cfg.conserve.schemes):
        check(n in SCHEMES, f"conserve.schemes[{k}]", f"unknown scheme {n!r}")
    check(cfg.msymp.dt > 0, "msymp.dt", "must be positive")
    check(cfg.msymp.steps >= 1, "msymp.steps", "must be >= 1")
    check(cfg.msymp.threshold > 0, "msymp.threshold", "must be positive")
    for name in set(c.schemes) | set(cfg.conserve.schemes) | {s.name}:
        try:
            cfg.grid_for(name)
        except ValueError as exc:
            raise ConfigError("grid.dx", str(exc)) from None
    n_sim = cfg.T / s.dt
    check(abs(n_sim - round(n_sim)) < 1e-9 * max(1.0, n_sim), "scheme.dt",
          f"does not divide T={cfg.T}")


def _from_dict(data) -> RunConfig:
    if isinstance(data, dict) and "manifest_version" in data:
        data = data.get("config", {})
    cfg = _build(RunConfig, data, "")
    _validate(cfg)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse a JSON config (or a run manifest); blank text gives the defaults."""
    if not text.strip():
        data = {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return _from_dict(data)


def config_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v
    return plain(asdict(cfg))


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(config_dict(cfg), indent=2, sort_keys=True) + "\n"


def _write_manifest(out: Path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "code_version": __version__,
        "seed": cfg.seed,
        "config": config_dict(cfg),
        "csv_schemas": CSV_SCHEMAS,
        "protocol": {
            "error": "l2 error at T against the reference run on the same fine path",
            "statistic": "root mean square over samples; slope by least squares in log-log",
            "paths": "sample m uses Philox stream (seed, m); coarse paths are block sums",
        },
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _steps(T: float, dt: float) -> int:
    return int(round(T / dt))


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    scheme = cfg.scheme_config()
    grid = cfg.grid_for(scheme.scheme)
    n = _steps(cfg.T, scheme.dt)
    path = sample_path(cfg.seed, cfg.T, n)
    stride = cfg.simulate.stride or n
    u0 = cfg.initial(grid)
    _, records = run_trajectory(scheme, grid, u0, path, DiagnosticOptions(stride=stride))
    snaps = profile_dump(scheme, grid, u0, path, stride, out / "profile.csv")
    write_diagnostics(records, out / "diagnostics.csv")
    _write_manifest(out, "simulate", cfg)
    print(f"simulate: {scheme.scheme}, {n} steps, {len(snaps)} snapshots, "
          f"charge error {records[-1].charge_error:.3e}")
    return 0


def cmd_converge(cfg: RunConfig, out: Path) -> int:
    spec = cfg.convergence_spec()
    grids = {c.scheme: cfg.grid_for(c.scheme) for c in spec.schemes}
    for name in ("midpoint", "lie_splitting"):
        grids.setdefault(name, cfg.grid_for(name))
    report = convergence_study(spec, grids, cfg.initial, cfg.seed)
    write_convergence_csv(report, out / "convergence.csv")
    write_tail_csv(report, out / "tail.csv")
    slopes = {k: s.slope for k, s in report.schemes.items()}
    _write_manifest(out, "converge", cfg, {"slopes": slopes, "warnings": report.warnings})
    for name, s in report.schemes.items():
        print(f"converge: {name} slope {s.slope:.3f}")
    for w in report.warnings:
        print(f"warning: {w}")
    return 0


def cmd_conserve(cfg: RunConfig, out: Path) -> int:
    dt = cfg.scheme.dt
    steps = cfg.conserve.steps
    path = sample_path(cfg.seed, steps * dt, steps)
    configs = [cfg.scheme_config(n, dt) for n in cfg.conserve.schemes]
    grids = {c.scheme: cfg.grid_for(c.scheme) for c in configs}
    series = conservation_study(configs, grids, cfg.initial, path, stride=cfg.conserve.stride)
    write_charge_csv(series, out / "charge.csv")
    summary = {k: {"max_abs_err": s.max_abs_error, "diverged_at": s.diverged_at}
               for k, s in series.items()}
    _write_manifest(out, "conserve", cfg, {"summary": summary})
    for k, s in series.items():
        tail = "" if s.diverged_at is None else f" (diverged at step {s.diverged_at})"
        print(f"conserve: {k} max |err| {s.max_abs_error:.3e}{tail}")
    return 0


def cmd_msymp(cfg: RunConfig, out: Path) -> int:
    m = cfg.msymp
    scheme = cfg.scheme_config(dt=m.dt)
    grid = cfg.grid_for(scheme.scheme)
    path = sample_path(cfg.seed, m.steps * m.dt, m.steps)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    tangents = (TangentField.random(grid, rng), TangentField.random(grid, rng))
    opts = DiagnosticOptions(stride=1, energy=False, tangents=tangents, ms_residual=True)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            _, records = run_trajectory(scheme, grid, cfg.initial(grid), path, opts)
    except SchemeDivergence as exc:
        records = exc.records
    residuals = [r.ms_residual for r in records if r.ms_residual is not None]
    if not residuals:
        print(f"msymp-check: no residual available for scheme {scheme.scheme}", file=sys.stderr)
        return 1
    write_diagnostics(records, out / "diagnostics.csv")
    worst = max(residuals)
    ok = worst <= m.threshold
    _write_manifest(out, "msymp-check", cfg, {"max_residual": worst, "passed": ok})
    print(f"msymp-check: {scheme.scheme} max residual {worst:.3e} threshold {m.threshold:.1e} "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge, "conserve": cmd_conserve,
            "msymp-check": cmd_msymp}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochnls", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config or manifest")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="top-level seed")
        if name == "converge":
            p.add_argument("--samples", type=int, help="Monte Carlo sample count")
            p.add_argument("--workers", type=int, help="worker processes")
        if name == "msymp-check":
            p.add_argument("--threshold", type=float, help="pass/fail residual bound")
    return parser


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    data = config_dict(cfg)
    if args.out is not None:
        data["output_dir"] = str(args.out)
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        data["convergence"]["samples"] = args.samples
    if getattr(args, "workers", None) is not None:
        data["convergence"]["workers"] = args.workers
    if getattr(args, "threshold", None) is not None:
        data["msymp"]["threshold"] = args.threshold
    return _from_dict(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text() if args.config else ""
        cfg = _apply_flags(parse_config(text), args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (ConvergenceFailure, SchemeDivergence, ArithmeticError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
