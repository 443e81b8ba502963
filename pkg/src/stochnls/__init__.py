"""Structure-preserving integrators for the NLS equation with white noise dispersion."""

__version__ = "0.1.0"

from .field import (FieldState, Functionals, Grid1D, TangentField, UnsupportedOperation, charge,
                    energy, gaussian, hs_norm, l2_error, l2_norm)
from .harness import (ConvergenceReport, ConvergenceSpec, DiagnosticOptions, SchemeDivergence,
                      conservation_study, convergence_study, profile_dump, run_trajectory)
from .integrators import (ConvergenceFailure, SchemeConfig, TruncationConfig, midpoint_step,
                          splitting_step, euler_maruyama_step, step, tangent_step)
from .linear_ops import (CayleyPair, DiscreteLaplacian, apply_laplacian, cayley_step,
                         kernel_oracle, semigroup_step, solve_implicit)
from .path import BrownianPath, dump_path, load_path, sample_path, subsample
from .structure import DiagnosticsRecord, max_ms_residual, ms_residual, symplectic_form

__all__ = [
    "BrownianPath", "CayleyPair", "ConvergenceFailure", "ConvergenceReport", "ConvergenceSpec",
    "DiagnosticOptions", "DiagnosticsRecord", "DiscreteLaplacian", "FieldState", "Functionals",
    "Grid1D", "SchemeConfig", "SchemeDivergence", "TangentField", "TruncationConfig",
    "UnsupportedOperation", "apply_laplacian", "cayley_step", "charge", "conservation_study",
    "convergence_study", "dump_path", "energy", "euler_maruyama_step", "gaussian", "hs_norm",
    "kernel_oracle", "l2_error", "l2_norm", "load_path", "max_ms_residual", "midpoint_step",
    "ms_residual", "profile_dump", "run_trajectory", "sample_path", "semigroup_step",
    "solve_implicit", "splitting_step", "step", "subsample", "symplectic_form", "tangent_step",
]
