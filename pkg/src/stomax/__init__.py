"""Ergodic structure-preserving discretizations of damped stochastic
Maxwell equations: truncated-noise modified midpoint stepping with
finite-difference and discontinuous Galerkin spatial realizations, plus
the statistical harnesses that stress their structural guarantees."""

__version__ = "0.1.0"

from .model import Box, NoiseSpec, ProblemSpec, SigmaField, f_q1, trace_q, validate
from .noise import (
    NoiseSampler,
    WienerIncrement,
    coarsen,
    compute_a,
    evaluate_on_nodes,
    sample_increment,
    truncate_normal,
)
from .fd import FdOperator, FieldState, StaggeredGrid, apply_m, delta_forward, discrete_div
from .dg import DGFieldState, DGMesh, DgOperator, assemble_mh, build_mesh, l2_project
from .stepper import StepperConfig, run_trajectory, step, step_pair
from .analysis import (
    EmpiricalMeasure,
    TrajectoryStats,
    ergodic_average,
    fit_order,
    mixing_rate,
    ms_error,
    wasserstein2_1d,
)
from .structure import discrete_energy, energy_law_residual, msymp_residual, omega_form

__all__ = [
    "Box",
    "NoiseSpec",
    "ProblemSpec",
    "SigmaField",
    "f_q1",
    "trace_q",
    "validate",
    "NoiseSampler",
    "WienerIncrement",
    "coarsen",
    "compute_a",
    "evaluate_on_nodes",
    "sample_increment",
    "truncate_normal",
    "FdOperator",
    "FieldState",
    "StaggeredGrid",
    "apply_m",
    "delta_forward",
    "discrete_div",
    "DGFieldState",
    "DGMesh",
    "DgOperator",
    "assemble_mh",
    "build_mesh",
    "l2_project",
    "StepperConfig",
    "run_trajectory",
    "step",
    "step_pair",
    "EmpiricalMeasure",
    "TrajectoryStats",
    "ergodic_average",
    "fit_order",
    "mixing_rate",
    "ms_error",
    "wasserstein2_1d",
    "discrete_energy",
    "energy_law_residual",
    "msymp_residual",
    "omega_form",
]
