"""Data-driven inversion-based control: identification, inversion control,
virtual-reference PID tuning, closed-loop simulation and certification."""

from .certify import (
    AssumptionViolation,
    ProbeConfig,
    StabilityCertificate,
    StepScenario,
    estimate_gamma_y,
    theorem1_bounds,
    verify_theorem2,
)
from .kernels import BACKEND
from .nic import NicController, SolverConfig, rho_constants
from .signals import DataError, DataRecord, Regressor, Signal, build_regressor, load_record, lp_norm, save_record
from .simloop import Plant, RunConfig, Trace, metrics, plant, simulate_closed_loop
from .sysid import IdConfig, RegressionModel, identify, predict
from .vrft import PidController, ReferenceModel, VrftResult, design_pid, fit_pid, virtual_reference

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation", "BACKEND", "DataError", "DataRecord", "IdConfig", "NicController", "PidController",
    "Plant", "ProbeConfig", "Regressor", "ReferenceModel", "RegressionModel", "RunConfig", "Signal",
    "SolverConfig", "StabilityCertificate", "StepScenario", "Trace", "VrftResult", "build_regressor",
    "design_pid", "estimate_gamma_y", "fit_pid", "identify", "load_record", "lp_norm", "metrics", "plant",
    "predict", "rho_constants", "save_record", "simulate_closed_loop", "theorem1_bounds", "verify_theorem2",
    "virtual_reference",
]
