"""Geometric (Aharonov-Anandan) phases of two Rydberg atoms moved in optical
tweezers: dipole Hamiltonian, mixed quantum-classical dynamics, phase
analysis, adjoint optimal control and thermal Monte Carlo."""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig, bundled_config, load_config, parse_config
from .control import ControlSignal, loop_control, loop_path
from .dynamics import (AtomPairState, IntegrationError, Setup, TrajectoryRecord, integrate,
                       propagate_along)
from .hamiltonian import STATE_LABELS, DipoleModel, GeometryError, GeometryInput, build_Hdd
from .noise import NoiseParams, NoiseStats, langevin_integrate, run_ensemble
from .optimal_control import (OptimizationResult, OptimizerParams, Problem, Weights,
                              circle_scan, control_gradient, ellipse_scan, evaluate,
                              evaluate_objective, optimize, select_cyclic_state,
                              tracking_control)
from .phases import PhaseReport, aa_eigenphases, phase_report, separability
from .tweezer import TweezerField

__all__ = [
    "AtomPairState", "ConfigError", "ControlSignal", "DipoleModel", "ExperimentConfig",
    "GeometryError", "GeometryInput", "IntegrationError", "NoiseParams", "NoiseStats",
    "OptimizationResult", "OptimizerParams", "PhaseReport", "Problem", "STATE_LABELS", "Setup",
    "TrajectoryRecord", "TweezerField", "Weights", "aa_eigenphases", "build_Hdd",
    "bundled_config", "circle_scan", "control_gradient", "ellipse_scan", "evaluate",
    "evaluate_objective", "integrate", "langevin_integrate", "load_config", "loop_control",
    "loop_path", "optimize", "parse_config", "phase_report", "propagate_along", "run_ensemble",
    "select_cyclic_state", "separability", "tracking_control",
]
