"""Build physics objects from an :class:`~aaphase.config.ExperimentConfig`."""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .control import ControlSignal, loop_control, loop_path
from .dynamics import MASS_RB87, Setup
from .hamiltonian import STATE_LABELS
from .noise import NoiseParams
from .optimal_control import OptimizerParams, Problem, Weights, tracking_control
from .tweezer import TweezerField
from .units import c3_ghz_um3_to_internal


def build_setup(cfg: ExperimentConfig, dt: float | None = None) -> Setup:
    sigma = cfg["traps.sigma"]
    fields = (TweezerField.from_millikelvin(cfg["traps.mobile_depth"], sigma),
              TweezerField.from_millikelvin(cfg["traps.static_depth"], sigma,
                                            tuple(cfg["geometry.partner"])))
    return Setup(fields, c3=c3_ghz_um3_to_internal(cfg["physics.c3"]), mass=MASS_RB87,
                 dt=cfg["horizon.dt"] if dt is None else dt,
                 quantization_axis=tuple(cfg["physics.quantization_axis"]),
                 r_min=cfg["physics.r_min"])


def build_weights(cfg: ExperimentConfig) -> Weights:
    return Weights(*(cfg[f"weights.{k}"] for k in
                     ("chi_r", "chi_p", "chi_psi", "chi_dy", "nu_x", "nu_y")))


def initial_wavefunction(label: str) -> np.ndarray:
    """Basis vector for ``label``; ``cyclic`` starts from |dd⟩ before selection."""
    psi = np.zeros(4, dtype=complex)
    psi[0 if label == "cyclic" else STATE_LABELS.index(label)] = 1.0
    return psi


def build_problem(cfg: ExperimentConfig, dt: float | None = None) -> Problem:
    state = cfg["initial.state"]
    return Problem(build_setup(cfg, dt), tuple(cfg["geometry.start"]),
                   tuple(cfg["geometry.partner"]), initial_wavefunction(state),
                   build_weights(cfg), T=cfg["horizon.T"], n=cfg["horizon.samples"],
                   phase_variant=cfg["objective.phase"], pairing=cfg["objective.pairing"],
                   include_separability=cfg["objective.separability"],
                   initial_state="cyclic" if state == "cyclic" else "fixed")


def loop_path_fn(cfg: ExperimentConfig):
    """Prescribed position of the moving atom for the configured loop."""
    T = cfg["horizon.T"]
    args = (cfg["geometry.start"], cfg["init.center"], cfg["init.semi_axes"],
            cfg["init.orientation"], cfg["init.direction"], cfg["init.profile"])
    return lambda t: loop_path(t, T, *args)


def initial_control(cfg: ExperimentConfig, problem: Problem | None = None) -> ControlSignal:
    mode = cfg["init.mode"]
    if mode == "file":
        ctrl = ControlSignal.from_csv(cfg.resolve(cfg["init.control_file"]))
        if abs(ctrl.T - cfg["horizon.T"]) > 1e-9:
            raise ValueError("control file horizon differs from horizon.T")
        return ctrl
    if mode == "tracking":
        return tracking_control(loop_path_fn(cfg), problem or build_problem(cfg))
    return loop_control(cfg["horizon.T"], cfg["horizon.samples"], cfg["geometry.start"],
                        cfg["init.center"], cfg["init.semi_axes"], cfg["init.orientation"],
                        cfg["init.direction"], cfg["init.profile"])


def build_optimizer(cfg: ExperimentConfig, checkpoint_path=None, log_path=None) -> OptimizerParams:
    keys = ("max_iter", "tol", "method", "step0", "armijo_c", "backtrack", "max_backtracks",
            "momentum", "memory", "reselect_every")
    return OptimizerParams(**{k: cfg[f"optimizer.{k}"] for k in keys},
                           checkpoint_path=checkpoint_path, log_path=log_path)


def build_noise(cfg: ExperimentConfig, seed: int | None = None) -> NoiseParams:
    return NoiseParams(bath_temperature=cfg["noise.temperature"] * 1e-3,
                       lambda_per_ms=cfg["noise.lambda"],
                       seed=cfg["noise.seed"] if seed is None else seed,
                       n_realizations=cfg["noise.realizations"], workers=cfg["noise.workers"],
                       escape_sigmas=cfg["noise.escape_sigmas"])


def scan_axes(cfg: ExperimentConfig):
    """Grid vectors for the two scan coordinates (stop inclusive)."""
    out = []
    for key in ("scan.r", "scan.d"):
        a, b, h = cfg[key]
        out.append(a + h * np.arange(int(np.floor((b - a) / h + 1e-9)) + 1))
    return out
