"""Coupled classical-trajectory / Schrödinger dynamics of the atom pair."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .control import ControlSignal
from .hamiltonian import STATE_LABELS, DipoleModel, GeometryError
from .tweezer import TweezerField, split_fields
from .units import C3_DEFAULT, species_mass

MASS_RB87 = species_mass("Rb87")
DEFAULT_DT = 1e-3


class IntegrationError(RuntimeError):
    """Integration aborted; ``time`` is where it stopped and ``record`` holds
    the samples up to that point."""

    def __init__(self, message, kind, time, record=None):
        super().__init__(message)
        self.kind = kind
        self.time = time
        self.record = record


@dataclass
class AtomPairState:
    """Positions (µm), momenta (ħ/µm) and the four-component internal state."""

    r1: np.ndarray
    r2: np.ndarray
    p1: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p2: np.ndarray = field(default_factory=lambda: np.zeros(2))
    psi: np.ndarray = field(default_factory=lambda: np.array([1, 0, 0, 0], dtype=complex))

    def __post_init__(self):
        self.r1 = np.asarray(self.r1, dtype=float).reshape(2)
        self.r2 = np.asarray(self.r2, dtype=float).reshape(2)
        self.p1 = np.asarray(self.p1, dtype=float).reshape(2)
        self.p2 = np.asarray(self.p2, dtype=float).reshape(2)
        self.psi = np.asarray(self.psi, dtype=complex).reshape(4)

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.r1, self.r2, self.p1, self.p2])

    @classmethod
    def from_vector(cls, y, psi) -> "AtomPairState":
        return cls(y[0:2], y[2:4], y[4:6], y[6:8], psi)


@dataclass
class TrajectoryRecord:
    """Time series of one run, sampled at every integrator step."""

    t: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    energy: np.ndarray
    u: np.ndarray | None = None
    propagator: np.ndarray | None = None
    energy_gram: np.ndarray | None = None
    max_norm_drift: float = 0.0

    @property
    def r1(self):
        return self.y[:, 0:2]

    @property
    def r2(self):
        return self.y[:, 2:4]

    @property
    def p1(self):
        return self.y[:, 4:6]

    @property
    def p2(self):
        return self.y[:, 6:8]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def state(self, n: int) -> AtomPairState:
        return AtomPairState.from_vector(self.y[n], self.psi[n])

    @property
    def gamma_d(self) -> np.ndarray:
        """Accumulated dynamical phase in radians (trapezoidal rule)."""
        inc = -0.5 * (self.energy[1:] + self.energy[:-1]) * np.diff(self.t)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def occupations(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def with_global_phase(self, alpha: float) -> "TrajectoryRecord":
        """Same run with every wavefunction multiplied by exp(i alpha)."""
        return TrajectoryRecord(self.t, self.y, self.psi * np.exp(1j * alpha), self.energy,
                                self.u, self.propagator, self.energy_gram, self.max_norm_drift)

    # ---- persistence -------------------------------------------------
    CSV_COLUMNS = (
        ["t_us", "r1x_um", "r1y_um", "p1x_hbar_per_um", "p1y_hbar_per_um",
         "r2x_um", "r2y_um", "p2x_hbar_per_um", "p2y_hbar_per_um"]
        + [f"{part}_psi_{lab}" for lab in STATE_LABELS for part in ("re", "im")]
        + ["energy_rad_per_us", "gamma_d_deg"]
    )

    def table(self) -> np.ndarray:
        cols = [self.t, self.r1[:, 0], self.r1[:, 1], self.p1[:, 0], self.p1[:, 1],
                self.r2[:, 0], self.r2[:, 1], self.p2[:, 0], self.p2[:, 1]]
        for k in range(4):
            cols += [self.psi[:, k].real, self.psi[:, k].imag]
        cols += [self.energy, np.degrees(self.gamma_d)]
        return np.column_stack(cols)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.table(), delimiter=",", fmt="%.17g",
                   header=",".join(self.CSV_COLUMNS), comments="")

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if header != cls.CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory CSV header")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        y = data[:, [1, 2, 5, 6, 3, 4, 7, 8]]
        psi = data[:, 9:17:2] + 1j * data[:, 10:17:2]
        return cls(data[:, 0], y, psi, data[:, 17])

    def to_npz(self, path) -> None:
        extra = {}
        for name in ("u", "propagator", "energy_gram"):
            if getattr(self, name) is not None:
                extra[name] = getattr(self, name)
        np.savez(path, t=self.t, y=self.y, psi=self.psi, energy=self.energy,
                 max_norm_drift=self.max_norm_drift, **extra)

    @classmethod
    def from_npz(cls, path) -> "TrajectoryRecord":
        with np.load(path) as z:
            return cls(z["t"], z["y"], z["psi"], z["energy"],
                       z["u"] if "u" in z else None,
                       z["propagator"] if "propagator" in z else None,
                       z["energy_gram"] if "energy_gram" in z else None,
                       float(z["max_norm_drift"]))


@dataclass(frozen=True)
class Setup:
    """Physical constants and tweezers shared by all runs of one problem."""

    fields: tuple[TweezerField, ...]
    c3: float = C3_DEFAULT
    mass: float = MASS_RB87
    dt: float = DEFAULT_DT
    quantization_axis: tuple[float, float] = (0.0, 1.0)
    r_min: float = 1.0

    @property
    def model(self) -> DipoleModel:
        return DipoleModel(self.c3, self.quantization_axis, self.r_min)

    def packed(self):
        mob, stat = split_fields(self.fields)
        m = self.model
        return m.hp, np.ascontiguousarray(m.mats), mob, stat

    @property
    def mobile(self) -> TweezerField | None:
        for f in self.fields:
            if f.mobile:
                return f
        return None


def step_count(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if not math.isclose(n * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return n


def _control_at(control: ControlSignal, dt: float, nsteps: int):
    sub = control.spacing / dt
    if abs(sub - round(sub)) > 1e-6 * max(1.0, sub):
        raise ValueError(f"dt={dt} does not divide the control spacing {control.spacing}")
    th = np.arange(2 * nsteps + 1) * (0.5 * dt)
    u = control(th)
    return np.ascontiguousarray(u[:, 0]), np.ascontiguousarray(u[:, 1])


def total_force(state: AtomPairState, fields, c3: float = C3_DEFAULT, control_center=None,
                quantization_axis=(0.0, 1.0), r_min: float = 1.0):
    """Tweezer plus dipole force on each atom, (F_atom1, F_atom2)."""
    model = DipoleModel(c3, quantization_axis, r_min)
    der = model.derivatives(state.r1, state.r2, order=1)
    psi = state.psi
    fd = np.array([np.real(np.vdot(psi, der[1] @ psi)), np.real(np.vdot(psi, der[2] @ psi))])
    out = []
    for r, sign in ((state.r1, 1.0), (state.r2, -1.0)):
        f = sign * fd
        for fld in fields:
            f = f - fld.gradient(r, control_center if fld.mobile else None)
        out.append(f)
    return out[0], out[1]


def _raise_status(status, stop, t, record):
    if status == _kernels.GEOMETRY:
        raise IntegrationError(f"interatomic separation fell below the guard radius at t={t:.6g} us",
                               "geometry", t, record)
    if status == _kernels.NONFINITE:
        raise IntegrationError(f"non-finite state at t={t:.6g} us", "nonfinite", t, record)


def run_kernel(initial: AtomPairState, control: ControlSignal, setup: Setup,
               record_propagator=False, freeze=False, damp=1.0, kick_sd=0.0, kicks=None):
    nsteps = step_count(control.T, setup.dt)
    ux, uy = _control_at(control, setup.dt, nsteps)
    hp, mats, mob, stat = setup.packed()
    if kicks is None:
        kicks = np.zeros((0, 4))
    psi0 = np.asarray(initial.psi, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-9:
        raise ValueError("initial wavefunction must be normalised")
    ys, psis, energy, U, W, status, stop, drift = _kernels.forward(
        initial.y.astype(float), psi0.copy(), ux, uy, setup.dt, nsteps, setup.mass, hp, mats,
        mob, stat, record_propagator, freeze, damp, kick_sd, kicks)
    t = np.arange(nsteps + 1) * setup.dt
    u = np.column_stack([ux[::2], uy[::2]])
    rec = TrajectoryRecord(t, ys, psis, energy, u, U if record_propagator else None,
                           W if record_propagator else None, drift)
    if status != _kernels.OK:
        part = TrajectoryRecord(t[:stop + 1], ys[:stop + 1], psis[:stop + 1], energy[:stop + 1],
                                u[:stop + 1], None, None, drift)
        _raise_status(status, stop, float(t[min(stop, nsteps)]), part)
    return rec


def integrate(initial: AtomPairState, control: ControlSignal, fields, c3: float = C3_DEFAULT,
              dt: float = DEFAULT_DT, record_propagator: bool = False, *, mass: float = MASS_RB87,
              quantization_axis=(0.0, 1.0), r_min: float = 1.0,
              freeze_positions: bool = False) -> TrajectoryRecord:
    """Advance the joint state over the control horizon with fixed-step RK4.

    ``freeze_positions`` pins both atoms (infinite-mass limit) so only the
    internal state evolves.

    Raises
    ------
    IntegrationError
        On a guard-radius violation or a non-finite state.
    """
    setup = Setup(tuple(fields), c3, mass, dt, tuple(quantization_axis), r_min)
    return run_kernel(initial, control, setup, record_propagator, freeze_positions)


_GAUSS_OFFSETS = np.array([0.5 - math.sqrt(3.0) / 6.0, 0.5 + math.sqrt(3.0) / 6.0])


def adaptive_nodes(path_fn, T: float, dt: float, bound: float, max_phase_step: float,
                   r_min: float) -> np.ndarray:
    """Time nodes at spacing ``dt`` or finer, refined where ``bound/R³``
    (an upper bound on ‖H‖) would make the phase per step exceed
    ``max_phase_step``."""
    n0 = step_count(T, dt)
    tp = np.linspace(0.0, T, 16 * n0 + 1)
    probe = np.asarray(path_fn(tp), dtype=float)
    sep = np.hypot(probe[:, 2] - probe[:, 0], probe[:, 3] - probe[:, 1])
    if sep.min() < r_min:
        k = int(np.argmin(sep))
        raise GeometryError(f"prescribed path comes within {sep[k]:.3g} um of the partner "
                            f"atom at t={tp[k]:.6g} us")
    dens = np.maximum(1.0 / dt, bound / sep**3 / max_phase_step)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(tp))])
    m = max(n0, math.ceil(cum[-1]))
    nodes = np.interp(np.linspace(0.0, cum[-1], m + 1), cum, tp)
    nodes[0], nodes[-1] = 0.0, T
    return nodes


def propagate_along(path_fn, psi0, T: float, dt: float = DEFAULT_DT, c3: float = C3_DEFAULT,
                    record_propagator: bool = True, quantization_axis=(0.0, 1.0),
                    r_min: float = 1.0, max_phase_step: float = 0.1) -> TrajectoryRecord:
    """Internal-state evolution along prescribed atom positions.

    ``path_fn(t)`` returns an array (len(t), 4) of (r1x, r1y, r2x, r2y).
    Steps are at most ``dt`` and are shortened where the interaction is
    strong, so the record's time grid may be non-uniform.  Momenta in the
    returned record are zero.
    """
    model = DipoleModel(c3, tuple(quantization_axis), r_min)
    t = adaptive_nodes(path_fn, T, dt, abs(c3) * model.norm_bound, max_phase_step, r_min)
    h = np.diff(t)
    tg = t[:-1, None] + h[:, None] * _GAUSS_OFFSETS[None, :]
    path = np.ascontiguousarray(np.asarray(path_fn(t), dtype=float))
    gauss = np.ascontiguousarray(np.asarray(path_fn(tg.ravel()), dtype=float).reshape(-1, 2, 4))
    psis, energy, U, W, status, stop, drift = _kernels.prescribed(
        t, path, gauss, np.asarray(psi0, dtype=complex).copy(), model.hp,
        np.ascontiguousarray(model.mats), record_propagator)
    y = np.zeros((t.size, 8))
    y[:, :4] = path
    if status != _kernels.OK:
        if status == _kernels.GEOMETRY:
            raise GeometryError(f"prescribed path violates the guard radius at t={t[stop]:.6g} us")
        raise IntegrationError("non-finite state", "nonfinite", float(t[stop]))
    return TrajectoryRecord(t, y, psis, energy, None, U if record_propagator else None,
                            W if record_propagator else None, drift)
