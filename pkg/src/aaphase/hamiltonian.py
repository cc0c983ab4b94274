"""Dipole-dipole Hamiltonian of two Rydberg atoms in the four-state basis.

The angular operator is written as a quadratic form in (cos θ, sin θ),

    D(θ) = cos²θ A + sin²θ B + sinθ cosθ X,

so that H = C3 (c² A + s² B + c s X) / R⁵ with c, s the components of the
relative position along and across the quantization axis.  Derivatives with
respect to the atom positions are analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .units import C3_DEFAULT
from .wigner import AngularMomentumState, dipole_element

D32 = AngularMomentumState("3/2", "3/2", "d")
P12 = AngularMomentumState("1/2", "1/2", "p")
F52 = AngularMomentumState("5/2", "5/2", "f")
F32 = AngularMomentumState("5/2", "3/2", "f")
F12 = AngularMomentumState("5/2", "1/2", "f")

#: Two-atom states |dd>, |pf1>, |pf2>, |pf3> in their fixed order.
TABLE1 = ((D32, D32), (P12, F52), (P12, F32), (P12, F12))
STATE_LABELS = ("dd", "pf1", "pf2", "pf3")

DEFAULT_AXIS = (0.0, 1.0)
DEFAULT_R_MIN = 1.0

_SQ2 = math.sqrt(2.0)


class GeometryError(ValueError):
    """Interatomic separation below the guard radius."""


def two_atom_operator(qa: int, qb: int, basis=TABLE1) -> np.ndarray:
    """Matrix of d_qa ⊗ d_qb in a two-atom basis."""
    n = len(basis)
    out = np.zeros((n, n))
    for i, (b1, b2) in enumerate(basis):
        for j, (k1, k2) in enumerate(basis):
            out[i, j] = dipole_element(b1, k1, qa) * dipole_element(b2, k2, qb)
    return out


def d_coefficients(theta: float) -> dict[tuple[int, int], float]:
    """Signed weight of each d_qa ⊗ d_qb term of the angular operator."""
    c, s = math.cos(theta), math.sin(theta)
    cross = 3.0 / _SQ2 * s * c
    pm = -(1.0 - 1.5 * s * s)
    pp = -1.5 * s * s
    return {
        (0, 0): 1.0 - 3.0 * c * c,
        (1, -1): pm,
        (-1, 1): pm,
        (1, 1): pp,
        (-1, -1): pp,
        (-1, 0): -cross,
        (1, 0): cross,
        (0, -1): -cross,
        (0, 1): cross,
    }


@lru_cache(maxsize=8)
def _operators(basis=TABLE1) -> dict[tuple[int, int], np.ndarray]:
    return {(qa, qb): two_atom_operator(qa, qb, basis) for qa in (-1, 0, 1) for qb in (-1, 0, 1)}


def build_D(theta: float, basis=TABLE1) -> np.ndarray:
    """Angular operator D(θ) projected onto ``basis``."""
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    ops = _operators(basis)
    out = np.zeros_like(ops[(0, 0)])
    for key, w in d_coefficients(theta).items():
        if w != 0.0:
            out += w * ops[key]
    return out


@lru_cache(maxsize=8)
def quadratic_form(basis=TABLE1) -> np.ndarray:
    """Stack (A, B, X) with D(θ) = cos²θ A + sin²θ B + sinθ cosθ X."""
    a = build_D(0.0, basis)
    b = build_D(math.pi / 2, basis)
    x = 2.0 * build_D(math.pi / 4, basis) - a - b
    mats = np.array([a, b, x])
    # kill round-off from the trigonometric evaluation
    mats[np.abs(mats) < 1e-15] = 0.0
    mats.setflags(write=False)
    return mats


@dataclass(frozen=True)
class GeometryInput:
    """Positions of both atoms in µm and the in-plane quantization axis."""

    r1: tuple[float, float]
    r2: tuple[float, float]
    quantization_axis: tuple[float, float] = DEFAULT_AXIS
    r_min: float = DEFAULT_R_MIN

    @property
    def separation(self) -> float:
        return math.hypot(self.r2[0] - self.r1[0], self.r2[1] - self.r1[1])

    @property
    def theta(self) -> float:
        """Signed angle from the quantization axis to r2 - r1."""
        ex, ey = _unit(self.quantization_axis)
        rx, ry = self.r2[0] - self.r1[0], self.r2[1] - self.r1[1]
        return math.atan2(rx * ey - ry * ex, rx * ex + ry * ey)

    def check(self) -> None:
        if self.separation < self.r_min:
            raise GeometryError(
                f"separation {self.separation:.6g} um below guard radius {self.r_min} um")


def _unit(v) -> tuple[float, float]:
    x, y = float(v[0]), float(v[1])
    n = math.hypot(x, y)
    if n == 0 or not math.isfinite(n):
        raise ValueError(f"quantization axis {v!r} is not a finite nonzero vector")
    return x / n, y / n


@dataclass(frozen=True)
class DipoleModel:
    """Parameters the compiled kernels need to evaluate H and its derivatives."""

    c3: float = C3_DEFAULT
    quantization_axis: tuple[float, float] = DEFAULT_AXIS
    r_min: float = DEFAULT_R_MIN
    mats: np.ndarray = field(default_factory=quadratic_form, repr=False, compare=False)

    @property
    def hp(self) -> np.ndarray:
        ex, ey = _unit(self.quantization_axis)
        return np.array([self.c3, ex, ey, self.r_min])

    @property
    def norm_bound(self) -> float:
        """Upper bound on the spectral norm of the angular operator over all θ."""
        n = [np.linalg.norm(m, 2) for m in self.mats]
        return float(n[0] + n[1] + 0.5 * n[2])

    def derivatives(self, r1, r2, order: int = 2) -> np.ndarray:
        """H and its derivatives in rho = r2 - r1, stacked as in ``_kernels.hderivs``."""
        geom = GeometryInput(tuple(r1), tuple(r2), self.quantization_axis, self.r_min)
        geom.check()
        out = np.zeros((6, 4, 4))
        _kernels.hderivs(float(r2[0] - r1[0]), float(r2[1] - r1[1]), self.hp,
                         np.ascontiguousarray(self.mats), order, out)
        return out


def _model(geom: GeometryInput, c3: float) -> DipoleModel:
    geom.check()
    return DipoleModel(c3, geom.quantization_axis, geom.r_min)


def build_Hdd(geom: GeometryInput, c3: float = C3_DEFAULT) -> np.ndarray:
    """Dipole-dipole Hamiltonian in rad/µs, evaluated through θ and R."""
    geom.check()
    return c3 / geom.separation**3 * build_D(geom.theta)


def grad_Hdd(geom: GeometryInput, c3: float = C3_DEFAULT) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dH/dr1, dH/dr2), each of shape (2, 4, 4) for the x and y components."""
    der = _model(geom, c3).derivatives(geom.r1, geom.r2, order=1)
    g2 = der[1:3].copy()
    return -g2, g2


def hess_Hdd_contract(geom: GeometryInput, c3: float, psi) -> np.ndarray:
    """Second derivatives of <psi|H|psi> in the atom positions.

    Returns ``out[a, b, i, j] = d² <H> / d r^a_i d r^b_j`` with atom indices
    ``a, b`` in {0, 1} and Cartesian indices ``i, j`` in {x, y}.
    """
    psi = np.asarray(psi, dtype=complex)
    der = _model(geom, c3).derivatives(geom.r1, geom.r2, order=2)
    k = np.empty((2, 2))
    for (i, j), idx in (((0, 0), 3), ((0, 1), 4), ((1, 0), 4), ((1, 1), 5)):
        k[i, j] = np.real(np.vdot(psi, der[idx] @ psi))
    out = np.empty((2, 2, 2, 2))
    out[0, 0] = k
    out[1, 1] = k
    out[0, 1] = -k
    out[1, 0] = -k
    return out
