"""Total, dynamical and geometric phases of a cyclic run, and separability."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import TrajectoryRecord

#: Position of each two-atom basis state in the 2 x 4 product space
#: {d, p} (atom 1) x {d, f5/2, f3/2, f1/2} (atom 2).
EMBEDDING = ((0, 0), (1, 1), (1, 2), (1, 3))
FACTOR_DIMS = (2, 4)
DEGENERATE_OVERLAP = 1e-6


class DegenerateOverlapError(ValueError):
    """Overlap too small for its phase to be defined."""


class FactorizationError(ValueError):
    """State does not fit the declared product structure."""


class NonUnitaryError(ValueError):
    """Propagator fails the unitarity check."""


def wrap_degrees(x):
    """Map angles in degrees into (-180, 180]."""
    w = 180.0 - np.mod(180.0 - np.asarray(x, dtype=float), 360.0)
    return float(w) if np.ndim(w) == 0 else w


def fix_phase(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate ``v`` so its first non-negligible component is real positive."""
    v = np.asarray(v, dtype=complex)
    idx = np.flatnonzero(np.abs(v) > tol * max(np.abs(v).max(), 1e-300))
    if idx.size == 0:
        return v
    z = v[idx[0]]
    return v * (abs(z) / z)


def dynamical_phase(record: TrajectoryRecord) -> float:
    """-∫ <Ψ|H|Ψ> dt in degrees (trapezoidal, unwrapped)."""
    return math.degrees(float(record.gamma_d[-1]))


def total_phase_from_overlap(psi0, psiT) -> tuple[float, float]:
    """arg <psi0|psiT> in degrees and |<psi0|psiT>|."""
    c = np.vdot(np.asarray(psi0, dtype=complex), np.asarray(psiT, dtype=complex))
    mod = abs(c)
    if mod < DEGENERATE_OVERLAP:
        raise DegenerateOverlapError(f"overlap modulus {mod:.3g} too small for a phase")
    return wrap_degrees(math.degrees(math.atan2(c.imag, c.real))), float(mod)


def check_unitary(U, tol: float = 1e-6) -> float:
    U = np.asarray(U, dtype=complex)
    err = float(np.abs(U.conj().T @ U - np.eye(U.shape[0])).max())
    if not err <= tol:
        raise NonUnitaryError(f"||U^dagger U - I|| = {err:.3g} exceeds {tol:g}")
    return err


def aa_eigenphases(U_T) -> list[tuple[float, np.ndarray]]:
    """Eigenphases (degrees) and cyclic initial states of a cycle propagator.

    Sorted by eigenphase; eigenvectors are normalised with the first
    nonzero component real positive.
    """
    check_unitary(U_T)
    # Schur form gives orthonormal eigenvectors even for clustered phases.
    from scipy.linalg import schur

    T, Z = schur(np.asarray(U_T, dtype=complex), output="complex")
    lam = np.diag(T)
    out = [(wrap_degrees(math.degrees(np.angle(l))), fix_phase(Z[:, k]))
           for k, l in enumerate(lam)]
    out.sort(key=lambda p: p[0])
    return out


def cyclic_dynamical_phase(W, psi0) -> float:
    """Dynamical phase (radians) of initial state ``psi0`` given
    W = ∫ U† H U dt recorded along the run."""
    psi0 = np.asarray(psi0, dtype=complex)
    return -float(np.real(np.vdot(psi0, np.asarray(W) @ psi0)))


# ---- separability -----------------------------------------------------

def embed(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (len(EMBEDDING),):
        raise FactorizationError(f"expected a {len(EMBEDDING)}-component state, got {psi.shape}")
    M = np.zeros(FACTOR_DIMS, dtype=complex)
    for k, (i, j) in enumerate(EMBEDDING):
        M[i, j] = psi[k]
    return M


def unembed(M) -> np.ndarray:
    return np.array([M[i, j] for i, j in EMBEDDING])


def reduced_densities(psi) -> tuple[np.ndarray, np.ndarray]:
    M = embed(psi)
    return M @ M.conj().T, M.T @ M.conj()


@dataclass
class SeparabilityDecomposition:
    eta1: np.ndarray
    eta2: np.ndarray
    F: float
    schmidt: np.ndarray

    def product_state(self) -> np.ndarray:
        """η₁ ⊗ η₂ restricted to the four two-atom basis states."""
        return unembed(np.outer(self.eta1, self.eta2))


def separability(psi, factor_dims=FACTOR_DIMS) -> SeparabilityDecomposition:
    """Top Schmidt pair of ``psi`` and F = |<Ψ|η₁⊗η₂>|."""
    if tuple(factor_dims) != FACTOR_DIMS:
        raise FactorizationError(f"the two-atom basis factorizes as {FACTOR_DIMS}, got {factor_dims}")
    M = embed(psi)
    u, s, vh = np.linalg.svd(M)
    if s.size > 1 and s[0] - s[1] <= 1e-10 * max(s[0], 1e-300):
        # equal Schmidt weights: prefer the pair whose atom-1 vector leads
        # with the largest first component
        k = int(np.argmax(np.abs(u[0, :2])))
    else:
        k = 0
    eta1 = fix_phase(u[:, k])
    eta2 = fix_phase(vh[k])
    F = float(abs(np.vdot(unembed(np.outer(eta1, eta2)), np.asarray(psi, dtype=complex))))
    return SeparabilityDecomposition(eta1, eta2, F, s)


def separability_value(psi) -> float:
    return float(np.linalg.svd(embed(psi), compute_uv=False)[0])


def separability_gradient(psi, fd_step: float = 1e-7, gap_tol: float = 1e-6) -> np.ndarray:
    """Complex gradient ∂F/∂Re ψ + i ∂F/∂Im ψ.

    Analytic from the top singular pair; central differences when the top
    singular value is not separated from the next by ``gap_tol``.
    """
    M = embed(psi)
    u, s, vh = np.linalg.svd(M)
    if s.size < 2 or s[0] - s[1] > gap_tol:
        G = np.outer(u[:, 0], vh[0])
        return unembed(G)
    psi = np.asarray(psi, dtype=complex)
    g = np.zeros(psi.size, dtype=complex)
    for k in range(psi.size):
        for unit in (1.0, 1j):
            e = np.zeros(psi.size, dtype=complex)
            e[k] = unit * fd_step
            d = (separability_value(psi + e) - separability_value(psi - e)) / (2 * fd_step)
            g[k] += unit * d
    return g


# ---- report -----------------------------------------------------------

@dataclass
class PhaseReport:
    """Phases in degrees; positions in µm; momenta in ħ/µm."""

    gamma_total: float
    gamma_dynamical: float
    gamma_geometric: float
    overlap_modulus: float
    separability_F: float
    loop_error_r: tuple[float, float]
    final_momentum: tuple[tuple[float, float], tuple[float, float]]
    T: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loop_error_r"] = list(self.loop_error_r)
        d["final_momentum"] = [list(p) for p in self.final_momentum]
        d["units"] = {"phases": "deg", "loop_error_r": "um", "final_momentum": "hbar/um", "T": "us"}
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d) -> "PhaseReport":
        return cls(d["gamma_total"], d["gamma_dynamical"], d["gamma_geometric"],
                   d["overlap_modulus"], d["separability_F"], tuple(d["loop_error_r"]),
                   tuple(tuple(p) for p in d["final_momentum"]), d["T"])


def phase_report(record: TrajectoryRecord) -> PhaseReport:
    g_tot, mod = total_phase_from_overlap(record.psi[0], record.psi[-1])
    g_d = dynamical_phase(record)
    err = tuple(float(np.linalg.norm(record.y[-1, 2 * a:2 * a + 2] - record.y[0, 2 * a:2 * a + 2]))
                for a in range(2))
    mom = (tuple(map(float, record.y[-1, 4:6])), tuple(map(float, record.y[-1, 6:8])))
    return PhaseReport(g_tot, g_d, wrap_degrees(g_tot - g_d), mod,
                       separability_value(record.psi[-1]), err, mom, record.T)
