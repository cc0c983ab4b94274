"""Goal/cost functionals, adjoint gradient and descent for tweezer loops.

The costates are the derivatives of the objective with respect to the
forward state: ``lam[0:4]`` pairs with the positions (r1, r2), ``lam[4:8]``
with the momenta and the complex ``phi`` with the wavefunction, using the
convention dJ = Re(phi^dagger dpsi).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .control import ControlSignal, loop_control
from .dynamics import (AtomPairState, IntegrationError, Setup, TrajectoryRecord,
                       propagate_along, run_kernel, step_count)
from .hamiltonian import GeometryError
from .phases import (PhaseReport, aa_eigenphases, cyclic_dynamical_phase, phase_report,
                     separability_gradient, separability_value)

log = logging.getLogger(__name__)

PHASE_VARIANTS = ("dynamical", "geometric")
PAIRINGS = ("momentum", "position")
INITIAL_STATE_MODES = ("fixed", "cyclic")


@dataclass(frozen=True)
class Weights:
    chi_r: float = 1e3
    chi_p: float = 10.0
    chi_psi: float = 1.0
    chi_dy: float = 1.0
    nu_x: float = 1e-4
    nu_y: float = 1e-4

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"weight {name} must be finite and non-negative, got {v}")
        if self.nu_x <= 0 or self.nu_y <= 0:
            raise ValueError("cost weights nu_x, nu_y must be positive")


@dataclass
class Problem:
    """Everything but the control that fixes the objective.

    ``initial_state="cyclic"`` means ``psi0`` is periodically replaced by an
    eigenvector of the cycle propagator (see :func:`select_cyclic_state`);
    within one descent phase it is held fixed.
    """

    setup: Setup
    r1: tuple[float, float]
    r2: tuple[float, float]
    psi0: np.ndarray
    weights: Weights = field(default_factory=Weights)
    T: float = 30.0
    n: int = 300
    phase_variant: str = "dynamical"
    pairing: str = "momentum"
    include_separability: bool = True
    initial_state: str = "fixed"

    def __post_init__(self):
        self.psi0 = np.asarray(self.psi0, dtype=complex)
        self.psi0 = self.psi0 / np.linalg.norm(self.psi0)
        if self.phase_variant not in PHASE_VARIANTS:
            raise ValueError(f"phase_variant must be one of {PHASE_VARIANTS}")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")
        if self.initial_state not in INITIAL_STATE_MODES:
            raise ValueError(f"initial_state must be one of {INITIAL_STATE_MODES}")

    @property
    def initial(self) -> AtomPairState:
        return AtomPairState(self.r1, self.r2, psi=self.psi0)

    def with_psi0(self, psi0) -> "Problem":
        return replace(self, psi0=np.asarray(psi0, dtype=complex))


@dataclass
class ObjectiveBreakdown:
    term_i: float
    term_ii: float
    term_iii: float
    term_iv: float
    cost_K: float
    total: float

    @classmethod
    def from_terms(cls, i, ii, iii, iv, k) -> "ObjectiveBreakdown":
        return cls(float(i), float(ii), float(iii), float(iv), float(k),
                   float(((i + ii) + (iii + iv)) + k))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Evaluation:
    control: ControlSignal
    record: TrajectoryRecord
    breakdown: ObjectiveBreakdown
    psi0: np.ndarray


# ---- objective --------------------------------------------------------

def _phase_angle(record: TrajectoryRecord, psi0, variant: str) -> tuple[float, complex]:
    c = complex(np.vdot(psi0, record.psi[-1]))
    gd = float(record.gamma_d[-1])
    if variant == "dynamical":
        return gd, c
    gg = math.atan2(c.imag, c.real) - gd
    return math.remainder(gg, 2 * math.pi), c


def quantum_terms(record: TrajectoryRecord, psi0, weights: Weights, variant="dynamical",
                  include_separability=True) -> tuple[float, float, float]:
    gamma, c = _phase_angle(record, psi0, variant)
    ii = -weights.chi_psi * abs(c) ** 2
    iii = weights.chi_dy * abs(np.exp(0.5j * gamma) - 1.0) ** 2
    iv = -separability_value(record.psi[-1]) if include_separability else 0.0
    return ii, iii, iv


def breakdown_from_record(record: TrajectoryRecord, control: ControlSignal,
                          problem: Problem) -> ObjectiveBreakdown:
    w = problem.weights
    y0, yT = record.y[0], record.y[-1]
    dr = yT[:4] - y0[:4]
    term_i = 0.5 * (w.chi_r * dr @ dr + w.chi_p * yT[4:] @ yT[4:])
    ii, iii, iv = quantum_terms(record, problem.psi0, w, problem.phase_variant,
                                problem.include_separability)
    return ObjectiveBreakdown.from_terms(term_i, ii, iii, iv, control.cost(w.nu_x, w.nu_y))


def evaluate(control: ControlSignal, problem: Problem,
             record_propagator: bool | None = None) -> Evaluation:
    if record_propagator is None:
        record_propagator = problem.initial_state == "cyclic"
    rec = run_kernel(problem.initial, control, problem.setup, record_propagator)
    return Evaluation(control, rec, breakdown_from_record(rec, control, problem), problem.psi0)


def evaluate_objective(control: ControlSignal, problem: Problem) -> ObjectiveBreakdown:
    """G + K for ``control``; integration failures propagate."""
    return evaluate(control, problem).breakdown


# ---- adjoint ----------------------------------------------------------

@dataclass
class AdjointSeries:
    """Costates at every second integrator step (times ``t``)."""

    t: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    lam_gamma: float

    @property
    def r1h(self):
        return self.lam[:, 0:2]

    @property
    def r2h(self):
        return self.lam[:, 2:4]

    @property
    def p1h(self):
        return self.lam[:, 4:6]

    @property
    def p2h(self):
        return self.lam[:, 6:8]


def terminal_costates(record: TrajectoryRecord, problem: Problem):
    """(lam_T, phi_T, lam_gamma) for the objective of ``problem``."""
    w = problem.weights
    psi0 = problem.psi0
    y0, yT = record.y[0], record.y[-1]
    lam_T = np.concatenate([w.chi_r * (yT[:4] - y0[:4]), w.chi_p * yT[4:]])
    psiT = record.psi[-1]
    c = complex(np.vdot(psi0, psiT))
    phi_T = -2.0 * w.chi_psi * c * psi0
    if problem.include_separability:
        phi_T = phi_T - separability_gradient(psiT)
    gamma, _ = _phase_angle(record, psi0, problem.phase_variant)
    s = w.chi_dy * math.sin(0.5 * gamma)
    if problem.phase_variant == "dynamical":
        lam_gamma = s
    else:
        # gamma_g = arg c - gamma_d
        lam_gamma = -s
        if abs(c) > 0:
            phi_T = phi_T + s * 1j * psi0 / np.conj(c)
    return lam_T, np.asarray(phi_T, dtype=complex), lam_gamma


def integrate_adjoint(record: TrajectoryRecord, problem: Problem) -> AdjointSeries:
    """Backward RK4 sweep of the costate system from t = T to 0."""
    nsteps = record.t.size - 1
    if nsteps % 2:
        raise ValueError("the adjoint sweep needs an even number of forward steps")
    lam_T, phi_T, lam_gamma = terminal_costates(record, problem)
    hp, mats, mob, stat = problem.setup.packed()
    lams, phis = _kernels.adjoint(record.y, record.psi, np.ascontiguousarray(record.u[:, 0]),
                                  np.ascontiguousarray(record.u[:, 1]), record.dt, nsteps,
                                  problem.setup.mass, hp, mats, mob, stat, lam_gamma,
                                  lam_T, phi_T, -1)
    if not (np.all(np.isfinite(lams)) and np.all(np.isfinite(phis))):
        raise FloatingPointError("non-finite adjoint state")
    return AdjointSeries(record.t[::2], lams, phis, lam_gamma)


def _quadrature_weights(m: int, h: float) -> np.ndarray:
    """Composite Simpson on m intervals when m is even, trapezoid otherwise."""
    w = np.full(m + 1, h)
    if m % 2 == 0 and m >= 2:
        w[1:-1:2] = 4 * h / 3
        w[2:-1:2] = 2 * h / 3
        w[0] = w[-1] = h / 3
    else:
        w[0] = w[-1] = h / 2
    return w


def functional_derivative(record: TrajectoryRecord, adj: AdjointSeries, problem: Problem):
    """dG/du(t) at the costate times, shape (len(adj.t), 2)."""
    mobile = problem.setup.mobile
    if mobile is None:
        return np.zeros((adj.t.size, 2))
    y = record.y[::2]
    u = record.u[::2]
    pair = adj.lam[:, 4:8] if problem.pairing == "momentum" else adj.lam[:, 0:4]
    g = np.zeros((adj.t.size, 2))
    for a in range(2):
        hess = mobile.hessian(y[:, 2 * a:2 * a + 2] - u, (0.0, 0.0))
        g += np.einsum("kj,kji->ki", pair[:, 2 * a:2 * a + 2], hess)
    return g


def control_gradient(evaluation: Evaluation, problem: Problem,
                     adj: AdjointSeries | None = None, pin_endpoints: bool = True) -> np.ndarray:
    """Gradient of G + K with respect to the control samples, shape (N+1, 2)."""
    control, record = evaluation.control, evaluation.record
    if adj is None:
        adj = integrate_adjoint(record, problem)
    if not math.isclose(record.T, control.T, rel_tol=1e-12):
        raise ValueError("record and control horizons differ")
    g = functional_derivative(record, adj, problem)
    wq = _quadrature_weights(adj.t.size - 1, adj.t[1] - adj.t[0])
    sp = control.spline
    grad = np.stack([sp.transpose(adj.t, wq * g[:, 0]), sp.transpose(adj.t, wq * g[:, 1])], axis=1)
    grad += control.cost_gradient(problem.weights.nu_x, problem.weights.nu_y)
    if pin_endpoints:
        grad[0] = grad[-1] = 0.0
    return grad


# ---- cyclic initial state ----------------------------------------------

def select_cyclic_state(record: TrajectoryRecord, problem: Problem):
    """Eigenvector of U(T) that minimises the quantum part of the objective.

    The dynamical phase of each candidate comes from W = ∫ U†HU dt of the
    run, so no extra integration is needed.  Returns (psi0, score).
    """
    if record.propagator is None or record.energy_gram is None:
        raise ValueError("record lacks the propagator")
    w = problem.weights
    best = None
    for phase_deg, v in aa_eigenphases(record.propagator):
        gd = cyclic_dynamical_phase(record.energy_gram, v)
        psiT = record.propagator @ v
        c = np.vdot(v, psiT)
        if problem.phase_variant == "dynamical":
            gamma = gd
        else:
            gamma = math.remainder(math.atan2(c.imag, c.real) - gd, 2 * math.pi)
        score = (-w.chi_psi * abs(c) ** 2 + w.chi_dy * abs(np.exp(0.5j * gamma) - 1) ** 2
                 - (separability_value(psiT) if problem.include_separability else 0.0))
        if best is None or score < best[1]:
            best = (v, score)
    return best


# ---- descent ----------------------------------------------------------

@dataclass
class OptimizerParams:
    max_iter: int = 200
    tol: float = 1e-6
    method: str = "gd"
    step0: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    momentum: float = 0.9
    memory: int = 10
    reselect_every: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.method not in ("gd", "nesterov", "lbfgs"):
            raise ValueError(f"unknown descent method {self.method!r}")


@dataclass
class OptimizationResult:
    control: ControlSignal
    record: TrajectoryRecord
    report: PhaseReport | None
    history: list[dict]
    converged: bool
    iterations: int
    psi0: np.ndarray
    message: str = ""

    @property
    def breakdown(self) -> ObjectiveBreakdown:
        h = self.history[-1]
        return ObjectiveBreakdown(*(h[k] for k in ("term_i", "term_ii", "term_iii", "term_iv",
                                                     "cost_K", "total")))


LOG_FIELDS = ("iteration", "term_i", "term_ii", "term_iii", "term_iv", "cost_K", "total",
              "grad_norm", "step", "backtracks", "event")


def _safe_eval(samples, control, problem):
    try:
        return evaluate(control.with_samples(samples[:, 0], samples[:, 1]), problem)
    except (IntegrationError, GeometryError):
        return None


def _lbfgs_direction(g, S, Y):
    q = g.copy()
    alpha = []
    for s, y in reversed(list(zip(S, Y))):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alpha.append((a, rho, s, y))
        q -= a * y
    if S:
        q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    for a, rho, s, y in reversed(alpha):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _line_search(base, d, x, grad, f0, t0, control, problem, params):
    """Backtrack from ``base`` along ``d`` until the Armijo condition holds
    relative to the current point ``x``.  Returns (accepted, step, backtracks)."""
    slope = float(np.vdot(grad, d)) if base is x else -float(np.vdot(d, d))
    if slope >= 0:
        d = -grad
        base = x
        slope = -float(np.vdot(grad, grad))
    t = t0
    for nb in range(params.max_backtracks + 1):
        trial_x = base + t * d
        trial = _safe_eval(trial_x, control, problem)
        if trial is not None and trial.breakdown.total <= f0 + params.armijo_c * t * slope \
                and trial.breakdown.total <= f0:
            return (trial_x, trial), t, nb
        t *= params.backtrack
    return None, t, params.max_backtracks


def save_checkpoint(path, control: ControlSignal, psi0, history, state: dict) -> None:
    payload = {
        "version": 1,
        "t_grid": control.t_grid.tolist(),
        "ux": control.ux.tolist(),
        "uy": control.uy.tolist(),
        "psi0": [[z.real, z.imag] for z in np.asarray(psi0, dtype=complex)],
        "history": history,
        "state": state,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path) as fh:
        d = json.load(fh)
    control = ControlSignal(np.array(d["t_grid"]), np.array(d["ux"]), np.array(d["uy"]))
    psi0 = np.array([complex(a, b) for a, b in d["psi0"]])
    return control, psi0, d["history"], d.get("state", {})


def _append_log(path, row):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new:
            w.writeheader()
        w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in LOG_FIELDS})


def descend(control: ControlSignal, problem: Problem, params: OptimizerParams | None = None,
            resume: str | None = None) -> OptimizationResult:
    """Minimise G + K over the control samples with an Armijo line search.

    The first and last samples stay pinned.  With ``initial_state="cyclic"``
    and ``reselect_every > 0`` the initial wavefunction is re-chosen among the
    cycle eigenvectors every that many iterations; the swap is kept only when
    it lowers the objective, so accepted objective values never increase.
    """
    params = params or OptimizerParams()
    history: list[dict] = []
    step = params.step0
    start_iter = 0
    if resume is not None:
        control, psi0, history, state = load_checkpoint(resume)
        problem = problem.with_psi0(psi0)
        step = state.get("step", step)
        start_iter = state.get("iteration", len(history))
    current = evaluate(control, problem)
    x = control.samples()
    grad = control_gradient(current, problem)
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    velocity = np.zeros_like(x)

    def record_row(it, gnorm, stp, nb, event):
        row = {"iteration": it, **current.breakdown.as_dict(), "grad_norm": float(gnorm),
               "step": float(stp), "backtracks": nb, "event": event}
        history.append(row)
        if params.log_path:
            _append_log(params.log_path, row)

    if not history:
        record_row(0, np.linalg.norm(grad), 0.0, 0, "start")
    converged = False
    message = "max iterations reached"
    it = start_iter
    while it < start_iter + params.max_iter:
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= params.tol:
            converged = True
            message = "gradient tolerance reached"
            break
        it += 1
        f0 = current.breakdown.total
        base, d = x, -grad
        t0 = step
        if params.method == "lbfgs" and S:
            d = _lbfgs_direction(grad.ravel(), S, Y).reshape(x.shape)
            t0 = 1.0
        elif params.method == "nesterov" and velocity.any():
            look = _safe_eval(x + params.momentum * velocity, control, problem)
            if look is not None and look.breakdown.total <= f0:
                base = x + params.momentum * velocity
                d = -control_gradient(look, problem)
        d[0] = d[-1] = 0.0
        accepted, t, nb = _line_search(base, d, x, grad, f0, t0, control, problem, params)
        if accepted is None and (base is not x or params.method == "lbfgs"):
            # drop curvature / momentum information and retry along -grad
            S.clear()
            Y.clear()
            velocity[:] = 0.0
            d = -grad
            d[0] = d[-1] = 0.0
            accepted, t, nb = _line_search(x, d, x, grad, f0, step, control, problem, params)
        if accepted is None:
            message = "line search failed"
            it -= 1
            break
        new_x, new_eval = accepted
        new_grad = control_gradient(new_eval, problem)
        if params.method == "lbfgs":
            s_vec = (new_x - x).ravel()
            y_vec = (new_grad - grad).ravel()
            if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                S.append(s_vec)
                Y.append(y_vec)
                if len(S) > params.memory:
                    S.pop(0)
                    Y.pop(0)
        velocity = new_x - x
        if params.method != "lbfgs" or len(S) <= 1:
            step = t / params.backtrack if nb == 0 else t
        x, current, grad = new_x, new_eval, new_grad
        control = current.control
        record_row(it, np.linalg.norm(grad), t, nb, "step")
        if (problem.initial_state == "cyclic" and params.reselect_every
                and it % params.reselect_every == 0):
            switched = _try_reselect(current, problem)
            if switched is not None:
                problem, current = switched
                grad = control_gradient(current, problem)
                S.clear()
                Y.clear()
                velocity[:] = 0.0
                record_row(it, np.linalg.norm(grad), 0.0, 0, "reselect")
        if params.checkpoint_path:
            save_checkpoint(params.checkpoint_path, control, problem.psi0, history,
                            {"iteration": it, "step": step})
    if params.checkpoint_path:
        save_checkpoint(params.checkpoint_path, control, problem.psi0, history,
                        {"iteration": it, "step": step})
    try:
        report = phase_report(current.record)
    except ValueError:
        report = None
    return OptimizationResult(control, current.record, report, history, converged, it - start_iter,
                              problem.psi0, message)


def _try_reselect(current: Evaluation, problem: Problem):
    rec = current.record
    if rec.propagator is None:
        rec = evaluate(current.control, problem, record_propagator=True).record
    v, _ = select_cyclic_state(rec, problem)
    if abs(abs(np.vdot(v, problem.psi0)) - 1.0) < 1e-12:
        return None
    cand_problem = problem.with_psi0(v)
    try:
        cand = evaluate(current.control, cand_problem)
    except (IntegrationError, GeometryError):
        return None
    if cand.breakdown.total < current.breakdown.total:
        log.info("initial state re-selected: %.6g -> %.6g", current.breakdown.total,
                 cand.breakdown.total)
        return cand_problem, cand
    return None


def optimize(control: ControlSignal, problem: Problem, params: OptimizerParams | None = None,
             rounds: int = 1, resume: str | None = None) -> OptimizationResult:
    """Descent, alternated with cyclic-state re-selection when requested."""
    params = params or OptimizerParams()
    if problem.initial_state == "cyclic" and resume is None:
        rec = evaluate(control, problem, record_propagator=True).record
        psi0, _ = select_cyclic_state(rec, problem)
        problem = problem.with_psi0(psi0)
    result = None
    history: list[dict] = []
    iterations = 0
    for k in range(max(1, rounds)):
        result = descend(control, problem, params, resume=resume if k == 0 else None)
        history.extend(result.history if k == 0 else result.history[1:])
        iterations += result.iterations
        control = result.control
        problem = problem.with_psi0(result.psi0)
        if problem.initial_state != "cyclic" or k == rounds - 1:
            break
        current = evaluate(control, problem, record_propagator=True)
        switched = _try_reselect(current, problem)
        if switched is None:
            break
        problem = switched[0]
    result.history = history
    result.iterations = iterations
    return result


# ---- circle / ellipse initialisation scans ------------------------------

@dataclass
class ScanResult:
    table: np.ndarray  # rows (r, d, objective)
    best: tuple[float, float]
    best_value: float
    columns: tuple[str, ...] = ("r_um", "d_um", "objective")

    def value_at(self, r, d) -> float:
        k = np.flatnonzero(np.isclose(self.table[:, 0], r) & np.isclose(self.table[:, 1], d))
        if k.size == 0:
            raise KeyError((r, d))
        return float(self.table[k[0], 2])

    def percentile_rank(self, value) -> float:
        """Fraction of finite entries strictly better than ``value``."""
        v = self.table[:, 2]
        v = v[np.isfinite(v)]
        return float(np.mean(v < value))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.table, delimiter=",", fmt="%.17g",
                   header=",".join(self.columns), comments="")


def circle_geometry(r: float, d: float, anchor, toward):
    """Circle centre C at distance ``d`` from the pinned atom at ``anchor``
    along the direction to ``toward``; the start point is the far side of
    the circle, at distance r + d from the anchor."""
    anchor = np.asarray(anchor, dtype=float)
    e = np.asarray(toward, dtype=float) - anchor
    e /= np.linalg.norm(e)
    center = anchor + d * e
    return center, center + r * e


def loop_objective(path_fn, problem: Problem, control: ControlSignal) -> float:
    """Quantum terms of G plus K for atoms moved along prescribed paths."""
    w = problem.weights
    rec = propagate_along(path_fn, problem.psi0, problem.T, problem.setup.dt, problem.setup.c3,
                          record_propagator=problem.initial_state == "cyclic",
                          quantization_axis=problem.setup.quantization_axis,
                          r_min=problem.setup.r_min)
    if problem.initial_state == "cyclic":
        _, score = select_cyclic_state(rec, problem)
    else:
        score = sum(quantum_terms(rec, problem.psi0, w, problem.phase_variant,
                                  problem.include_separability))
    return float(score + control.cost(w.nu_x, w.nu_y))


def _circle_cell(r, d, problem: Problem, direction: int):
    center, start = circle_geometry(r, d, problem.r2, problem.r1)
    if abs(d - r) < problem.setup.r_min:
        return math.inf
    T = problem.T
    anchor = np.asarray(problem.r2, dtype=float)

    def path_fn(t):
        p = loop_path_xy(t, T, start, center, (r, r), direction)
        return np.column_stack([p, np.broadcast_to(anchor, p.shape)])

    control = loop_control(T, problem.n, start, center, (r, r), 0.0, direction, "uniform")
    try:
        return loop_objective(path_fn, problem, control)
    except GeometryError:
        return math.inf


def loop_path_xy(t, T, start, center, semi_axes, direction=1, orientation=0.0, profile="uniform"):
    from .control import loop_path

    return loop_path(t, T, start, center, semi_axes, orientation, direction, profile)


def circle_scan(r_range, d_range, problem: Problem, direction: int = 1,
                extra_points=(), workers: int = 1) -> ScanResult:
    """Objective of uniform-speed circular loops over an (r, d) grid.

    The moving atom follows the circle exactly and the partner stays at
    ``problem.r2``; geometries that violate the guard radius score +inf.
    ``extra_points`` adds off-grid (r, d) cells to the table.
    """
    cells = [(float(r), float(d)) for r in r_range for d in d_range]
    cells += [(float(r), float(d)) for r, d in extra_points]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            vals = list(ex.map(lambda c: _circle_cell(c[0], c[1], problem, direction), cells))
    else:
        vals = [_circle_cell(r, d, problem, direction) for r, d in cells]
    table = np.array([(r, d, v) for (r, d), v in zip(cells, vals)])
    k = int(np.argmin(np.where(np.isfinite(table[:, 2]), table[:, 2], np.inf)))
    return ScanResult(table, (table[k, 0], table[k, 1]), float(table[k, 2]))


def ellipse_scan(semi_x_range, semi_y_range, problem: Problem, direction: int = 1,
                 workers: int = 1) -> ScanResult:
    """Like :func:`circle_scan` for ellipses through the start point whose
    first semi-axis points from the partner atom to the start point; the
    loop extends away from the partner."""
    start = np.asarray(problem.r1, dtype=float)
    anchor = np.asarray(problem.r2, dtype=float)
    e = start - anchor
    orient = math.atan2(e[1], e[0])
    e /= np.linalg.norm(e)
    T = problem.T

    def cell(a, b):
        center = start + a * e
        ctrl = loop_control(T, problem.n, start, center, (a, b), orient, direction, "uniform")

        def path_fn(t):
            p = loop_path_xy(t, T, start, center, (a, b), direction, orient)
            return np.column_stack([p, np.broadcast_to(anchor, p.shape)])

        try:
            return loop_objective(path_fn, problem, ctrl)
        except GeometryError:
            return math.inf

    cells = [(float(a), float(b)) for a in semi_x_range for b in semi_y_range]
    vals = [cell(a, b) for a, b in cells]
    table = np.array([(a, b, v) for (a, b), v in zip(cells, vals)])
    k = int(np.argmin(np.where(np.isfinite(table[:, 2]), table[:, 2], np.inf)))
    return ScanResult(table, (table[k, 0], table[k, 1]), float(table[k, 2]),
                      ("semi_major_um", "semi_minor_um", "objective"))


# ---- initial guesses ---------------------------------------------------

def _offset_for_force(fmag, depth, sigma):
    """Distance δ < σ/√2 at which a Gaussian well pulls with force ``fmag``."""
    k = 2.0 * depth / sigma**2
    fmax = k * sigma / math.sqrt(2.0) * math.exp(-0.5)
    if np.any(fmag >= fmax):
        raise ValueError("requested acceleration exceeds what the tweezer can supply")
    d = fmag / k
    for _ in range(60):  # fixed point of δ = f e^{δ²/σ²} / k, contracting below σ/√2
        d = fmag / k * np.exp(d * d / sigma**2)
    return d


def tracking_control(path_fn, problem: Problem, h: float = 1e-3) -> ControlSignal:
    """Tweezer centre that makes the moving atom follow ``path_fn`` exactly,
    neglecting the dipole force: the well is displaced from the atom so its
    restoring force equals m r̈ minus the static-trap forces."""
    setup = problem.setup
    mobile = setup.mobile
    if mobile is None:
        raise ValueError("no mobile tweezer")
    t = np.linspace(0.0, problem.T, problem.n + 1)
    r = np.asarray(path_fn(t), dtype=float)
    acc = (np.asarray(path_fn(t + h)) - 2 * r + np.asarray(path_fn(t - h))) / h**2
    need = setup.mass * acc
    for f in setup.fields:
        if not f.mobile:
            need = need + f.gradient(r)
    mag = np.linalg.norm(need, axis=1)
    d = _offset_for_force(mag, mobile.depth, mobile.sigma)
    unit = np.divide(need, mag[:, None], out=np.zeros_like(need), where=mag[:, None] > 0)
    u = r + d[:, None] * unit
    u[0] = u[-1] = problem.r1
    return ControlSignal(t, u[:, 0], u[:, 1])
