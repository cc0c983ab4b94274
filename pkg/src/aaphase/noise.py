"""Langevin (Ornstein-Uhlenbeck) momentum noise and Monte-Carlo ensembles."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import ControlSignal
from .dynamics import AtomPairState, IntegrationError, Setup, TrajectoryRecord, run_kernel, step_count
from .hamiltonian import GeometryError
from .phases import DegenerateOverlapError, phase_report
from .units import millikelvin_to_rad_per_us, per_ms_to_per_us

RNG_ALGORITHM = "numpy.random.Philox(SeedSequence(seed, spawn_key=(index,)))"
QUANTITIES = ("eps1", "eps2", "F", "gamma_g", "gamma_d")


@dataclass(frozen=True)
class NoiseParams:
    """Bath temperature in K, damping in 1/ms."""

    bath_temperature: float
    lambda_per_ms: float
    seed: int = 0
    n_realizations: int = 1
    workers: int = 1
    escape_sigmas: float = 3.0

    def __post_init__(self):
        if not self.bath_temperature >= 0:
            raise ValueError("bath temperature must be non-negative")
        if not self.lambda_per_ms >= 0:
            raise ValueError("damping coefficient must be non-negative")
        if self.n_realizations < 1:
            raise ValueError("need at least one realization")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @property
    def kT(self) -> float:
        """k_B T_bath in rad/µs."""
        return millikelvin_to_rad_per_us(1e3 * self.bath_temperature)

    @property
    def gamma(self) -> float:
        """Damping rate in 1/µs."""
        return per_ms_to_per_us(self.lambda_per_ms)


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for realization ``index``; unaffected by the ensemble size."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def ou_coefficients(noise: NoiseParams, dt: float, mass: float) -> tuple[float, float]:
    """(damping factor, kick standard deviation) of the exact OU update over dt."""
    g = noise.gamma
    damp = math.exp(-g * dt)
    sd = math.sqrt(noise.kT * mass * -math.expm1(-2.0 * g * dt)) if g > 0 else 0.0
    return damp, sd


def _langevin(initial: AtomPairState, control: ControlSignal, setup: Setup, noise: NoiseParams,
              index: int, record_propagator=False) -> TrajectoryRecord:
    if noise.gamma == 0.0:
        return run_kernel(initial, control, setup, record_propagator)
    nsteps = step_count(control.T, setup.dt)
    damp, sd = ou_coefficients(noise, setup.dt, setup.mass)
    kicks = realization_rng(noise.seed, index).standard_normal((nsteps, 4))
    return run_kernel(initial, control, setup, record_propagator, damp=damp, kick_sd=sd,
                      kicks=kicks)


def langevin_integrate(initial: AtomPairState, control: ControlSignal, fields, c3: float,
                       noise: NoiseParams, dt: float, *, index: int = 0, mass: float | None = None,
                       quantization_axis=(0.0, 1.0), r_min: float = 1.0) -> TrajectoryRecord:
    """Deterministic RK4 step followed by the exact OU momentum update
    p <- p exp(-λ dt) + ξ, Var ξ = k_B T m (1 - exp(-2 λ dt)) per component.

    With λ = 0 this is the deterministic integrator.  ``index`` selects the
    realization stream of ``noise.seed``.
    """
    kw = {} if mass is None else {"mass": mass}
    setup = Setup(tuple(fields), c3, dt=dt, quantization_axis=tuple(quantization_axis),
                  r_min=r_min, **kw)
    return _langevin(initial, control, setup, noise, index)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_dict(self):
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist()}


def fd_histogram(x, max_bins: int = 200) -> Histogram:
    """Freedman-Diaconis bins; Sturges when FD would exceed ``max_bins``."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return Histogram(np.array([0.0, 1.0]), np.array([0]))
    edges = np.histogram_bin_edges(x, bins="fd")
    if edges.size - 1 > max_bins:
        edges = np.histogram_bin_edges(x, bins="sturges")
    counts, edges = np.histogram(x, bins=edges)
    return Histogram(edges, counts)


@dataclass
class NoiseStats:
    """Per-realization table plus summary moments and histograms.

    Lost realizations stay in ``rows`` (flagged) but are excluded from the
    moments and histograms.
    """

    rows: list[dict]
    mean: dict[str, float]
    std: dict[str, float]
    histograms: dict[str, Histogram]
    n_lost: int
    params: NoiseParams
    metadata: dict = field(default_factory=dict)

    def values(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if not r["lost"]], dtype=float)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "n_realizations": len(self.rows),
            "n_lost": self.n_lost,
            "mean": self.mean,
            "std": self.std,
            "histograms": {k: h.to_dict() for k, h in self.histograms.items()},
            "units": {"eps1": "um", "eps2": "um", "F": "1", "gamma_g": "deg", "gamma_d": "deg"},
            "metadata": self.metadata,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        cols = ["index", "lost", "reason", *QUANTITIES]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "lost", "reason", "eps1_um", "eps2_um", "F", "gamma_g_deg",
                        "gamma_d_deg"])
            for r in self.rows:
                w.writerow([r["index"], int(r["lost"]), r["reason"],
                            *(format(r[k], ".17g") for k in QUANTITIES)])
        return cols


def summarize(rows: list[dict], params: NoiseParams, metadata=None) -> NoiseStats:
    kept = [r for r in rows if not r["lost"]]
    mean, std, hist = {}, {}, {}
    for q in QUANTITIES:
        x = np.array([r[q] for r in kept], dtype=float)
        if x.size:
            # moments about the first sample: identical samples give exactly 0
            d = x - x[0]
            mean[q] = float(x[0] + np.mean(d))
            std[q] = float(np.std(d))
        else:
            mean[q] = std[q] = math.nan
        hist[q] = fd_histogram(x)
    return NoiseStats(rows, mean, std, hist, len(rows) - len(kept), params, dict(metadata or {}))


def _realization(index, control, problem, noise) -> dict:
    setup = problem.setup
    row = {"index": index, "lost": False, "reason": ""}
    try:
        rec = _langevin(problem.initial, control, setup, noise, index)
    except (IntegrationError, GeometryError) as exc:
        row.update(lost=True, reason=getattr(exc, "kind", "geometry"),
                   **{q: math.nan for q in QUANTITIES})
        return row
    y0, yT = rec.y[0], rec.y[-1]
    row["eps1"] = float(np.linalg.norm(yT[0:2] - y0[0:2]))
    row["eps2"] = float(np.linalg.norm(yT[2:4] - y0[2:4]))
    try:
        rep = phase_report(rec)
        row.update(F=rep.separability_F, gamma_g=rep.gamma_geometric, gamma_d=rep.gamma_dynamical)
    except DegenerateOverlapError:
        row.update(F=math.nan, gamma_g=math.nan, gamma_d=math.nan)
    # escape check against the trap centres at the final time
    centers = [(f.center if not f.mobile else tuple(control(np.array([control.T]))[0]), f.sigma)
               for f in setup.fields]
    for a in range(2):
        r = yT[2 * a:2 * a + 2]
        d = min(np.hypot(r[0] - c[0], r[1] - c[1]) / s for c, s in centers)
        if d > noise.escape_sigmas:
            row.update(lost=True, reason="escape")
    return row


def run_ensemble(control: ControlSignal, problem, noise: NoiseParams) -> NoiseStats:
    """Run ``noise.n_realizations`` Langevin trajectories of ``problem`` under
    ``control`` and aggregate final-position errors, separability and phases.

    The result depends only on (seed, inputs); worker count and completion
    order do not matter.
    """
    idx = range(noise.n_realizations)
    if noise.workers > 1:
        with ThreadPoolExecutor(noise.workers) as ex:
            rows = list(ex.map(lambda i: _realization(i, control, problem, noise), idx))
    else:
        rows = [_realization(i, control, problem, noise) for i in idx]
    damp, sd = ou_coefficients(noise, problem.setup.dt, problem.setup.mass)
    meta = {"rng": RNG_ALGORITHM, "seed": noise.seed, "dt_us": problem.setup.dt,
            "ou_damping_factor": damp, "ou_kick_sd": sd, "kT_rad_per_us": noise.kT,
            "lambda_per_us": noise.gamma}
    return summarize(rows, noise, meta)
