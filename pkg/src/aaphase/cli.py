"""``aaphase`` command line: simulate, optimize, scan, noise, phase-report.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .control import ControlSignal
from .dynamics import IntegrationError, TrajectoryRecord
from .experiment import (build_noise, build_optimizer, build_problem, initial_control,
                         scan_axes)
from .hamiltonian import GeometryError
from .noise import QUANTITIES, NoiseStats, RNG_ALGORITHM, run_ensemble
from .optimal_control import (circle_scan, ellipse_scan, evaluate, load_checkpoint, optimize,
                              select_cyclic_state)
from .phases import (DegenerateOverlapError, FactorizationError, NonUnitaryError,
                     phase_report, wrap_degrees)

log = logging.getLogger("aaphase")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
NUMERIC_ERRORS = (IntegrationError, GeometryError, DegenerateOverlapError, FactorizationError,
                  NonUnitaryError, FloatingPointError, np.linalg.LinAlgError)

PLOT_KINDS = ("trajectory", "occupations", "phases", "histograms")


# ---- manifest ------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config_hash: str | None
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    rng: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    status: str = "running"

    def add(self, path) -> str:
        self.outputs.append(str(path))
        return str(path)

    def write(self, out_dir) -> str:
        self.finished = _now()
        payload = asdict(self)
        payload["outputs"] = [{"path": os.path.relpath(p, out_dir), "sha256": _sha256(p)}
                              for p in self.outputs if os.path.exists(p)]
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        return path


# ---- plot data ------------------------------------------------------------

def _save(path, columns, data):
    np.savetxt(path, np.column_stack(data), delimiter=",", fmt="%.17g",
               header=",".join(columns), comments="")
    return str(path)


def emit_plot_data(obj, kind: str, out_dir, prefix: str = "") -> list[str]:
    """Write tabular plot inputs for ``kind`` and return the file paths.

    ``trajectory``, ``occupations`` and ``phases`` take a TrajectoryRecord;
    ``histograms`` takes a NoiseStats.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, f"{prefix}{kind}")
    if kind == "histograms":
        if not isinstance(obj, NoiseStats):
            raise TypeError("histogram data needs a NoiseStats object")
        paths = []
        for q in QUANTITIES:
            h = obj.histograms[q]
            e = np.asarray(h.edges)
            if e.size < 2:
                continue
            paths.append(_save(f"{base}_{q}.csv", ("bin_left", "bin_right", "count"),
                               (e[:-1], e[1:], np.asarray(h.counts))))
        return paths
    if not isinstance(obj, TrajectoryRecord):
        raise TypeError(f"{kind} data needs a TrajectoryRecord")
    rec = obj
    if kind == "trajectory":
        u = rec.u if rec.u is not None else np.full((rec.t.size, 2), np.nan)
        return [_save(f"{base}.csv", ("t_us", "r1x_um", "r1y_um", "r2x_um", "r2y_um",
                                      "ux_um", "uy_um"),
                      (rec.t, rec.r1, rec.r2, u))]
    if kind == "occupations":
        return [_save(f"{base}.csv", ("t_us", "P_dd", "P_pf1", "P_pf2", "P_pf3"),
                      (rec.t, rec.occupations()))]
    # running phases: gamma_d(t) and the remainder of arg<psi0|psi(t)>
    ov = rec.psi @ np.conj(rec.psi[0])
    gd = np.degrees(rec.gamma_d)
    with np.errstate(invalid="ignore"):
        total = np.where(np.abs(ov) > 1e-12, np.degrees(np.angle(ov)), np.nan)
    gg = wrap_degrees(total - gd)
    return [_save(f"{base}.csv", ("t_us", "gamma_d_deg", "gamma_g_deg", "overlap_modulus"),
                  (rec.t, gd, gg, np.abs(ov)))]


# ---- commands -------------------------------------------------------------

def _problem_with_state(cfg, control, problem, psi0=None):
    if psi0 is not None:
        return problem.with_psi0(psi0)
    if problem.initial_state == "cyclic":
        rec = evaluate(control, problem, record_propagator=True).record
        v, _ = select_cyclic_state(rec, problem)
        return problem.with_psi0(v)
    return problem


def _load_control(path):
    """Control from a checkpoint JSON (with its initial state) or a control CSV."""
    if path.endswith(".json"):
        control, psi0, _, _ = load_checkpoint(path)
        return control, psi0
    return ControlSignal.from_csv(path), None


def _write_record_outputs(man, out, record, tag=""):
    p = os.path.join(out, f"{tag}trajectory_full.csv")
    record.to_csv(p)
    man.add(p)
    for kind in ("trajectory", "occupations", "phases"):
        for q in emit_plot_data(record, kind, out, prefix=f"{tag}plot_"):
            man.add(q)
    rep = phase_report(record)
    p = os.path.join(out, f"{tag}phase_report.json")
    rep.to_json(p)
    man.add(p)
    return rep


def cmd_simulate(args, cfg, man, out):
    problem = build_problem(cfg)
    if args.control:
        control, psi0 = _load_control(args.control)
    else:
        control, psi0 = initial_control(cfg, problem), None
    problem = _problem_with_state(cfg, control, problem, psi0)
    ev = evaluate(control, problem)
    p = os.path.join(out, "control.csv")
    control.to_csv(p)
    man.add(p)
    rep = _write_record_outputs(man, out, ev.record)
    p = os.path.join(out, "objective.json")
    with open(p, "w") as fh:
        json.dump(ev.breakdown.as_dict(), fh, indent=2)
    man.add(p)
    print(json.dumps(rep.to_dict(), indent=2))


def cmd_optimize(args, cfg, man, out):
    problem = build_problem(cfg)
    ckpt = os.path.join(out, "checkpoint.json")
    logp = os.path.join(out, "iterations.csv")
    if args.resume:
        control, psi0, _, _ = load_checkpoint(args.resume)
        problem = problem.with_psi0(psi0)
    else:
        control = initial_control(cfg, problem)
        if os.path.exists(logp):
            os.remove(logp)
    params = build_optimizer(cfg, checkpoint_path=ckpt, log_path=logp)
    res = optimize(control, problem, params, rounds=cfg["optimizer.rounds"], resume=args.resume)
    for p in (ckpt, logp):
        man.add(p)
    p = os.path.join(out, "control.csv")
    res.control.to_csv(p)
    man.add(p)
    rep = _write_record_outputs(man, out, res.record)
    summary = {"iterations": res.iterations, "converged": res.converged, "message": res.message,
               "objective": res.breakdown.as_dict(),
               "psi0": [[z.real, z.imag] for z in res.psi0]}
    p = os.path.join(out, "optimization.json")
    with open(p, "w") as fh:
        json.dump(summary, fh, indent=2)
    man.add(p)
    print(json.dumps({**summary["objective"], **rep.to_dict()}, indent=2))


def cmd_scan(args, cfg, man, out):
    problem = build_problem(cfg, dt=cfg["scan.dt"])
    a, b = scan_axes(cfg)
    if cfg["scan.kind"] == "circle":
        ex = cfg["scan.extra"]
        extra = [(ex[i], ex[i + 1]) for i in range(0, len(ex), 2)]
        res = circle_scan(a, b, problem, cfg["scan.direction"], extra, cfg["scan.workers"])
    else:
        extra = []
        res = ellipse_scan(a, b, problem, cfg["scan.direction"], cfg["scan.workers"])
    p = os.path.join(out, "scan.csv")
    res.to_csv(p)
    man.add(p)
    summary = {"columns": list(res.columns), "best": list(res.best), "best_value": res.best_value,
               "extra": [{"point": list(pt), "value": res.value_at(*pt),
                          "percentile_rank": res.percentile_rank(res.value_at(*pt))}
                         for pt in extra]}
    p = os.path.join(out, "scan_summary.json")
    with open(p, "w") as fh:
        json.dump(summary, fh, indent=2)
    man.add(p)
    print(json.dumps(summary, indent=2))


def cmd_noise(args, cfg, man, out):
    noise = build_noise(cfg, seed=args.seed)
    if args.workers:
        from dataclasses import replace

        noise = replace(noise, workers=args.workers)
    man.rng = {"algorithm": RNG_ALGORITHM, "seed": noise.seed,
               "substreams": "SeedSequence(seed, spawn_key=(realization,))",
               "realizations": noise.n_realizations}
    problem = build_problem(cfg)
    if args.control:
        control, psi0 = _load_control(args.control)
    else:
        control, psi0 = initial_control(cfg, problem), None
    problem = _problem_with_state(cfg, control, problem, psi0)
    stats = run_ensemble(control, problem, noise)
    for name, writer in (("noise_realizations.csv", stats.to_csv),
                         ("noise_stats.json", stats.to_json)):
        p = os.path.join(out, name)
        writer(p)
        man.add(p)
    for q in emit_plot_data(stats, "histograms", out, prefix="plot_"):
        man.add(q)
    print(json.dumps({"mean": stats.mean, "std": stats.std, "lost": stats.n_lost}, indent=2))


def cmd_phase_report(args, cfg, man, out):
    path = args.record
    rec = TrajectoryRecord.from_npz(path) if path.endswith(".npz") else TrajectoryRecord.from_csv(path)
    rep = phase_report(rec)
    p = os.path.join(out, "phase_report.json")
    rep.to_json(p)
    man.add(p)
    print(rep.to_json())


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "scan": cmd_scan,
            "noise": cmd_noise, "phase-report": cmd_phase_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aaphase", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment .cfg file")
        p.add_argument("--out", help="output directory (default: output.dir of the config)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("simulate", help="integrate the configured or a given control")
    common(p)
    p.add_argument("--control", help="control CSV or optimizer checkpoint JSON")
    p = sub.add_parser("optimize", help="run the adjoint descent")
    common(p)
    p.add_argument("--resume", help="checkpoint JSON to continue from")
    p = sub.add_parser("scan", help="objective over circular or elliptical loops")
    common(p)
    p = sub.add_parser("noise", help="thermal Monte Carlo ensemble")
    common(p)
    p.add_argument("--control", help="control CSV or optimizer checkpoint JSON")
    p.add_argument("--seed", type=int, help="override noise.seed")
    p.add_argument("--workers", type=int, help="override noise.workers")
    p = sub.add_parser("phase-report", help="phases of a stored trajectory")
    common(p, config_required=False)
    p.add_argument("--record", required=True, help="trajectory CSV or NPZ")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else None
    except ConfigError as exc:
        print(f"aaphase: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"aaphase: cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_IO
    out = args.out or (cfg["output.dir"] if cfg else ".")
    if cfg is not None and not args.out:
        out = cfg.resolve(out)
    man = RunManifest(args.command, args.config, cfg.hash() if cfg else None)
    t0 = time.perf_counter()
    try:
        os.makedirs(out, exist_ok=True)
        if cfg is not None:
            p = os.path.join(out, "config.resolved.cfg")
            with open(p, "w") as fh:
                fh.write(cfg.serialize())
            man.add(p)
        COMMANDS[args.command](args, cfg, man, out)
    except ConfigError as exc:
        print(f"aaphase: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"aaphase: numerical failure: {exc}", file=sys.stderr)
        man.status = f"numerical failure: {exc}"
        _try_manifest(man, out)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"aaphase: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # inputs that parse but are inconsistent (control horizon, CSV headers)
        print(f"aaphase: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    man.status = "ok"
    log.info("finished in %.1f s", time.perf_counter() - t0)
    _try_manifest(man, out)
    return 0


def _try_manifest(man, out):
    try:
        man.write(out)
    except OSError as exc:
        print(f"aaphase: cannot write manifest: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
