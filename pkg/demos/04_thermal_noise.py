"""Thermal robustness of an optimized loop.

Run with ``python3 demos/04_thermal_noise.py``.  Re-optimizes the off-axis
loop (cheap) and replays it under a weak Langevin bath, printing the spread
of the final phases and position errors.  Raise ``REALIZATIONS`` for tighter
statistics; every realization draws from its own seeded stream, so results
do not depend on the worker count.
"""
from aaphase import bundled_config, load_config, optimize, run_ensemble
from aaphase.experiment import build_noise, build_optimizer, build_problem, initial_control

REALIZATIONS = 50

cfg = load_config(bundled_config("p1"))
problem = build_problem(cfg)
result = optimize(initial_control(cfg, problem), problem, build_optimizer(cfg))
problem = problem.with_psi0(result.psi0)

for temp_mk in (0.0, 0.1, 0.5):
    noise = build_noise(cfg.with_updates(noise__temperature=temp_mk,
                                         noise__realizations=REALIZATIONS))
    stats = run_ensemble(result.control, problem, noise)
    print(f"T = {temp_mk} mK: lost {stats.n_lost}/{REALIZATIONS}, "
          f"gamma_g {stats.mean['gamma_g']:.2f} +- {stats.std['gamma_g']:.2f} deg, "
          f"eps1 {stats.mean['eps1'] * 1e3:.2f} +- {stats.std['eps1'] * 1e3:.2f} nm, "
          f"F {stats.mean['F']:.4f}")
