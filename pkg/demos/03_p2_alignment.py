"""Aligned pair: only one exchange channel opens.

Run with ``python3 demos/03_p2_alignment.py``.  With the interatomic axis on
the quantization axis the coupling conserves total angular momentum
projection, so |dd> only talks to |pf1>.  The optimized loop is printed as a
coarse occupation table.
"""
from aaphase import STATE_LABELS, bundled_config, load_config, optimize
from aaphase.experiment import build_optimizer, build_problem, initial_control

cfg = load_config(bundled_config("p2"))
problem = build_problem(cfg)
result = optimize(initial_control(cfg, problem), problem, build_optimizer(cfg))
rec = result.record
occ = rec.occupations()

print("t [us]  " + "  ".join(f"{s:>6}" for s in STATE_LABELS))
for k in range(0, rec.t.size, rec.t.size // 12):
    print(f"{rec.t[k]:6.2f}  " + "  ".join(f"{p:6.3f}" for p in occ[k]))
print("peak occupations:", ", ".join(f"{s} {p:.2e}" for s, p in zip(STATE_LABELS, occ.max(0))))
print(f"gamma_g = {result.report.gamma_geometric:.2f} deg, "
      f"gamma_d = {result.report.gamma_dynamical:.2f} deg")
