"""How the dipole coupling depends on where the partner sits.

Run with ``python3 demos/01_interaction.py``.  Prints the 4x4 coupling at a
few geometries and how the couplings out of |dd> vary with the angle.
"""
import math

import numpy as np

from aaphase import STATE_LABELS, GeometryInput, build_Hdd

np.set_printoptions(precision=3, suppress=True, linewidth=100)

print("basis:", ", ".join(STATE_LABELS))
for partner in [(0.0, 10.0), (10.0, 0.0), (10 * math.sin(0.9553), 10 * math.cos(0.9553))]:
    geom = GeometryInput((0.0, 0.0), partner)
    print(f"\npartner at ({partner[0]:.2f}, {partner[1]:.2f}) um, "
          f"theta = {math.degrees(geom.theta):.1f} deg, H in rad/us:")
    print(build_Hdd(geom))

# At fixed distance the dd-pf1 coupling changes sign at the magic angle
# (54.7 deg), while the other two channels vanish only on the axes.
print("\ntheta [deg]   <dd|H|pf1>   <dd|H|pf2>   <dd|H|pf3>")
for deg in range(0, 91, 15):
    th = math.radians(deg)
    H = build_Hdd(GeometryInput((0.0, 0.0), (19 * math.sin(th), 19 * math.cos(th))))
    print(f"{deg:10d}  {H[0, 1]:11.4f}  {H[0, 2]:11.4f}  {H[0, 3]:11.4f}")
