"""
Flat surfaces, holonomy and the leaf walk
=========================================

Build the three reference surfaces, read off cone points and holonomy,
then compare return angles on a rational and an irrational double.
"""

###############################################################################
# Surfaces
# --------
# A double triangle is two copies of a triangle glued along their edges.
# Each corner becomes a cone point with total angle twice the corner angle.

import math

import numpy as np

from flatspec.geodesic import UnitTangentState, flow, return_angle_discrepancy
from flatspec.surface import cone_data, double_of_triangle, flat_torus, holonomy_generators

a, b = math.pi / math.sqrt(5), math.pi / math.sqrt(7)
surfaces = {
    "torus": flat_torus(),
    "equilateral double": double_of_triangle([math.pi / 3] * 3),
    "irrational double": double_of_triangle([a, b, math.pi - a - b]),
}

for name, s in surfaces.items():
    cones = [c for c in cone_data(s) if c.is_singular]
    hol = holonomy_generators(s)
    print(f"{name:20s} genus {s.genus}  cone angles / 2pi: "
          f"{[round(c.total_angle / (2 * math.pi), 4) for c in cones]}  "
          f"holonomy / turn: {[round(x, 4) for x in hol.angles]}")

###############################################################################
# Geodesics
# ---------
# Flowing forward and then backward returns to the start.  The direction
# picks up the holonomy of the edges crossed on the way.

irr = surfaces["irrational double"]
start = UnitTangentState(0, 0.3, 0.15, 0.4)
fwd = flow(irr, start, 25.0)
back = flow(irr, fwd.state, -25.0)
print("crossings:", len(fwd.crossings), " end direction:", round(fwd.state.theta, 6),
      " back at start:", np.allclose(back.state.position, start.position))

###############################################################################
# Return angles
# -------------
# Walk along a leaf and record the direction each time the walk enters a
# small disk.  With finite holonomy only a few angles occur.  With dense
# holonomy they equidistribute, so the star discrepancy is small.

for name in ("equilateral double", "irrational double"):
    s = surfaces[name]
    c = s.triangles[0].mean(axis=0)
    rep = return_angle_discrepancy(s, UnitTangentState(0, float(c[0]), float(c[1]), 0.3), 0.1, 2000, seed=0)
    print(f"{name:20s} D* = {rep.discrepancy:.4f}  distinct angles: {len(np.unique(np.round(rep.angles, 9)))}")
