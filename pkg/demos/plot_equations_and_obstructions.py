"""
Solving Hu = f and Xu = f
=========================

Manufactured solutions for both equations on the torus, then the mode
scan of obstruction dimensions for a few cone configurations.
"""

import math

import numpy as np

from flatspec.cohomology import CROperatorPair, solve_X
from flatspec.differentials import find_nonzero_modes
from flatspec.diophantine import liminf_estimate, verify_condition
from flatspec.harmonic import ThetaFourierField, project
from flatspec.mesh import build_mesh
from flatspec.spectral import solve_H
from flatspec.surface import flat_torus

###############################################################################
# The foliated Laplacian
# ----------------------
# cos(2 pi x) is an eigenfunction with eigenvalue 4 pi^2, so the solution is
# f / 4 pi^2 up to an O(h^2) discretisation error.

torus = flat_torus()
for m in (8, 16, 32):
    me = build_mesh(torus, m)
    f = project(me, lambda t, x, y, th: np.cos(2 * np.pi * x) + 0 * th, 0)
    u = solve_H(f).u
    err = (u - f * (1 / (4 * math.pi ** 2))).norm() / (f.norm() / (4 * math.pi ** 2))
    print(f"m={m:2d}  relative error {err:.2e}")

###############################################################################
# The geodesic flow
# -----------------
# Take v, set f = Xv, and solve back.  The truncated system recovers v to
# rounding error because v has no component along constant sections.

me = build_mesh(torus, 8)
pair = CROperatorPair(me)
x, y = me.vertex_xy.T
v = ThetaFourierField(me, 2, {n: np.exp(2j * np.pi * (x + n * y)) / (1 + n * n) for n in range(-2, 3)})
res = solve_X(pair.X(v), pair=pair, N=6)
print("solve_X residual", f"{res.residual:.1e}", " recovery error", f"{(res.u - v).norm() / v.norm():.1e}")

###############################################################################
# Diophantine input
# -----------------
# The golden ratio is the worst approximable number: n d(n theta, Z) stays
# above 0.38 and its tail minimum approaches 1/sqrt 5.

g = (math.sqrt(5) - 1) / 2
print("golden: min", round(verify_condition(g, 1.0, 10 ** 5).C_effective, 4),
      " tail min", round(liminf_estimate(g, 10 ** 5)[0], 5))

###############################################################################
# Obstruction dimensions
# ----------------------
# Nonzero modes of the meromorphic spaces on three genus-0 configurations.

for alphas in (["-2/3"] * 3, ["-1/2"] * 4, ["-1/2", "-2/3", "-5/6"]):
    scan = find_nonzero_modes(0, alphas, r=0, N_scan=12)
    print(f"alphas {alphas}: nonzero modes {scan.modes}")
