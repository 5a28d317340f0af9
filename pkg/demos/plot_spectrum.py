"""
Mode spectra of the foliated Laplacian
======================================

Least eigenvalues per fibre mode, and the ratio to the squared
Diophantine distance of the holonomy angles.
"""

import math

from flatspec.diophantine import simultaneous_distance
from flatspec.spectral import cheeger_report, lambda_profile
from flatspec.surface import double_of_triangle, flat_torus, holonomy_generators

###############################################################################
# Torus
# -----
# With trivial holonomy every mode sees the plain Laplacian: lambda_n = 0,
# and the first nonzero eigenvalue of mode 0 converges to 4 pi^2.

prof = lambda_profile(flat_torus(), range(0, 3), refinements=(8, 16))
print("torus lambda_0,2 levels:", [round(v, 4) for v in prof.levels[0]],
      " extrapolated:", round(prof.values[0], 4), " 4pi^2 =", round(4 * math.pi ** 2, 4))
print("torus lambda_1, lambda_2:", [f"{prof.bottom[n][-1]:.1e}" for n in (1, 2)])

###############################################################################
# Rational holonomy
# -----------------
# On the equilateral double the holonomy has order 3, so every third mode
# carries a parallel section and its eigenvalue vanishes.

eq = double_of_triangle([math.pi / 3] * 3)
prof = lambda_profile(eq, range(0, 7), refinements=(8,))
for n in prof.modes:
    print(f"n={n}  lambda={prof.bottom[n][0]:10.3e}  q_n={simultaneous_distance([1 / 3] * 3, max(n, 1)) if n else 0:.3f}")

###############################################################################
# Irrational holonomy
# -------------------
# All modes are gapped.  The ratio lambda_n / q_n^2 stays bounded below.

a, b = math.pi / math.sqrt(5), math.pi / math.sqrt(7)
irr = double_of_triangle([a, b, math.pi - a - b])
prof = lambda_profile(irr, range(1, 13), refinements=(8, 16))
rep = cheeger_report(prof, holonomy_generators(irr).angles)
for row in rep.rows:
    print(f"n={row['n']:2d}  lambda={row['lambda']:8.3f}  q_n={row['q']:.4f}  ratio={row['ratio']:8.2f}")
print("c_eff =", round(rep.c_eff, 3), "at n =", rep.argmin)
