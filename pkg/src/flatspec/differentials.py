"""Dimension bookkeeping for meromorphic n-differentials with prescribed zero orders.

A mode-``n`` obstruction of regularity ``r`` corresponds to a meromorphic
n-differential whose order at each cone point ``p`` (cone parameter
``alpha_p``) satisfies

    k_p > (n - 1) alpha_p - r - 1.

The anti-meromorphic spaces are the complex conjugates of the meromorphic
ones at ``-n``.  Rational cone parameters are handled exactly; irrational
ones with 50-digit arithmetic and a guard band around integer bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import mpmath

__all__ = [
    "DifferentialSpaceQuery", "MinOrders", "min_orders", "Dimension", "dimension",
    "ModeScan", "find_nonzero_modes", "brute_force_dimension", "parse_alpha",
]

GUARD = 1e-9
_DPS = 50


def parse_alpha(a) -> Fraction | mpmath.mpf:
    """Exact Fraction for ints, Fractions and "p/q" strings; 50-digit mpf otherwise."""
    if isinstance(a, Fraction):
        return a
    if isinstance(a, int):
        return Fraction(a)
    if isinstance(a, str):
        try:
            return Fraction(a.strip())
        except ValueError:
            with mpmath.workdps(_DPS):
                return mpmath.mpf(a)
    with mpmath.workdps(_DPS):
        return mpmath.mpf(a)


@dataclass(frozen=True)
class DifferentialSpaceQuery:
    genus: int
    alphas: tuple
    n: int
    r: int = 0
    sign: str = "+"

    def __post_init__(self):
        if self.genus < 0 or self.r < 0:
            raise ValueError("genus and r must be non-negative")
        if self.sign not in ("+", "-"):
            raise ValueError("sign must be '+' or '-'")
        al = tuple(parse_alpha(a) for a in self.alphas)
        object.__setattr__(self, "alphas", al)
        if any(a <= -1 for a in al):
            raise ValueError("cone parameters must exceed -1")
        total = sum(al) if al else Fraction(0)
        target = 2 * self.genus - 2
        if all(isinstance(a, Fraction) for a in al):
            ok = total == target
        else:
            ok = abs(float(total) - target) <= 1e-9
        if not ok:
            raise ValueError(f"sum of cone parameters {float(total)} != 2g-2 = {target}")

    @property
    def exact(self) -> bool:
        return all(isinstance(a, Fraction) for a in self.alphas)

    @property
    def meromorphic_n(self) -> int:
        """Mode of the meromorphic space the query reduces to (n -> -n for sign '-')."""
        return self.n if self.sign == "+" else -self.n


@dataclass(frozen=True)
class MinOrders:
    orders: tuple[int, ...]
    bounds: tuple  # (n-1) alpha_p - r - 1, exact or 50-digit
    boundary: tuple[bool, ...]  # bound is (numerically) an integer

    def __iter__(self):
        return iter(self.orders)

    def __len__(self):
        return len(self.orders)

    def __getitem__(self, i):
        return self.orders[i]


def _min_order(alpha, n: int, r: int) -> tuple[int, object, bool]:
    if isinstance(alpha, Fraction):
        b = (n - 1) * alpha - r - 1
        return math.floor(b) + 1, b, b.denominator == 1
    with mpmath.workdps(_DPS):
        b = (n - 1) * alpha - r - 1
        nearest = int(mpmath.nint(b))
        if abs(b - nearest) <= GUARD:
            # treat as the integer boundary: strict inequality pushes k one up
            return nearest + 1, b, True
        return int(mpmath.floor(b)) + 1, b, False


def min_orders(query: DifferentialSpaceQuery) -> MinOrders:
    """Smallest integers ``k_p`` strictly above ``(n-1) alpha_p - r - 1``."""
    n = query.meromorphic_n
    out = [_min_order(a, n, query.r) for a in query.alphas]
    return MinOrders(tuple(o[0] for o in out), tuple(o[1] for o in out), tuple(o[2] for o in out))


@dataclass(frozen=True)
class Dimension:
    value: int
    kind: str  # "exact" or "lower bound"
    orders: MinOrders

    def __int__(self):
        return self.value


def dimension(query: DifferentialSpaceQuery) -> Dimension:
    """Complex dimension of the obstruction space of ``query``.

    Genus 0 is exact (``max(0, -2n - sum k + 1)``).  Genus 1 gives 1 when
    the constant differential meets every order condition, else 0; without
    cone points this is exact.  Genus >= 2 gives the Riemann-Roch lower bound
    ``g - 1`` when ``sum k <= n(2g - 2)``, else 0, tagged as a lower bound.
    """
    ko = min_orders(query)
    n = query.meromorphic_n
    g = query.genus
    if g == 0:
        return Dimension(max(0, -2 * n - sum(ko.orders) + 1), "exact", ko)
    if g == 1:
        val = 1 if all(k <= 0 for k in ko.orders) else 0
        return Dimension(val, "exact" if not query.alphas else "lower bound", ko)
    val = g - 1 if sum(ko.orders) <= n * (2 * g - 2) else 0
    return Dimension(val, "lower bound", ko)


@dataclass
class ModeScan:
    modes: list[int]
    dims: dict[int, int]
    window: tuple[int, int]
    kind: str
    boundary_modes: list[int] = field(default_factory=list)

    @property
    def density(self) -> float:
        lo, hi = self.window
        return len(self.modes) / (hi - lo + 1)


def find_nonzero_modes(genus: int, alphas: Sequence, r: int = 0, N_scan: int = 50,
                       sign: str = "+") -> ModeScan:
    """All ``n`` in ``[-N_scan, N_scan]`` whose obstruction space is nonzero."""
    if N_scan < 1:
        raise ValueError("N_scan must be >= 1")
    alphas = tuple(parse_alpha(a) for a in alphas)
    dims, hits, boundary = {}, [], []
    kind = "exact"
    for n in range(-N_scan, N_scan + 1):
        d = dimension(DifferentialSpaceQuery(genus, alphas, n, r, sign))
        dims[n] = d.value
        if d.kind != "exact":
            kind = d.kind
        if d.value > 0:
            hits.append(n)
        if any(d.orders.boundary):
            boundary.append(n)
    return ModeScan(hits, dims, (-N_scan, N_scan), kind, boundary)


# -- brute force oracle (genus 0) ----------------------------------------------

def _rank(rows: list[list[Fraction]]) -> int:
    rows = [r[:] for r in rows]
    rank, col = 0, 0
    ncol = len(rows[0]) if rows else 0
    while rank < len(rows) and col < ncol:
        piv = next((i for i in range(rank, len(rows)) if rows[i][col] != 0), None)
        if piv is None:
            col += 1
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        p = rows[rank]
        for i in range(rank + 1, len(rows)):
            if rows[i][col] != 0:
                f = rows[i][col] / p[col]
                rows[i] = [a - f * b for a, b in zip(rows[i], p)]
        rank += 1
        col += 1
    return rank


def _admissible_order(alpha: Fraction, n: int, r: int) -> int:
    # enumerate instead of using floor: first k with k > (n-1)alpha - r - 1
    bound = (n - 1) * alpha - r - 1
    k = -abs(n) * 2 - r - 4
    while not k > bound:
        k += 1
    return k


def brute_force_dimension(alphas: Sequence, n: int, r: int = 0, sign: str = "+") -> int:
    """Genus-0 dimension by explicit linear algebra over the rationals.

    Cone points sit at z = 0, 1, 2, ...  An n-differential ``R(z) dz^n`` is
    written ``R = T / prod (z - z_p)^{c_p}`` with ``c_p`` the allowed pole
    orders.  Regularity at infinity bounds ``deg T``; the zero orders become
    Hermite conditions ``T^{(j)}(z_p) = 0``.  The dimension is the number of
    coefficients minus the rank of those conditions.
    """
    al = [Fraction(a) if not isinstance(a, Fraction) else a for a in alphas]
    n = n if sign == "+" else -n
    ks = [_admissible_order(a, n, r) for a in al]
    poles = [max(0, -k) for k in ks]
    deg = sum(poles) - 2 * n
    if deg < 0:
        return 0
    rows = []
    for p, k in enumerate(ks):
        z = Fraction(p)
        for j in range(max(k, 0)):
            # j-th derivative of z^i at z_p
            rows.append([Fraction(math.perm(i, j)) * z ** (i - j) if i >= j else Fraction(0)
                         for i in range(deg + 1)])
    return deg + 1 - (_rank(rows) if rows else 0)


def rational_alpha_grid(max_den: int = 6) -> list[Fraction]:
    """Rationals in (-1, 1) with denominator at most ``max_den``."""
    vals = {Fraction(p, q) for q in range(1, max_den + 1) for p in range(-q + 1, q)}
    return sorted(vals)


def genus0_configurations(max_points: int = 4, max_den: int = 6) -> Iterable[tuple[Fraction, ...]]:
    """Sorted tuples of 3..max_points cone parameters from the grid summing to -2."""
    grid = rational_alpha_grid(max_den)

    def rec(start: int, left: int, acc: tuple):
        if left == 0:
            if sum(acc) == -2:
                yield acc
            return
        for i in range(start, len(grid)):
            a = grid[i]
            # remaining parameters are >= a, stop once the sum cannot come back to -2
            if sum(acc) + a * left > -2:
                break
            yield from rec(i, left - 1, acc + (a,))

    for s in range(3, max_points + 1):
        yield from rec(0, s, ())
