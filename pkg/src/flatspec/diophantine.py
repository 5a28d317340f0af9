"""Simultaneous Diophantine approximation of holonomy angles.

For angles theta_1..theta_d (fractions of a turn) the basic quantity is

    q_n = sum_i d(n theta_i, Z),

and the condition of exponent gamma asks for q_n >= C / n**gamma.  Only a
finite scan can be checked, so every result here is a certificate on [1, N].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "simultaneous_distance", "distance_scan", "verify_condition", "VerifyResult",
    "continued_fraction", "partial_quotients", "DiophantineReport", "diophantine_report",
    "liminf_estimate", "record_minima",
]

_CHUNK = 1 << 18
_EPS = np.finfo(float).eps


def _angles(angles) -> np.ndarray:
    a = np.atleast_1d(np.asarray(angles, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise ValueError("angles must be a non-empty 1-d sequence")
    return a


def simultaneous_distance(angles: Sequence[float] | float, n):
    """``sum_i min_k |n theta_i - k|`` for a scalar or array of ``n``."""
    a = _angles(angles)
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError("n must be >= 1")
    x = np.multiply.outer(n_arr.astype(float), a)
    q = np.abs(x - np.rint(x)).sum(axis=-1)
    return float(q) if q.ndim == 0 else q


def _zero_tol(n: np.ndarray, d: int) -> np.ndarray:
    # rounding noise of n*theta grows linearly with n
    return 1e-12 + 16.0 * _EPS * n * d


def distance_scan(angles, N: int, start: int = 1) -> np.ndarray:
    """Array of q_n for n = start..N (noise-level values flushed to 0)."""
    a = _angles(angles)
    N = int(N)
    out = np.empty(max(N - start + 1, 0))
    for lo in range(start, N + 1, _CHUNK):
        hi = min(lo + _CHUNK, N + 1)
        n = np.arange(lo, hi, dtype=float)
        q = simultaneous_distance(a, n)
        q[q <= _zero_tol(n, a.size)] = 0.0
        out[lo - start:hi - start] = q
    return out


class VerifyResult(NamedTuple):
    holds_on_scan: bool
    C_effective: float
    argmin: int


def verify_condition(angles, gamma: float, N: int) -> VerifyResult:
    """Check ``q_n >= C / n**gamma`` on [1, N] and return the best constant.

    ``C_effective = min_{n<=N} n**gamma * q_n``; it is 0 (and the check
    fails) as soon as some q_n vanishes.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if N < 2:
        raise ValueError("N must be >= 2")
    q = distance_scan(angles, N)
    n = np.arange(1, N + 1, dtype=float)
    vals = n ** gamma * q
    k = int(np.argmin(vals))
    c = float(vals[k])
    return VerifyResult(c > 0.0, c, k + 1)


def liminf_estimate(angles, N: int, gamma: float = 1.0) -> tuple[float, int]:
    """Estimate ``liminf n**gamma q_n`` by the minimum over the tail [ceil(sqrt N), N].

    Small n carry transient values (for the golden ratio n = 1 gives 0.382
    while the limit inferior is 1/sqrt 5), so the head of the scan is dropped.
    """
    start = max(1, math.isqrt(int(N) - 1) + 1)
    q = distance_scan(angles, N, start=start)
    vals = np.arange(start, N + 1, dtype=float) ** gamma * q
    k = int(np.argmin(vals))
    return float(vals[k]), start + k


def _expand(theta, depth: int):
    if depth > 64:
        raise ValueError("depth must be <= 64")
    x = Fraction(theta)
    target = x
    # a float stands for an interval of width ~eps; stop once a convergent is inside it
    tol = Fraction(0) if isinstance(theta, (Fraction, int)) else Fraction(2 * _EPS) * max(abs(x), Fraction(1, 2**20))
    digits, convergents = [], []
    p0, q0, p1, q1 = 1, 0, 0, 1
    if x == 0:
        return digits, convergents
    while len(digits) < depth:
        a = math.floor(x)
        digits.append(a)
        p0, p1 = a * p0 + p1, p0
        q0, q1 = a * q0 + q1, q0
        convergents.append(Fraction(p0, q0))
        x -= a
        if x == 0 or abs(target - convergents[-1]) <= tol:
            break
        x = 1 / x
    return digits, convergents


def partial_quotients(theta: float | Fraction, depth: int = 64) -> list[int]:
    """Continued fraction digits [a0; a1, a2, ...] of ``theta``.

    Fractions are expanded exactly.  A float is expanded exactly as a binary
    rational but the expansion stops once a convergent matches it to double
    precision, so ``1/3`` terminates at 1/3.
    """
    return _expand(theta, depth)[0]


def continued_fraction(theta: float | Fraction, depth: int = 64) -> list[Fraction]:
    """Convergents p_k/q_k of ``theta`` (empty for 0, stops early for rationals)."""
    return _expand(theta, depth)[1]


def record_minima(q: np.ndarray) -> np.ndarray:
    """Indices where ``q`` attains a new strict running minimum."""
    running = np.minimum.accumulate(q)
    idx = np.flatnonzero(np.r_[True, running[1:] < running[:-1]])
    return idx


@dataclass
class DiophantineReport:
    angles: tuple[float, ...]
    N: int
    q: np.ndarray  # q[n-1] = q_n
    gamma_hat: float
    C_hat: float
    records: np.ndarray  # n values of the record minima
    notes: list[str] = field(default_factory=list)

    @property
    def holds_on_scan(self) -> bool:
        return self.C_hat > 0.0

    def envelope(self, gamma: float | None = None) -> np.ndarray:
        g = self.gamma_hat if gamma is None else gamma
        return np.arange(1, self.N + 1, dtype=float) ** g * self.q


def diophantine_report(angles, N: int) -> DiophantineReport:
    """Scan q_n on [1, N] and fit the exponent from its record minima.

    gamma_hat is the least-squares slope of -log q_n against log n over the
    record minima; C_hat = min n**gamma_hat q_n.  A vanishing q_n gives
    gamma_hat = inf and C_hat = 0.
    """
    a = tuple(float(x) for x in _angles(angles))
    q = distance_scan(a, N)
    rec = record_minima(q)
    n_rec = rec + 1
    notes = []
    if np.any(q == 0.0):
        first = int(np.flatnonzero(q == 0.0)[0]) + 1
        notes.append(f"q_n vanishes at n={first}")
        return DiophantineReport(a, int(N), q, math.inf, 0.0, n_rec, notes)
    if len(rec) >= 2:
        x, y = np.log(n_rec), -np.log(q[rec])
        gamma_hat = float(np.polyfit(x, y, 1)[0])
    else:
        gamma_hat = 0.0
        notes.append("fewer than two record minima; exponent not identifiable")
    gamma_hat = max(gamma_hat, 0.0)
    C_hat = float(np.min(np.arange(1, N + 1, dtype=float) ** gamma_hat * q))
    if gamma_hat < 1.0 / len(a):
        notes.append(f"fitted exponent {gamma_hat:.3g} < 1/d")
    return DiophantineReport(a, int(N), q, gamma_hat, C_hat, n_rec, notes)
