"""Foliated Laplacian ``H = -(X^2 + Y^2)`` on each fibre mode, and its spectra.

On mode ``n`` the operator is the P1 connection Laplacian of the flat
connection twisted by the ``n``-th power of the holonomy character.  The
stiffness form is ``sum_edges w_ij |u_i - exp(i n rho_ij) u_j|^2`` with
cotangent weights; the mass is lumped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .harmonic import ThetaFourierField
from .mesh import FlatMesh, build_mesh
from .surface import TriangulatedFlatSurface

__all__ = [
    "ModeOperator", "build_mode_operator", "EigenResult", "EigenSolverError", "smallest_eigenvalues",
    "LambdaProfile", "lambda_profile", "CheegerReport", "cheeger_report", "SolvabilityError",
    "HSolveResult", "solve_H", "apriori_constant", "DENSE_LIMIT",
]

DENSE_LIMIT = 2000
KERNEL_TOL = 1e-8
UNSTABLE_REL = 0.10


class EigenSolverError(RuntimeError):
    pass


class SolvabilityError(ValueError):
    """The right-hand side has a component along a (near-)kernel direction."""

    def __init__(self, message: str, n: int | None = None, k: int | None = None):
        super().__init__(message)
        self.n, self.k = n, k


@dataclass(eq=False)
class ModeOperator:
    """Stiffness/mass pair of ``H`` on mode ``n``.

    ``excluded`` marks surface vertices pinned to zero (cone points whose
    monodromy is nontrivial at this mode).  ``shift`` is the ``eps^2 n^2``
    term of the fibre-regularised operator.
    """

    n: int
    mesh: FlatMesh
    stiffness: sp.csr_matrix
    mass: np.ndarray
    excluded: np.ndarray
    shift: float = 0.0

    @property
    def size(self) -> int:
        return len(self.mass)

    @property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.mass)

    @property
    def h(self) -> float:
        return self.mesh.h

    def form(self) -> sp.csr_matrix:
        """Stiffness including the fibre shift."""
        if self.shift == 0.0:
            return self.stiffness
        return (self.stiffness + self.shift * sp.diags(self.mass)).tocsr()

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``H u`` as a nodal vector (``M^{-1} K u``)."""
        return (self.form() @ u) / self.mass

    def with_epsilon(self, eps: float) -> "ModeOperator":
        """Operator ``H + eps^2 n^2`` (the fibre term acts as a scalar on E_n)."""
        return ModeOperator(self.n, self.mesh, self.stiffness, self.mass, self.excluded,
                            self.shift + eps * eps * self.n * self.n)


def build_mode_operator(surface_or_mesh: TriangulatedFlatSurface | FlatMesh, n: int, m: int = 16) -> ModeOperator:
    """Assemble the mode-``n`` connection Laplacian on the ``m``-refinement."""
    mesh = surface_or_mesh if isinstance(surface_or_mesh, FlatMesh) else build_mesh(surface_or_mesh, m)
    return ModeOperator(n, mesh, mesh.stiffness(n), mesh.mass(n), mesh.excluded(n))


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray  # columns, mass-orthonormal
    residuals: np.ndarray
    method: str


def _sigma(op: ModeOperator) -> float:
    # shift-invert needs a regular pencil; a small negative shift keeps
    # K - sigma M positive definite while staying next to the bottom
    return -1e-2 / float(np.sum(op.mass))


def smallest_eigenvalues(op: ModeOperator, k: int = 1, tol: float = 1e-9, method: str = "auto",
                         maxiter: int | None = None) -> EigenResult:
    """The ``k`` smallest generalized eigenpairs of ``(K, M)``.

    Dense ``eigh`` below :data:`DENSE_LIMIT` unknowns, otherwise Lanczos in
    shift-invert mode.  The relative residual ``|(K - lam M)u| / |Mu|`` of
    every pair is checked against ``tol``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    nd = op.size
    if nd == 0:
        raise EigenSolverError("no unknowns at this mode")
    k = min(k, nd)
    K = op.form()
    Mv = op.mass
    if method == "auto":
        method = "dense" if nd <= DENSE_LIMIT or k >= nd - 1 else "sparse"
    if method == "dense":
        w, V = sla.eigh(K.toarray(), np.diag(Mv), subset_by_index=[0, k - 1])
    elif method == "sparse":
        sigma = _sigma(op)
        lu = spla.splu((K - sigma * sp.diags(Mv)).tocsc().astype(complex))
        OPinv = spla.LinearOperator((nd, nd), matvec=lu.solve, dtype=complex)
        try:
            w, V = spla.eigsh(K.astype(complex), k=k, M=sp.diags(Mv).astype(complex), sigma=sigma,
                              which="LM", OPinv=OPinv, tol=tol * 1e-3, maxiter=maxiter or 50 * nd)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError(f"mode {op.n}: Lanczos did not converge") from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    else:
        raise ValueError(f"unknown method {method!r}")
    # mass-normalise
    V = V / np.sqrt(np.real(np.sum(np.conj(V) * (Mv[:, None] * V), axis=0)))
    R = K @ V - (Mv[:, None] * V) * w[None, :]
    res = np.linalg.norm(R, axis=0) / np.linalg.norm(Mv[:, None] * V, axis=0)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.any(res > tol * scale):
        raise EigenSolverError(f"mode {op.n}: eigen residual {res.max():.2e} above tol {tol:.1e}")
    return EigenResult(np.real(w), V, res, method)


# -- profiles ------------------------------------------------------------------

@dataclass
class LambdaProfile:
    """Least eigenvalue per mode over a refinement sequence.

    ``bottom[n][i]`` is the least eigenvalue at level ``i``.  ``levels[n][i]``
    is the reported value: equal to ``bottom`` except in the ``n = 0`` row,
    where the constant kernel is deflated and the least nonzero eigenvalue is
    reported.  ``values[n]`` is the Richardson extrapolation of the last two
    levels (or the single level).
    """

    surface: TriangulatedFlatSurface
    modes: list[int]
    refinements: list[int]
    h: list[float]
    unknowns: dict[int, list[int]]
    levels: dict[int, list[float]]
    bottom: dict[int, list[float]]
    spectra: dict[int, list[np.ndarray]]
    values: dict[int, float]
    unstable: dict[int, bool]
    failures: dict[int, str] = field(default_factory=dict)

    def level_values(self, i: int = -1) -> dict[int, float]:
        return {n: self.levels[n][i] for n in self.modes}

    def table(self) -> list[dict]:
        rows = []
        for n in self.modes:
            for i, m in enumerate(self.refinements):
                rows.append({"n": n, "level": i, "m": m, "h": self.h[i], "unknowns": self.unknowns[n][i],
                             "lambda": self.levels[n][i], "spectrum": self.spectra[n][i]})
        return rows


def richardson(coarse: float, fine: float, ratio: float = 2.0, order: float = 2.0) -> float:
    r = ratio ** order
    return (r * fine - coarse) / (r - 1.0)


def lambda_profile(surface: TriangulatedFlatSurface, n_range: Iterable[int], refinements: Sequence[int] = (8, 16),
                   k: int = 1, tol: float = 1e-9) -> LambdaProfile:
    """Least eigenvalue of every mode in ``n_range`` at each refinement.

    ``refinements`` are subdivision counts ``m`` (h is proportional to 1/m).
    Modes whose last two levels disagree by more than 10% are flagged
    unstable; solver failures leave NaN entries and a message in ``failures``.
    """
    modes = list(n_range)
    refinements = list(refinements)
    hs, unknowns, levels, bottom, spectra = [], {}, {}, {}, {}
    failures: dict[int, str] = {}
    for m in refinements:
        mesh = build_mesh(surface, m)
        hs.append(mesh.h)
        for n in modes:
            op = build_mode_operator(mesh, n)
            unknowns.setdefault(n, []).append(op.size)
            try:
                eig = smallest_eigenvalues(op, k + (1 if n == 0 else 0), tol)
                w = eig.values
                bottom.setdefault(n, []).append(float(w[0]))
                levels.setdefault(n, []).append(float(w[1] if n == 0 else w[0]))
                spectra.setdefault(n, []).append(w)
            except EigenSolverError as exc:
                failures[n] = str(exc)
                bottom.setdefault(n, []).append(math.nan)
                levels.setdefault(n, []).append(math.nan)
                spectra.setdefault(n, []).append(np.array([]))
    values, unstable = {}, {}
    for n in modes:
        lv = levels[n]
        if len(lv) >= 2 and all(math.isfinite(x) for x in lv[-2:]):
            c, f = lv[-2], lv[-1]
            if abs(f) <= KERNEL_TOL and abs(c) <= KERNEL_TOL:
                values[n], unstable[n] = f, False
            else:
                values[n] = richardson(c, f, hs[-2] / hs[-1])
                unstable[n] = abs(f - c) > UNSTABLE_REL * abs(f)
        else:
            values[n], unstable[n] = lv[-1], False
    return LambdaProfile(surface, modes, refinements, hs, unknowns, levels, bottom, spectra, values,
                         unstable, failures)


@dataclass
class CheegerReport:
    rows: list[dict]  # n, lambda, q, ratio, flag
    c_eff: float
    argmin: int | None
    flags: list[str]


def cheeger_report(profile: LambdaProfile, angles: Sequence[float], level: int | None = None,
                   modes: Iterable[int] | None = None) -> CheegerReport:
    """Table of ``lambda_n``, ``q_n`` and ``lambda_n / q_n^2`` with ``c_eff = min`` ratio.

    ``level=None`` uses the extrapolated values, an integer picks a
    refinement level.  Modes with ``q_n = 0`` get an infinite ratio and are
    flagged if their eigenvalue is not numerically zero; numerically zero
    eigenvalues with ``q_n > 0`` are flagged as well.
    """
    from .diophantine import simultaneous_distance
    modes = [n for n in (profile.modes if modes is None else modes) if n != 0]
    rows, flags = [], []
    best, arg = math.inf, None
    for n in modes:
        lam = profile.values[n] if level is None else profile.levels[n][level]
        q = simultaneous_distance(angles, abs(n)) if len(angles) else 0.0
        q = 0.0 if q < 1e-12 * max(1, abs(n)) else q
        if q == 0.0:
            ratio = math.inf
            if not abs(lam) <= KERNEL_TOL:
                flags.append(f"n={n}: q_n = 0 but lambda_n = {lam:.3e}")
        else:
            ratio = lam / (q * q)
            if abs(lam) <= KERNEL_TOL:
                flags.append(f"n={n}: lambda_n ~ 0 but q_n = {q:.3e}")
            if ratio < best:
                best, arg = ratio, n
        rows.append({"n": n, "lambda": lam, "q": q, "ratio": ratio})
    return CheegerReport(rows, best if arg is not None else math.inf, arg, flags)


# -- solving Hu = f --------------------------------------------------------------

@dataclass
class HSolveResult:
    u: ThetaFourierField
    residual: float  # ‖Hu - f‖ / ‖f‖
    per_mode: dict[int, float]
    notes: list[str] = field(default_factory=list)


def _solve_mode(op: ModeOperator, f: np.ndarray, K: int, tol: float, n: int):
    Mv = op.mass
    Kmat = op.form()
    kk = min(K, op.size)
    eig = smallest_eigenvalues(op, kk, tol=max(tol, 1e-9))
    lam, Phi = eig.values, eig.vectors
    fnorm = math.sqrt(float(np.real(np.vdot(f, Mv * f))))
    coef = Phi.conj().T @ (Mv * f)
    scale = max(1.0, float(np.max(np.abs(lam))))
    kernel = np.abs(lam) <= tol * scale
    for j in np.flatnonzero(kernel):
        if abs(coef[j]) > max(10 * tol, 1e-10) * max(fnorm, 1e-300):
            raise SolvabilityError(f"mode {n}: component {abs(coef[j]):.2e} along eigenvalue "
                                   f"{lam[j]:.2e} (k={j + 1}) is not solvable", n, j + 1)
    u = Phi[:, ~kernel] @ (coef[~kernel] / lam[~kernel])
    # complement: bordered solve with the kernel deflated
    rest = f - Phi @ coef
    rhs = Mv * rest
    if np.linalg.norm(rhs) > 1e-15 * max(fnorm, 1e-300) and kk < op.size:
        Z = Phi[:, kernel]
        if Z.shape[1]:
            MZ = sp.csr_matrix(Mv[:, None] * Z)
            A = sp.bmat([[Kmat, MZ], [MZ.conj().T, None]], format="csc")
            sol = spla.spsolve(A.astype(complex), np.r_[rhs, np.zeros(Z.shape[1])])[:op.size]
        else:
            sol = spla.spsolve(Kmat.tocsc().astype(complex), rhs)
        # keep the complement orthogonal to the computed eigenvectors
        sol = sol - Phi @ (Phi.conj().T @ (Mv * sol))
        u = u + sol
    return u, lam


def solve_H(f: ThetaFourierField, K: int = 8, tol: float = 1e-10) -> HSolveResult:
    """Solve ``H u = f`` mode by mode.

    The ``K`` lowest eigenpairs are inverted spectrally and the rest of ``f``
    by a sparse solve on their orthogonal complement.  ``f`` must have zero
    mean; any component along a near-zero eigenvalue raises
    :class:`SolvabilityError`.
    """
    mesh = f.mesh
    fn = f.norm()
    area = float(np.sum(mesh.vertex_mass))
    if fn > 0 and abs(f.mean()) * math.sqrt(2 * math.pi * area) > max(tol, 1e-12) * fn:
        raise SolvabilityError(f"right-hand side has nonzero mean {f.mean():.3e}; zero mean required", 0, 1)
    modes, per_mode = {}, {}
    for n in f.support():
        op = build_mode_operator(mesh, n)
        fv = f.dof_vector(n)
        u, _ = _solve_mode(op, fv, K, tol, n)
        modes[n] = mesh.extend(n, u)
        r = op.apply(u) - fv
        per_mode[n] = math.sqrt(float(np.real(np.vdot(r, op.mass * r))))
    u = ThetaFourierField(mesh, f.N, modes)
    res = math.sqrt(2 * math.pi * sum(v * v for v in per_mode.values()))
    rel = res / fn if fn > 0 else 0.0
    out = HSolveResult(u, rel, per_mode)
    if rel > 10 * tol:
        out.notes.append(f"residual {rel:.2e} above 10*tol")
    return out


def apriori_constant(profile: LambdaProfile, gamma: float, level: int = -1) -> float:
    """``C = max_n (1 + n^2)^(-gamma) / lambda_n`` from one level of a profile.

    With this C, ``|u|_{0,s-2gamma} <= C |f|_{0,s}`` for ``u = H^{-1} f``
    at that mesh level, whenever every lambda_n is positive; numerically
    zero eigenvalues give ``inf``.
    """
    vals = profile.level_values(level)
    if any(not v > KERNEL_TOL for v in vals.values()):
        return math.inf
    return max((1.0 + n * n) ** (-gamma) / v for n, v in vals.items())
