"""Discrete Cauchy-Riemann operators and the cohomological equation Xu = f.

On mode ``n`` the raising/lowering pair is

    D+_n : E_n -> E_{n-1},   D+_n = M^{-1} S^H A G_n,
    D-_n : E_n -> E_{n+1},   D-_n = -(D+_{n+1})^*   (adjoint for the mass inner product),

where ``G_n`` is the face-constant ``d/dx + i d/dy`` of the phased P1
interpolant, ``S`` the face average and ``A`` the face areas.  Defining D-
as a negative adjoint makes ``<D+u, v> + <u, D-v> = 0`` exact; all
discretization error sits in the commutator defect checked by
:func:`norm_identity_check`.

The geodesic generator is ``X = (D+ + D-)/2`` and the orthogonal one
``Y = (D+ - D-)/(2i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .harmonic import StateFunction, ThetaFourierField, fiber_norm, project, sobolev_norm
from .mesh import FlatMesh, build_mesh
from .surface import TWO_PI, TriangulatedFlatSurface

__all__ = [
    "CROperatorPair", "build_cr_operators", "NormIdentityReport", "norm_identity_check",
    "TruncatedXSystem", "XSolveResult", "SolveXError", "solve_X", "AprioriReport", "apriori_report",
    "InvariantResult", "invariant_from_meromorphic", "random_smooth_field",
]

DENSE_LSTSQ_LIMIT = 3000


class SolveXError(RuntimeError):
    """Raised when the X system cannot be solved to the requested tolerance."""

    def __init__(self, message: str, result: "XSolveResult | None" = None):
        super().__init__(message)
        self.result = result


class CROperatorPair:
    """Per-mode D+ and D- on one mesh, assembled lazily and cached.

    ``adjoint_exact`` records that D- is defined from D+ by adjunction, so
    the adjoint identity holds up to rounding only.
    """

    adjoint_exact = True

    def __init__(self, mesh: FlatMesh):
        self.mesh = mesh
        self._plus: dict[int, sp.csr_matrix] = {}
        self._minus: dict[int, sp.csr_matrix] = {}

    @property
    def surface(self) -> TriangulatedFlatSurface:
        return self.mesh.surface

    def dplus(self, n: int) -> sp.csr_matrix:
        """D+_n as a sparse matrix (unknowns at n-1) x (unknowns at n)."""
        if n not in self._plus:
            me = self.mesh
            S = me.face_average(n - 1)
            G = me.gradient(n)
            W = S.conj().T @ sp.diags(me.face_area) @ G
            self._plus[n] = (sp.diags(1.0 / me.mass(n - 1)) @ W).tocsr()
        return self._plus[n]

    def dminus(self, n: int) -> sp.csr_matrix:
        """D-_n = -M_{n+1}^{-1} (D+_{n+1})^H M_n, shape (unknowns at n+1) x (unknowns at n)."""
        if n not in self._minus:
            me = self.mesh
            P = self.dplus(n + 1)
            self._minus[n] = (-sp.diags(1.0 / me.mass(n + 1)) @ P.conj().T @ sp.diags(me.mass(n))).tocsr()
        return self._minus[n]

    # -- field level ------------------------------------------------------------
    def _apply(self, f: ThetaFourierField, plus: bool, minus: bool, cplus: complex, cminus: complex,
               grow: bool = True) -> ThetaFourierField:
        me = self.mesh
        N = f.N + 1 if grow else f.N
        out = {n: np.zeros(me.num_vertices, dtype=complex) for n in range(-N, N + 1)}
        for n in f.support():
            u = f.dof_vector(n)
            if plus and abs(n - 1) <= N:
                out[n - 1] += cplus * me.extend(n - 1, self.dplus(n) @ u)
            if minus and abs(n + 1) <= N:
                out[n + 1] += cminus * me.extend(n + 1, self.dminus(n) @ u)
        return ThetaFourierField(me, N, out)

    def apply_dplus(self, f: ThetaFourierField) -> ThetaFourierField:
        return self._apply(f, True, False, 1.0, 0.0)

    def apply_dminus(self, f: ThetaFourierField) -> ThetaFourierField:
        return self._apply(f, False, True, 0.0, 1.0)

    def X(self, f: ThetaFourierField, grow: bool = True) -> ThetaFourierField:
        return self._apply(f, True, True, 0.5, 0.5, grow)

    def Y(self, f: ThetaFourierField, grow: bool = True) -> ThetaFourierField:
        return self._apply(f, True, True, 0.5 / 1j, -0.5 / 1j, grow)

    def laplacian_form(self, n: int) -> sp.csr_matrix:
        """M_n * (-(X^2 + Y^2)) restricted to E_n, i.e. -(D-D+ + D+D-)/2 weighted by mass."""
        me = self.mesh
        A = self.dminus(n - 1) @ self.dplus(n) + self.dplus(n + 1) @ self.dminus(n)
        return (sp.diags(me.mass(n)) @ (-0.5 * A)).tocsr()


def build_cr_operators(surface: TriangulatedFlatSurface, n_range: Iterable[int], m: int = 16) -> CROperatorPair:
    """Assemble D+_n and D-_n for every ``n`` in ``n_range`` on the ``m``-refinement."""
    pair = CROperatorPair(build_mesh(surface, m))
    for n in n_range:
        pair.dplus(n)
        pair.dminus(n)
    return pair


# -- norm identity ---------------------------------------------------------------

@dataclass
class NormIdentityReport:
    h: list[float]
    deviation: list[float]  # |‖D+v‖^2 - ‖D-v‖^2| / |v|_{1,0}^2 per level
    ratios: list[float]  # deviation[i] / deviation[i+1]

    @property
    def halves(self) -> bool:
        return all(r >= 2.0 for r in self.ratios)

    @property
    def order(self) -> float:
        if len(self.deviation) < 2 or min(self.deviation) <= 0:
            return math.nan
        return float(np.polyfit(np.log(self.h), np.log(self.deviation), 1)[0])


def _identity_deviation(pair: CROperatorPair, v: ThetaFourierField) -> float:
    p = pair.apply_dplus(v).norm() ** 2
    q = pair.apply_dminus(v).norm() ** 2
    denom = sobolev_norm(v, (1, 0), pair) ** 2
    return 0.0 if denom == 0.0 else abs(p - q) / denom


def norm_identity_check(surface: TriangulatedFlatSurface, v: StateFunction | None,
                        levels: Sequence[int] = (8, 16, 32), N: int = 2) -> NormIdentityReport:
    """Refinement study of ``‖D+v‖ = ‖D-v‖`` for a smooth test function ``v``.

    ``v(tri, x, y, theta)`` is projected onto ``|n| <= N`` at every level.
    ``v=None`` is the zero field.
    """
    hs, devs = [], []
    for m in levels:
        pair = CROperatorPair(build_mesh(surface, m))
        fld = ThetaFourierField(pair.mesh, N) if v is None else project(pair.mesh, v, N)
        hs.append(pair.mesh.h)
        devs.append(_identity_deviation(pair, fld))
    ratios = [devs[i] / devs[i + 1] if devs[i + 1] > 0 else math.inf for i in range(len(devs) - 1)]
    return NormIdentityReport(hs, devs, ratios)


# -- the X system ------------------------------------------------------------------

class TruncatedXSystem:
    """Block matrix sending ``(u_n)_{n in in_modes}`` to ``((D+u_{n+1} + D-u_{n-1})/2)_{n in out_modes}``.

    closure="closed" (default): ``u_{+-(N+1)} = 0`` and every equation that
    sees a retained unknown is kept, i.e. unknowns ``|n| <= N`` and
    equations ``|n| <= N+1`` (with ``f_{+-(N+1)} = 0``).
    closure="square": unknowns and equations ``|n| <= N``.
    closure="open": unknowns ``|n| <= N+1``, equations ``|n| <= N``.

    Only the closed rule has no truncation kernel: "square" and "open"
    admit solutions of the homogeneous recursion that do not decay in n.
    """

    CLOSURES = ("closed", "square", "open")

    def __init__(self, pair: CROperatorPair, N: int, closure: str = "closed"):
        if closure not in self.CLOSURES:
            raise ValueError(f"unknown closure {closure!r}")
        self.pair, self.N, self.closure = pair, N, closure
        me = pair.mesh
        K_in = N + 1 if closure == "open" else N
        K_out = N + 1 if closure == "closed" else N
        self.out_modes = list(range(-K_out, K_out + 1))
        self.in_modes = list(range(-K_in, K_in + 1))
        self.in_sizes = [len(me.dofs(n)) for n in self.in_modes]
        self.out_sizes = [len(me.dofs(n)) for n in self.out_modes]
        self.in_offset = np.r_[0, np.cumsum(self.in_sizes)]
        self.out_offset = np.r_[0, np.cumsum(self.out_sizes)]
        blocks = [[None] * len(self.in_modes) for _ in self.out_modes]
        for i, n in enumerate(self.out_modes):
            for j, k in enumerate(self.in_modes):
                if k == n + 1:
                    blocks[i][j] = 0.5 * pair.dplus(k)
                elif k == n - 1:
                    blocks[i][j] = 0.5 * pair.dminus(k)
        for i, sz in enumerate(self.out_sizes):
            if all(b is None for b in blocks[i]):
                blocks[i][0] = sp.csr_matrix((sz, self.in_sizes[0]))
        self.matrix = sp.bmat(blocks, format="csr", dtype=complex)
        w_in = np.concatenate([me.mass(n) for n in self.in_modes])
        w_out = np.concatenate([me.mass(n) for n in self.out_modes])
        self.sqrt_w_in = np.sqrt(TWO_PI * w_in)
        self.sqrt_w_out = np.sqrt(TWO_PI * w_out)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def pack_rhs(self, f: ThetaFourierField) -> np.ndarray:
        me = self.pair.mesh
        return np.concatenate([me.restrict(n, f.mode(n)) for n in self.out_modes])

    def pack_solution(self, u: ThetaFourierField) -> np.ndarray:
        return np.concatenate([u.dof_vector(n) for n in self.in_modes])

    def unpack_solution(self, x: np.ndarray) -> ThetaFourierField:
        me = self.pair.mesh
        K = max(self.in_modes)
        modes = {n: me.extend(n, x[self.in_offset[j]:self.in_offset[j + 1]]) for j, n in enumerate(self.in_modes)}
        return ThetaFourierField(me, K, modes)

    def weighted(self) -> sp.csr_matrix:
        """Matrix in mass-orthonormal coordinates on both sides."""
        return (sp.diags(self.sqrt_w_out) @ self.matrix @ sp.diags(1.0 / self.sqrt_w_in)).tocsr()

    def solve_min_norm(self, f: ThetaFourierField, method: str = "auto", atol: float = 1e-14,
                       iter_lim: int | None = None) -> np.ndarray:
        """Minimum mass-norm least-squares solution (packed)."""
        B = self.weighted()
        b = self.sqrt_w_out * self.pack_rhs(f)
        if method == "auto":
            method = "dense" if max(B.shape) <= DENSE_LSTSQ_LIMIT else "lsqr"
        if method == "dense":
            y = sla.lstsq(B.toarray(), b, cond=1e-12, lapack_driver="gelsd")[0]
        elif method == "lsqr":
            y = spla.lsqr(B, b, atol=atol, btol=atol, conlim=1e14,
                          iter_lim=iter_lim or 20 * max(B.shape))[0]
        else:
            raise ValueError(f"unknown method {method!r}")
        return y / self.sqrt_w_in


@dataclass
class XSolveResult:
    u: ThetaFourierField
    residual: float  # ‖Xu - f‖ / ‖f‖
    system: TruncatedXSystem
    notes: list[str] = field(default_factory=list)


def solve_X(f: ThetaFourierField, closure: str = "closed", tol: float = 1e-8, pair: CROperatorPair | None = None,
            N: int | None = None, method: str = "auto", raise_on_residual: bool = True) -> XSolveResult:
    """Minimum-norm least-squares solution of ``Xu = f`` on the truncated mode range.

    Raises ``ValueError`` if ``f`` has nonzero mean (it must vanish on
    constants) and :class:`SolveXError` if the relative residual exceeds
    ``tol`` (the best attempt is attached to the exception).
    """
    pair = pair or CROperatorPair(f.mesh)
    N = f.N if N is None else N
    fnorm = f.norm()
    area = float(np.sum(f.mesh.vertex_mass))
    if fnorm > 0 and abs(f.mean()) * math.sqrt(TWO_PI * area) > max(tol, 1e-12) * fnorm:
        raise ValueError("right-hand side must vanish on constants (nonzero mean)")
    support = f.support()
    if support and max(abs(n) for n in support) + 2 > N:
        raise ValueError(f"truncation N={N} must exceed the mode support of f by 2")
    system = TruncatedXSystem(pair, N, closure)
    x = system.solve_min_norm(f, method=method) if fnorm > 0 else np.zeros(system.shape[1], dtype=complex)
    u = system.unpack_solution(x)
    res_vec = system.sqrt_w_out * (system.matrix @ x - system.pack_rhs(f))
    residual = float(np.linalg.norm(res_vec) / fnorm) if fnorm > 0 else 0.0
    out = XSolveResult(u, residual, system)
    if residual > tol:
        out.notes.append(f"residual {residual:.3e} above tol {tol:.1e}; f pairs with a discrete invariant functional")
        if raise_on_residual:
            raise SolveXError(out.notes[-1], out)
    return out


# -- random smooth fields ------------------------------------------------------

def random_smooth_field(pair: CROperatorPair, N: int, rng: np.random.Generator, k: int = 6,
                        decay: float = 2.0, zero_mean: bool = True) -> ThetaFourierField:
    """Random combination of the ``k`` lowest Laplacian eigenvectors in each mode ``|n| <= N``.

    Coefficients decay like ``(1 + n^2)^(-decay/2) (1 + lambda)^(-1)`` so the
    field is smooth on the mesh scale.  With ``zero_mean`` the mode-0 kernel
    is removed.
    """
    from .spectral import build_mode_operator, smallest_eigenvalues
    me = pair.mesh
    modes = {}
    for n in range(-N, N + 1):
        op = build_mode_operator(me, n)
        kk = min(k + 1, op.size - 1)
        eig = smallest_eigenvalues(op, kk)
        lam, vec = eig.values, eig.vectors
        c = (rng.standard_normal(kk) + 1j * rng.standard_normal(kk)) / (1.0 + np.abs(lam))
        if zero_mean and n == 0:
            c[lam < 1e-8 * max(1.0, lam.max())] = 0.0
        c *= (1.0 + n * n) ** (-decay / 2)
        modes[n] = me.extend(n, vec @ c)
    return ThetaFourierField(me, N, modes)


# -- a priori estimate -----------------------------------------------------------

@dataclass
class AprioriReport:
    index: tuple[int, float]
    target_index: tuple[int, float]
    gamma: float
    gap_condition: bool
    ratios: np.ndarray
    by_content: dict[int, float]  # mode content -> max ratio
    growth_flag: bool
    notes: list[str] = field(default_factory=list)

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if len(self.ratios) else math.nan

    def histogram(self, bins: int = 10):
        return np.histogram(np.log10(self.ratios[np.isfinite(self.ratios)]), bins=bins)


def _sobolev(field_: ThetaFourierField, r: int, s: float, pair: CROperatorPair) -> float:
    if float(s).is_integer():
        return sobolev_norm(field_, (r, int(s)), pair)
    if r == 0:
        return fiber_norm(field_, s)
    raise ValueError("non-integer fibre order is only supported for r = 0")


def apriori_report(surface: TriangulatedFlatSurface, samples: int, index: tuple[int, float],
                   target_index: tuple[int, float], seed: int | None = None, m: int = 8,
                   contents: Sequence[int] = (1, 2, 4), gamma: float | None = None,
                   fields: Sequence[ThetaFourierField] | None = None) -> AprioriReport:
    """Distribution of ``|v|_{r',s'} / |Xv|_{r,s}`` over random smooth zero-mean ``v``.

    ``contents`` are the mode truncations of the random samples; the maximum
    ratio is tracked per content and ``growth_flag`` is raised when it grows
    by more than a factor 4 from one content to the next.  ``fields``
    overrides the random sampling.
    """
    from .diophantine import diophantine_report
    from .surface import holonomy_generators
    r, s = index
    r2, s2 = target_index
    if gamma is None:
        angles = [a for a in holonomy_generators(surface).angles] or [0.0]
        gamma = diophantine_report(angles, 10_000).gamma_hat
    gap = r > r2 + 1 and s > s2 + 2 * gamma + 1.5
    pair = CROperatorPair(build_mesh(surface, m))
    rng = np.random.default_rng(seed)
    ratios, by_content = [], {}
    notes = []
    if fields is not None:
        groups = {}
        for f in fields:
            groups.setdefault(max((abs(n) for n in f.support()), default=0), []).append(f)
    else:
        per = max(1, samples // len(contents))
        groups = {c: [random_smooth_field(pair, c, rng) for _ in range(per)] for c in contents}
    for c, flist in sorted(groups.items()):
        best = 0.0
        for v in flist:
            num = _sobolev(v, r2, s2, pair)
            den = _sobolev(pair.X(v), r, s, pair)
            ratio = math.inf if den <= 1e-10 * num else num / den
            ratios.append(ratio)
            best = max(best, ratio)
        by_content[c] = best
    vals = [by_content[c] for c in sorted(by_content)]
    growth = any(not math.isfinite(b) or b > 4.0 * a for a, b in zip(vals, vals[1:])) or \
        any(not math.isfinite(v) for v in vals)
    if not gap:
        notes.append(f"index gap condition fails for gamma={gamma:.3g}")
    if any(not math.isfinite(x) for x in ratios):
        notes.append("Xv vanishes for some sample: v lies in the discrete kernel of X")
    return AprioriReport((r, s), (r2, s2), float(gamma), gap, np.asarray(ratios), by_content, growth, notes)


# -- invariant functionals ------------------------------------------------------

@dataclass
class InvariantResult:
    D: ThetaFourierField
    defect: float  # ‖X^* D‖ / ‖D‖ on the truncation
    pairing_defect: float  # max |<D, Xv>| / (‖D‖ |v|_{1,0}) over test fields
    solve: XSolveResult | None
    notes: list[str] = field(default_factory=list)


def invariant_from_meromorphic(m: ThetaFourierField, sign: str = "+", tol: float = 1e-8,
                               pair: CROperatorPair | None = None, N: int | None = None,
                               tests: int = 10, seed: int | None = None,
                               test_fields: Sequence[ThetaFourierField] | None = None) -> InvariantResult:
    """Build ``D = D(+-) U`` from ``XU = m`` and measure its invariance.

    ``m`` must be discretely meromorphic (``D+m = 0`` for sign "+",
    ``D-m = 0`` for "-") and vanish on constants.
    """
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    pair = pair or CROperatorPair(m.mesh)
    mnorm = m.norm()
    N = (max((abs(n) for n in m.support()), default=0) + 4) if N is None else N
    if mnorm == 0.0:
        return InvariantResult(ThetaFourierField(m.mesh, N), 0.0, 0.0, None, ["m = 0 gives D = 0"])
    dm = pair.apply_dplus(m) if sign == "+" else pair.apply_dminus(m)
    if dm.norm() > tol * mnorm:
        raise ValueError(f"m is not discretely {'anti-' if sign == '-' else ''}meromorphic: "
                         f"|D{sign}m|/|m| = {dm.norm() / mnorm:.2e}")
    if abs(m.mean()) > tol * mnorm:
        raise ValueError("m must vanish on constants")
    sol = solve_X(m, tol=tol, pair=pair, N=N)
    U = sol.u
    D = pair.apply_dplus(U) if sign == "+" else pair.apply_dminus(U)
    D = D.truncated(N)
    dn = D.norm()
    if dn == 0.0:
        return InvariantResult(D, 0.0, 0.0, sol, ["D vanishes identically"])
    # X^* = -X for the adjoint pair; restrict to modes whose neighbours are kept
    XD = pair.X(D, grow=False).truncated(N - 1)
    defect = XD.norm() / dn
    rng = np.random.default_rng(seed)
    if test_fields is None:
        test_fields = [random_smooth_field(pair, max(1, N - 2), rng) for _ in range(tests)]
    worst = 0.0
    for v in test_fields:
        Xv = pair.X(v)
        worst = max(worst, abs(D.inner(Xv)) / (dn * sobolev_norm(v, (1, 0), pair)))
    return InvariantResult(D, defect, worst, sol)
