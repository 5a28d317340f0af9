"""Fibre-Fourier decomposition of functions on the unit tangent bundle.

A function on the unit tangent bundle is stored through its projections
``pi_n f`` for ``|n| <= N``.  Each projection is a section of the mode-``n``
bundle, kept as one complex value per mesh vertex in that vertex's home
chart (see :mod:`flatspec.mesh`).  Vertices pinned at a mode hold 0.

The inner product is the Liouville one: ``<f, g> = 2 pi sum_n sum_v m_v f_n(v) conj(g_n(v))``
with lumped vertex masses ``m_v``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .mesh import FlatMesh, build_mesh
from .surface import TWO_PI, TriangulatedFlatSurface

__all__ = [
    "ThetaFourierField", "SobolevIndex", "project_pi_n", "project", "sobolev_norm",
    "fiber_norm", "mode_equivalence_check", "EquivalenceReport", "save_field", "load_field",
    "DEFAULT_N",
]

DEFAULT_N = 16
MAX_R = 2

# f(tri, x, y, theta) -> values, vectorised over numpy arrays
StateFunction = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SobolevIndex:
    r: int
    s: float

    def __post_init__(self):
        if self.r < 0 or self.s < 0:
            raise ValueError("Sobolev orders must be non-negative")


@dataclass
class ThetaFourierField:
    """Truncated fibre-Fourier expansion ``f = sum_{|n|<=N} pi_n f``.

    ``modes[n]`` is a complex array over mesh vertices.  Missing modes in
    ``[-N, N]`` are filled with zeros.
    """

    mesh: FlatMesh
    N: int
    modes: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        V = self.mesh.num_vertices
        full = {}
        for n in range(-self.N, self.N + 1):
            u = self.modes.get(n)
            u = np.zeros(V, dtype=complex) if u is None else np.array(u, dtype=complex)
            if u.shape != (V,):
                raise ValueError(f"mode {n} has shape {u.shape}, expected ({V},)")
            u[self.mesh.excluded(n)] = 0.0
            full[n] = u
        extra = set(self.modes) - set(full)
        if extra:
            raise ValueError(f"modes {sorted(extra)} outside [-{self.N}, {self.N}]")
        self.modes = full

    @classmethod
    def zeros(cls, mesh: FlatMesh, N: int) -> "ThetaFourierField":
        return cls(mesh, N)

    @classmethod
    def single_mode(cls, mesh: FlatMesh, n: int, values, N: int | None = None) -> "ThetaFourierField":
        N = abs(n) if N is None else N
        return cls(mesh, N, {n: values})

    @property
    def surface(self) -> TriangulatedFlatSurface:
        return self.mesh.surface

    def mode(self, n: int) -> np.ndarray:
        """Vertex values of ``pi_n f`` (zeros outside the truncation)."""
        if abs(n) > self.N:
            return np.zeros(self.mesh.num_vertices, dtype=complex)
        return self.modes[n]

    def dof_vector(self, n: int) -> np.ndarray:
        return self.mesh.restrict(n, self.mode(n))

    def support(self, rtol: float = 1e-13) -> list[int]:
        """Modes whose largest entry exceeds ``rtol`` times the largest entry overall."""
        peak = max((float(np.max(np.abs(u), initial=0.0)) for u in self.modes.values()), default=0.0)
        if peak == 0.0:
            return []
        return [n for n, u in self.modes.items() if np.max(np.abs(u), initial=0.0) > rtol * peak]

    def truncated(self, N: int) -> "ThetaFourierField":
        return ThetaFourierField(self.mesh, N, {n: self.mode(n) for n in range(-N, N + 1)})

    def map_modes(self, fn: Callable[[int, np.ndarray], np.ndarray]) -> "ThetaFourierField":
        return ThetaFourierField(self.mesh, self.N, {n: fn(n, u) for n, u in self.modes.items()})

    def theta(self, power: int = 1) -> "ThetaFourierField":
        """Apply the fibre generator: multiplication by ``(i n)**power`` per mode."""
        return self.map_modes(lambda n, u: (1j * n) ** power * u)

    def _check(self, other: "ThetaFourierField"):
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes")

    def __add__(self, other: "ThetaFourierField") -> "ThetaFourierField":
        self._check(other)
        N = max(self.N, other.N)
        return ThetaFourierField(self.mesh, N, {n: self.mode(n) + other.mode(n) for n in range(-N, N + 1)})

    def __sub__(self, other: "ThetaFourierField") -> "ThetaFourierField":
        return self + (-1.0) * other

    def __mul__(self, c: complex) -> "ThetaFourierField":
        return self.map_modes(lambda n, u: c * u)

    __rmul__ = __mul__

    def inner(self, other: "ThetaFourierField") -> complex:
        self._check(other)
        w = self.mesh.vertex_mass
        N = min(self.N, other.N)
        return complex(TWO_PI * sum(np.sum(w * self.mode(n) * np.conj(other.mode(n))) for n in range(-N, N + 1)))

    def mode_norms(self) -> dict[int, float]:
        w = self.mesh.vertex_mass
        return {n: math.sqrt(TWO_PI * float(np.sum(w * np.abs(u) ** 2))) for n, u in self.modes.items()}

    def norm(self) -> float:
        return math.sqrt(sum(v ** 2 for v in self.mode_norms().values()))

    def mean(self) -> complex:
        """Average over the unit tangent bundle (only mode 0 contributes)."""
        w = self.mesh.vertex_mass
        return complex(np.sum(w * self.modes[0]) / np.sum(w))

    def evaluate(self, vertex: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Value at vertices (home charts) and fibre angles."""
        vertex, theta = np.broadcast_arrays(np.asarray(vertex), np.asarray(theta, dtype=float))
        out = np.zeros(vertex.shape, dtype=complex)
        for n, u in self.modes.items():
            out += u[vertex] * np.exp(1j * n * theta)
        return out

    def is_real(self, tol: float = 1e-12) -> bool:
        """True if ``pi_{-n} f`` is the conjugate of ``pi_n f`` in every mode."""
        scale = max(self.norm(), 1.0)
        return all(np.max(np.abs(self.modes[-n] - np.conj(self.modes[n])), initial=0.0) <= tol * scale
                   for n in range(self.N + 1))


def _sample(mesh: FlatMesh, f: StateFunction, Q: int) -> np.ndarray:
    th = TWO_PI * np.arange(Q) / Q
    tri = mesh.vertex_tri
    xy = mesh.vertex_xy
    vals = f(tri[:, None], xy[:, 0][:, None], xy[:, 1][:, None], th[None, :])
    vals = np.broadcast_to(np.asarray(vals, dtype=complex), (mesh.num_vertices, Q))
    return vals


def project_pi_n(mesh: FlatMesh, f: StateFunction, n: int, Q: int = 4 * DEFAULT_N) -> np.ndarray:
    """Trapezoid-rule projection ``(1/2pi) int e^{-in theta} f dtheta`` at each vertex.

    Exact for trigonometric polynomials of degree ``<= Q - 1 - |n|``.
    """
    if Q < 2 * abs(n) + 1:
        raise ValueError("need Q >= 2|n| + 1 quadrature points")
    vals = _sample(mesh, f, Q)
    th = TWO_PI * np.arange(Q) / Q
    u = vals @ np.exp(-1j * n * th) / Q
    u[mesh.excluded(n)] = 0.0
    return u


def project(mesh: FlatMesh, f: StateFunction, N: int = DEFAULT_N, Q: int | None = None) -> ThetaFourierField:
    """Project ``f`` onto all modes ``|n| <= N`` (one FFT per vertex)."""
    Q = 4 * max(N, 1) if Q is None else Q
    if Q < 2 * N + 1:
        raise ValueError("need Q >= 2N + 1 for alias-free truncation")
    coef = np.fft.fft(_sample(mesh, f, Q), axis=1) / Q
    return ThetaFourierField(mesh, N, {n: coef[:, n % Q] for n in range(-N, N + 1)})


def fiber_norm(field: ThetaFourierField, s: float) -> float:
    """``(sum_n (1 + n^2)^s ||pi_n f||^2)^(1/2)``, a fibre norm for real ``s``."""
    return math.sqrt(sum((1.0 + n * n) ** s * v ** 2 for n, v in field.mode_norms().items()))


def sobolev_norm(field: ThetaFourierField, index: SobolevIndex | tuple[int, int], ops=None) -> float:
    """``(sum_{i+j<=r} sum_{l<=s} ||X^i Y^j Theta^l f||^2)^(1/2)``.

    ``ops`` is a :class:`flatspec.cohomology.CROperatorPair` on the field's
    mesh; it is built on demand when ``r > 0``.
    """
    idx = index if isinstance(index, SobolevIndex) else SobolevIndex(*index)
    r, s = idx.r, idx.s
    if r > MAX_R:
        raise ValueError(f"horizontal order r={r} exceeds supported discrete order {MAX_R}")
    if int(s) != s:
        raise ValueError("sobolev_norm needs an integer fibre order; see fiber_norm for real s")
    if r > 0 and ops is None:
        from .cohomology import CROperatorPair
        ops = CROperatorPair(field.mesh)
    total = 0.0
    for l in range(int(s) + 1):
        g = field.theta(l) if l else field
        for i in range(r + 1):
            for j in range(r + 1 - i):
                h = g
                for _ in range(j):
                    h = ops.Y(h)
                for _ in range(i):
                    h = ops.X(h)
                total += h.norm() ** 2
    return math.sqrt(total)


@dataclass
class EquivalenceReport:
    lhs: float  # |f|_{r,s}^2
    rhs: float  # sum_n (1 + n^{2s}) |pi_n f|_{r,0}^2
    ratio: float
    within: bool
    constant: float = 10.0


def mode_equivalence_check(field: ThetaFourierField, index: SobolevIndex | tuple[int, int], ops=None,
                           constant: float = 10.0) -> EquivalenceReport:
    """Compare ``|f|_{r,s}^2`` with ``sum_n (1 + n^{2s}) |pi_n f|_{r,0}^2``.

    The sum runs over all truncated modes, negative ones included.
    """
    idx = index if isinstance(index, SobolevIndex) else SobolevIndex(*index)
    if idx.r > 0 and ops is None:
        from .cohomology import CROperatorPair
        ops = CROperatorPair(field.mesh)
    lhs = sobolev_norm(field, idx, ops) ** 2
    rhs = 0.0
    for n in field.support():
        single = ThetaFourierField(field.mesh, field.N, {n: field.modes[n]})
        rhs += (1.0 + float(n) ** (2 * idx.s)) * sobolev_norm(single, SobolevIndex(idx.r, 0), ops) ** 2
    if rhs == 0.0:
        return EquivalenceReport(lhs, rhs, 1.0 if lhs == 0.0 else math.inf, lhs == 0.0, constant)
    ratio = lhs / rhs
    return EquivalenceReport(lhs, rhs, ratio, 1.0 / constant <= ratio <= constant, constant)


# -- serialization --------------------------------------------------------------

def _field_header(field: ThetaFourierField) -> dict:
    from . import __version__
    return {"flatspec_version": __version__, "N": field.N, "m": field.mesh.m,
            "surface_hash": field.surface.content_hash(), "num_vertices": field.mesh.num_vertices}


def save_field(field: ThetaFourierField, directory: str | Path, description: Mapping | None = None) -> Path:
    """Write ``mode_<n>.csv`` files (vertex id, Re, Im) and ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for n, u in field.modes.items():
        path = out / f"mode_{n}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "re", "im"])
            for v in range(len(u)):
                w.writerow([v, repr(float(u[v].real)), repr(float(u[v].imag))])
        files[str(n)] = path.name
    manifest = _field_header(field)
    manifest["modes"] = files
    manifest["surface"] = dict(description) if description is not None else dict(field.surface.description)
    data = json.dumps(manifest, indent=2, sort_keys=True)
    manifest["content_hash"] = hashlib.sha256(data.encode()).hexdigest()[:16]
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_field(manifest: str | Path, surface: TriangulatedFlatSurface | None = None) -> ThetaFourierField:
    """Read a field written by :func:`save_field`.

    The surface is rebuilt from the manifest unless given; its hash must match.
    """
    from .surface import build_from_spec
    path = Path(manifest)
    if path.is_dir():
        path = path / "manifest.json"
    meta = json.loads(path.read_text())
    if surface is None:
        surface = build_from_spec(meta["surface"])
    if surface.content_hash() != meta["surface_hash"]:
        raise ValueError("surface hash does not match the field manifest")
    mesh = build_mesh(surface, int(meta["m"]))
    modes = {}
    for key, name in meta["modes"].items():
        rows = np.loadtxt(path.parent / name, delimiter=",", skiprows=1, ndmin=2)
        u = np.zeros(mesh.num_vertices, dtype=complex)
        u[rows[:, 0].astype(int)] = rows[:, 1] + 1j * rows[:, 2]
        modes[int(key)] = u
    return ThetaFourierField(mesh, int(meta["N"]), modes)
