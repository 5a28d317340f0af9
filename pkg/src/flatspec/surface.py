"""Flat surfaces with cone points, stored as glued Euclidean triangles.

Every triangle carries its own planar chart.  An edge gluing is the
orientation-preserving rigid motion ``p -> R(rho) p + b`` that carries the
chart of one triangle onto the chart of its neighbour along the shared edge;
direction angles transform as ``theta -> theta + rho``.

Edge ``e`` of a triangle is the edge opposite corner ``e``; it runs from
corner ``e + 1`` to corner ``e + 2`` (indices mod 3).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
LENGTH_RTOL = 1e-12
ANGLE_ATOL = 1e-10


class SurfaceError(ValueError):
    """Raised for surface descriptions that do not define a closed flat surface."""


@dataclass(frozen=True)
class Gluing:
    """Rigid motion from the chart of ``(tri, edge)`` to the chart of its partner."""

    tri: int
    edge: int
    partner_tri: int
    partner_edge: int
    rotation: float
    translation: tuple[float, float]

    def apply(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return (c * x - s * y + self.translation[0], s * x + c * y + self.translation[1])


@dataclass(frozen=True)
class ConePointData:
    vertex_class: int
    total_angle: float
    alpha: float
    is_singular: bool


@dataclass(frozen=True)
class HolonomyData:
    """Generator loops (as edge-crossing sequences) and their rotation fractions.

    ``angles[i]`` lies in [0, 1); the holonomy of ``generators[i]`` is a
    rotation by ``2 pi angles[i]``.
    """

    generators: tuple[tuple[tuple[int, int], ...], ...]
    angles: tuple[float, ...]
    kinds: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class TriangulatedFlatSurface:
    """Closed oriented flat surface given by triangles and edge gluings.

    Use :func:`build_from_spec` or the convenience constructors rather than
    calling this directly; construction assumes validated data.
    """

    triangles: np.ndarray  # (F, 3, 2)
    gluings: dict[tuple[int, int], Gluing]
    vertex_classes: tuple[tuple[tuple[int, int], ...], ...]
    corner_class: dict[tuple[int, int], int]
    corner_angles: np.ndarray  # (F, 3)
    description: Mapping[str, Any] = field(default_factory=dict)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_classes)

    @property
    def num_edges(self) -> int:
        return len(self.gluings) // 2

    @property
    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_triangles

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic) // 2

    @property
    def area(self) -> float:
        return float(sum(triangle_area(t) for t in self.triangles))

    def total_angle(self, vertex_class: int) -> float:
        return float(sum(self.corner_angles[t, c] for t, c in self.vertex_classes[vertex_class]))

    def singular_vertices(self) -> list[int]:
        return [v for v in range(self.num_vertices)
                if abs(self.total_angle(v) - TWO_PI) > ANGLE_ATOL]

    def corner(self, tri: int, c: int) -> np.ndarray:
        return self.triangles[tri, c % 3]

    def scaled(self, factor: float) -> "TriangulatedFlatSurface":
        desc = {"triangles": (self.triangles * factor).tolist(),
                "gluings": [[[g.tri, g.edge], [g.partner_tri, g.partner_edge]]
                            for g in self.gluings.values() if (g.tri, g.edge) < (g.partner_tri, g.partner_edge)]}
        return build_from_spec(desc)

    def content_hash(self) -> str:
        payload = json.dumps({"triangles": np.round(self.triangles, 15).tolist(),
                              "gluings": sorted([g.tri, g.edge, g.partner_tri, g.partner_edge]
                                                for g in self.gluings.values())},
                             sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def triangle_area(tri: np.ndarray) -> float:
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def _corner_angles(tri: np.ndarray) -> np.ndarray:
    out = np.empty(3)
    for c in range(3):
        u = tri[(c + 1) % 3] - tri[c]
        w = tri[(c + 2) % 3] - tri[c]
        out[c] = math.atan2(u[0] * w[1] - u[1] * w[0], u[0] * w[0] + u[1] * w[1])
    return out


def _edge_endpoints(tri: np.ndarray, e: int) -> tuple[np.ndarray, np.ndarray]:
    return tri[(e + 1) % 3], tri[(e + 2) % 3]


def _gluing_motion(src: np.ndarray, e: int, dst: np.ndarray, e2: int) -> tuple[float, tuple[float, float]]:
    # Orientation preserving: start of one edge goes to the end of the other.
    a, b = _edge_endpoints(src, e)
    a2, b2 = _edge_endpoints(dst, e2)
    la, lb = np.linalg.norm(b - a), np.linalg.norm(a2 - b2)
    if abs(la - lb) > LENGTH_RTOL * max(la, lb):
        raise SurfaceError(f"edge length mismatch: {float(la):.17g} vs {float(lb):.17g}")
    d, d2 = b - a, a2 - b2
    rho = math.atan2(d2[1], d2[0]) - math.atan2(d[1], d[0])
    rho = rho % TWO_PI
    c, s = math.cos(rho), math.sin(rho)
    t = b2 - np.array([c * a[0] - s * a[1], s * a[0] + c * a[1]])
    return rho, (float(t[0]), float(t[1]))


def _find(parent: dict, k):
    while parent[k] != k:
        parent[k] = parent[parent[k]]
        k = parent[k]
    return k


def build_from_spec(spec: Mapping[str, Any] | str | Path) -> TriangulatedFlatSurface:
    """Build and validate a surface from a description document.

    ``spec`` is a mapping (or a JSON string / path) in one of three forms::

        {"triangles": [[[x, y], [x, y], [x, y]], ...],
         "gluings": [[[t, e], [t2, e2]], ...]}
        {"double_triangle": {"angles_over_pi": [a, b, c], "scale": s}}
        {"torus": {"u": [ux, uy], "v": [vx, vy]}}
    """
    if isinstance(spec, Path) or (isinstance(spec, str) and not spec.lstrip().startswith("{")):
        spec = json.loads(Path(spec).read_text())
    elif isinstance(spec, str):
        spec = json.loads(spec)
    if not isinstance(spec, Mapping):
        raise SurfaceError("surface description must be a JSON object")
    if "double_triangle" in spec:
        d = spec["double_triangle"]
        angles = [math.pi * float(Fraction(str(a)) if isinstance(a, str) else a) for a in d["angles_over_pi"]]
        return double_of_triangle(angles, float(d.get("scale", 1.0)))
    if "torus" in spec:
        d = spec["torus"]
        return flat_torus(d.get("u", (1.0, 0.0)), d.get("v", (0.0, 1.0)))
    if "triangles" not in spec or "gluings" not in spec:
        raise SurfaceError("surface description needs 'triangles' and 'gluings'")

    try:
        tris = np.asarray(spec["triangles"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SurfaceError(f"malformed triangles: {exc}") from None
    if tris.ndim != 3 or tris.shape[1:] != (3, 2):
        raise SurfaceError(f"triangles must have shape (F, 3, 2), got {tris.shape}")
    areas = np.array([triangle_area(t) for t in tris])
    for i, a in enumerate(areas):
        scale = max(1.0, float(np.max(np.abs(tris[i]))))
        if a <= 1e-14 * scale * scale:
            raise SurfaceError(f"triangle {i} is degenerate or clockwise (signed area {a:g})")

    nf = len(tris)
    gluings: dict[tuple[int, int], Gluing] = {}
    for k, pair in enumerate(spec["gluings"]):
        try:
            (t, e), (t2, e2) = [(int(p[0]), int(p[1])) for p in pair]
        except (TypeError, ValueError, IndexError):
            raise SurfaceError(f"gluing {k}: expected [[t, e], [t2, e2]]") from None
        for tt, ee in ((t, e), (t2, e2)):
            if not (0 <= tt < nf and 0 <= ee < 3):
                raise SurfaceError(f"gluing {k}: edge ({tt}, {ee}) out of range")
        if (t, e) == (t2, e2):
            raise SurfaceError(f"gluing {k}: edge ({t}, {e}) glued to itself")
        for key in ((t, e), (t2, e2)):
            if key in gluings:
                raise SurfaceError(f"gluing {k}: edge {key} used by more than one gluing")
        try:
            rho, b = _gluing_motion(tris[t], e, tris[t2], e2)
        except SurfaceError as exc:
            raise SurfaceError(f"gluing {k}: {exc}") from None
        inv_rho = (-rho) % TWO_PI
        c, s = math.cos(inv_rho), math.sin(inv_rho)
        inv_b = (-(c * b[0] - s * b[1]), -(s * b[0] + c * b[1]))
        gluings[(t, e)] = Gluing(t, e, t2, e2, rho, b)
        gluings[(t2, e2)] = Gluing(t2, e2, t, e, inv_rho, inv_b)
    missing = [(t, e) for t in range(nf) for e in range(3) if (t, e) not in gluings]
    if missing:
        raise SurfaceError(f"unglued edges (surfaces with boundary are not supported): {missing[:6]}")

    parent = {(t, c): (t, c) for t in range(nf) for c in range(3)}
    for (t, e), g in gluings.items():
        for c, c2 in (((e + 1) % 3, (g.partner_edge + 2) % 3), ((e + 2) % 3, (g.partner_edge + 1) % 3)):
            ra, rb = _find(parent, (t, c)), _find(parent, (g.partner_tri, c2))
            if ra != rb:
                parent[ra] = rb
    groups: dict = {}
    for k in sorted(parent):
        groups.setdefault(_find(parent, k), []).append(k)
    classes = tuple(tuple(v) for v in sorted(groups.values()))
    corner_class = {c: i for i, cls in enumerate(classes) for c in cls}
    corner_angles = np.array([_corner_angles(t) for t in tris])

    surf = TriangulatedFlatSurface(tris, gluings, classes, corner_class, corner_angles,
                                   dict(spec))
    if surf.euler_characteristic % 2:
        raise SurfaceError("odd Euler characteristic: gluing is not an orientable closed surface")
    total_alpha = sum(c.alpha for c in cone_data(surf))
    if abs(total_alpha - (2 * surf.genus - 2)) > 1e-9:
        raise SurfaceError(f"Gauss-Bonnet violated: sum(alpha)={total_alpha} but 2g-2={2 * surf.genus - 2}")
    return surf


def double_of_triangle(angles: Sequence[float], scale: float = 1.0) -> TriangulatedFlatSurface:
    """Double a Euclidean triangle with interior angles ``angles`` (radians).

    The result is a sphere with three cone points of total angles ``2a, 2b, 2c``;
    ``scale`` is the length of the side between the first two corners.
    """
    a, b, c = (float(x) for x in angles)
    if min(a, b, c) <= 0 or abs(a + b + c - math.pi) > 1e-9:
        raise SurfaceError(f"degenerate triangle angles {angles!r}")
    side = scale * math.sin(b) / math.sin(c)
    v0, v1 = (0.0, 0.0), (scale, 0.0)
    v2 = (side * math.cos(a), side * math.sin(a))
    w2 = (v2[0], -v2[1])
    desc = {"triangles": [[v0, v1, v2], [v0, w2, v1]],
            "gluings": [[[0, 0], [1, 0]], [[0, 1], [1, 2]], [[0, 2], [1, 1]]]}
    surf = build_from_spec(desc)
    object.__setattr__(surf, "description",
                       {"double_triangle": {"angles_over_pi": [a / math.pi, b / math.pi, c / math.pi],
                                            "scale": scale}})
    return surf


def flat_torus(u: Sequence[float] = (1.0, 0.0), v: Sequence[float] = (0.0, 1.0)) -> TriangulatedFlatSurface:
    """Flat torus R^2 / (Z u + Z v) cut into two triangles along the diagonal."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    o = np.zeros(2)
    desc = {"triangles": [[o.tolist(), u.tolist(), (u + v).tolist()],
                          [o.tolist(), (u + v).tolist(), v.tolist()]],
            "gluings": [[[0, 2], [1, 0]], [[0, 0], [1, 1]], [[0, 1], [1, 2]]]}
    surf = build_from_spec(desc)
    object.__setattr__(surf, "description", {"torus": {"u": u.tolist(), "v": v.tolist()}})
    return surf


def cone_data(surface: TriangulatedFlatSurface) -> list[ConePointData]:
    out = []
    for v in range(surface.num_vertices):
        total = surface.total_angle(v)
        out.append(ConePointData(v, total, total / TWO_PI - 1.0, abs(total - TWO_PI) > ANGLE_ATOL))
    return out


def vertex_loop(surface: TriangulatedFlatSurface, vertex_class: int) -> tuple[tuple[int, int], ...]:
    """Edge crossings of a small loop around a vertex, oriented so that its
    holonomy is a rotation by the total angle at the vertex.
    """
    t0, c0 = surface.vertex_classes[vertex_class][0]
    crossings = []
    t, c = t0, c0
    while True:
        # Leave through the edge from corner c to corner c+1, i.e. edge c+2.
        e = (c + 2) % 3
        g = surface.gluings[(t, e)]
        crossings.append((t, e))
        t, c = g.partner_tri, (g.partner_edge + 2) % 3
        if (t, c) == (t0, c0):
            break
        if len(crossings) > 3 * surface.num_triangles:
            raise RuntimeError("vertex loop did not close")
    return tuple(crossings)


def transport_loop(surface: TriangulatedFlatSurface, loop: Sequence[tuple[int, int]]) -> float:
    """Rotation angle in [0, 2 pi) of parallel transport along an edge-crossing loop."""
    if not loop:
        return 0.0
    start = loop[0][0]
    cur = start
    total = 0.0
    for t, e in loop:
        if t != cur:
            raise ValueError(f"loop is not a path: crossing from triangle {t} while in {cur}")
        g = surface.gluings[(t, e)]
        total += g.rotation
        cur = g.partner_tri
    if cur != start:
        raise ValueError("loop does not close")
    return total % TWO_PI


def _handle_loops(surface: TriangulatedFlatSurface) -> list[tuple[tuple[int, int], ...]]:
    # Tree-cotree: primal spanning tree on vertex classes, then a dual spanning
    # tree avoiding primal tree edges; each leftover dual edge closes a loop.
    edges = sorted({min((g.tri, g.edge), (g.partner_tri, g.partner_edge)) for g in surface.gluings.values()})
    endpoints = {}
    for t, e in edges:
        endpoints[(t, e)] = (surface.corner_class[(t, (e + 1) % 3)], surface.corner_class[(t, (e + 2) % 3)])
    parent = {v: v for v in range(surface.num_vertices)}
    primal_tree = set()
    for ed in edges:
        a, b = (_find(parent, x) for x in endpoints[ed])
        if a != b:
            parent[a] = b
            primal_tree.add(ed)
    adj: dict[int, list[tuple[int, int]]] = {t: [] for t in range(surface.num_triangles)}
    dual_parent = {t: t for t in range(surface.num_triangles)}
    dual_tree = set()
    rest = []
    for ed in edges:
        if ed in primal_tree:
            continue
        g = surface.gluings[ed]
        a, b = _find(dual_parent, g.tri), _find(dual_parent, g.partner_tri)
        if a != b:
            dual_parent[a] = b
            dual_tree.add(ed)
            adj[g.tri].append((g.tri, g.edge))
            adj[g.partner_tri].append((g.partner_tri, g.partner_edge))
        else:
            rest.append(ed)

    root = 0
    back: dict[int, tuple[int, int] | None] = {root: None}
    stack = [root]
    while stack:
        t = stack.pop()
        for crossing in adj[t]:
            nxt = surface.gluings[crossing].partner_tri
            if nxt not in back:
                back[nxt] = crossing
                stack.append(nxt)

    def path_from_root(t: int) -> list[tuple[int, int]]:
        path = []
        while back[t] is not None:
            crossing = back[t]
            path.append(crossing)
            t = crossing[0]
        return path[::-1]

    loops = []
    for ed in rest:
        g = surface.gluings[ed]
        to_a = path_from_root(g.tri)
        to_b = path_from_root(g.partner_tri)
        home = [(surface.gluings[c].partner_tri, surface.gluings[c].partner_edge) for c in reversed(to_b)]
        loops.append(tuple(to_a + [ed] + home))
    return loops


def holonomy_generators(surface: TriangulatedFlatSurface) -> HolonomyData:
    """Loops around singular vertices plus handle loops, with holonomy fractions."""
    gens, kinds = [], []
    for v in surface.singular_vertices():
        gens.append(vertex_loop(surface, v))
        kinds.append(f"cone:{v}")
    for loop in _handle_loops(surface):
        gens.append(loop)
        kinds.append("handle")
    angles = []
    for loop in gens:
        frac = transport_loop(surface, loop) / TWO_PI
        if abs(frac - round(frac)) < ANGLE_ATOL:
            frac = 0.0
        angles.append(frac % 1.0)
    return HolonomyData(tuple(gens), tuple(angles), tuple(kinds))
