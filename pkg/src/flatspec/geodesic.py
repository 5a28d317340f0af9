"""Geodesic and orthogonal flows on the unit tangent bundle, and leaf sampling.

Points of the unit tangent bundle are :class:`UnitTangentState` objects: a
triangle, a position in that triangle's chart, and a direction angle in the
same chart.  The geodesic flow moves in direction ``theta``, the orthogonal
flow in direction ``theta + pi/2``; both leave the fibre coordinate alone
except for the chart change at edge crossings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .surface import TWO_PI, TriangulatedFlatSurface, transport_loop

CONE_SNAP = 1e-12
MAX_CROSSINGS = 10_000_000

__all__ = [
    "UnitTangentState", "TraceResult", "LeafWalkRecord", "ReturnAngleReport",
    "flow", "transport_loop", "leaf_walk", "return_angle_discrepancy", "star_discrepancy",
]


@dataclass(frozen=True)
class UnitTangentState:
    tri: int
    x: float
    y: float
    theta: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def rotated(self, angle: float) -> "UnitTangentState":
        return UnitTangentState(self.tri, self.x, self.y, (self.theta + angle) % TWO_PI)


@dataclass(frozen=True)
class TraceResult:
    state: UnitTangentState
    length: float
    crossings: tuple[tuple[int, float], ...]
    hit_cone: int | None = None

    @property
    def rotation(self) -> float:
        return sum(r for _, r in self.crossings) % TWO_PI


class _Tracer:
    """Flattened per-triangle data for the inner tracing loop."""

    def __init__(self, surface: TriangulatedFlatSurface):
        self.surface = surface
        self.edges = []  # per triangle: list of (nx, ny, c) for the outward line nx*x + ny*y = c
        self.glue = []  # per triangle: list of (partner_tri, partner_edge, cos, sin, bx, by, rho)
        self.cones = []  # per triangle: list of (vx, vy, vertex_class) for singular corners
        singular = set(surface.singular_vertices())
        for t, tri in enumerate(surface.triangles):
            lines, gl, cones = [], [], []
            for e in range(3):
                a, b = tri[(e + 1) % 3], tri[(e + 2) % 3]
                dx, dy = b[0] - a[0], b[1] - a[1]
                ln = math.hypot(dx, dy)
                nx, ny = dy / ln, -dx / ln
                lines.append((nx, ny, nx * a[0] + ny * a[1]))
                g = surface.gluings[(t, e)]
                gl.append((g.partner_tri, g.partner_edge, math.cos(g.rotation), math.sin(g.rotation),
                           g.translation[0], g.translation[1], g.rotation))
            for c in range(3):
                v = surface.corner_class[(t, c)]
                if v in singular:
                    cones.append((float(tri[c][0]), float(tri[c][1]), v))
            self.edges.append(lines)
            self.glue.append(gl)
            self.cones.append(cones)

    def trace(self, tri: int, x: float, y: float, theta: float, length: float, offset: float,
              record: list | None = None, observer: Callable | None = None):
        """Move ``length`` along direction ``theta + offset``.

        Returns ``(tri, x, y, theta, travelled, hit_cone)``.  ``record`` collects
        ``(edge, rotation)`` crossings; ``observer(tri, x0, y0, x1, y1, theta)``
        sees every straight piece.
        """
        if length < 0:
            length = -length
            offset += math.pi
        phi = theta + offset
        dx, dy = math.cos(phi), math.sin(phi)
        remaining = length
        entered = -1
        travelled = 0.0
        edges, glue, cones = self.edges, self.glue, self.cones
        for _ in range(MAX_CROSSINGS):
            best_t, best_e = math.inf, -1
            for e, (nx, ny, c) in enumerate(edges[tri]):
                if e == entered:
                    continue
                den = nx * dx + ny * dy
                if den > 1e-15:
                    t = (c - nx * x - ny * y) / den
                    if t < best_t:
                        best_t, best_e = t, e
            if best_t < 0.0:
                best_t = 0.0
            step = min(best_t, remaining)
            for vx, vy, v in cones[tri]:
                # closest approach of the piece to a singular corner
                s = (vx - x) * dx + (vy - y) * dy
                if -CONE_SNAP <= s <= step + CONE_SNAP:
                    if abs((vx - x) * dy - (vy - y) * dx) <= CONE_SNAP:
                        s = max(s, 0.0)
                        if observer is not None:
                            observer(tri, x, y, x + s * dx, y + s * dy, theta)
                        return tri, x + s * dx, y + s * dy, theta, travelled + s, v
            if best_t >= remaining:
                nx_, ny_ = x + remaining * dx, y + remaining * dy
                if observer is not None:
                    observer(tri, x, y, nx_, ny_, theta)
                return tri, nx_, ny_, theta, length, None
            qx, qy = x + best_t * dx, y + best_t * dy
            if observer is not None:
                observer(tri, x, y, qx, qy, theta)
            travelled += best_t
            remaining -= best_t
            pt, pe, cr, sr, bx, by, rho = glue[tri][best_e]
            if record is not None:
                record.append(((tri, best_e), rho))
            x, y = cr * qx - sr * qy + bx, sr * qx + cr * qy + by
            dx, dy = cr * dx - sr * dy, sr * dx + cr * dy
            theta += rho
            if theta >= TWO_PI:
                theta -= TWO_PI
            tri, entered = pt, pe
        raise RuntimeError("crossing budget exhausted")


@lru_cache(maxsize=32)
def _tracer(surface: TriangulatedFlatSurface) -> _Tracer:
    return _Tracer(surface)


def flow(surface: TriangulatedFlatSurface, state: UnitTangentState, length: float,
         direction_mode: str = "X") -> TraceResult:
    """Flow ``state`` for arc length ``length`` along X (geodesic) or Y (orthogonal).

    Negative lengths flow backwards.  A trajectory that runs into a cone point
    stops there and reports the vertex class in ``hit_cone``.
    """
    if direction_mode not in ("X", "Y"):
        raise ValueError(f"direction_mode must be 'X' or 'Y', not {direction_mode!r}")
    offset = 0.0 if direction_mode == "X" else 0.5 * math.pi
    record: list = []
    tri, x, y, th, travelled, hit = _tracer(surface).trace(
        state.tri, state.x, state.y, state.theta % TWO_PI, float(length), offset, record)
    return TraceResult(UnitTangentState(tri, float(x), float(y), th % TWO_PI), travelled,
                       tuple((edge, rho) for edge, rho in record), hit)


def star_discrepancy(values: Sequence[float] | np.ndarray) -> float:
    """Star discrepancy of a finite sequence in [0, 1)."""
    x = np.sort(np.mod(np.asarray(values, dtype=float), 1.0))
    n = len(x)
    if n == 0:
        raise ValueError("empty sequence")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


@dataclass
class LeafWalkRecord:
    """Visit counts of a random walk along one leaf of the horizontal foliation.

    ``counts[t, i, j, k]`` counts visits to triangle ``t``, position cell
    ``(i, j)`` of that triangle's bounding-box grid and direction bin ``k``.
    """

    surface: TriangulatedFlatSurface
    bins: tuple[int, int, int]
    counts: np.ndarray
    cell_area: np.ndarray
    thetas: np.ndarray
    final_state: UnitTangentState
    rejected: int = 0

    @property
    def steps(self) -> int:
        return int(self.counts.sum())

    def theta_histogram(self, nbins: int | None = None) -> np.ndarray:
        nbins = nbins or self.bins[2]
        h, _ = np.histogram(self.thetas / TWO_PI, bins=nbins, range=(0.0, 1.0))
        return h

    def theta_discrepancy(self) -> float:
        return star_discrepancy(self.thetas / TWO_PI)

    def density(self) -> np.ndarray:
        """Visit frequency divided by the volume fraction of each bin (1 = uniform)."""
        vol_frac = self.cell_area[..., None] / self.surface.area / self.bins[2]
        with np.errstate(invalid="ignore", divide="ignore"):
            d = (self.counts / max(self.steps, 1)) / vol_frac
        return np.where(vol_frac > 0, d, 0.0)


def _clip_area(poly: list[tuple[float, float]], x0, x1, y0, y1) -> float:
    def clip(pts, inside, cut):
        out = []
        for i, p in enumerate(pts):
            q = pts[i - 1]
            if inside(p):
                if not inside(q):
                    out.append(cut(q, p))
                out.append(p)
            elif inside(q):
                out.append(cut(q, p))
        return out

    def cut_x(xv):
        return lambda q, p: (xv, q[1] + (p[1] - q[1]) * (xv - q[0]) / (p[0] - q[0]))

    def cut_y(yv):
        return lambda q, p: (q[0] + (p[0] - q[0]) * (yv - q[1]) / (p[1] - q[1]), yv)

    pts = poly
    for inside, cut in ((lambda p: p[0] >= x0, cut_x(x0)), (lambda p: p[0] <= x1, cut_x(x1)),
                        (lambda p: p[1] >= y0, cut_y(y0)), (lambda p: p[1] <= y1, cut_y(y1))):
        pts = clip(pts, inside, cut)
        if not pts:
            return 0.0
    return 0.5 * abs(sum(pts[i - 1][0] * p[1] - p[0] * pts[i - 1][1] for i, p in enumerate(pts)))


def _cell_areas(surface: TriangulatedFlatSurface, nx: int, ny: int):
    boxes = []
    areas = np.zeros((surface.num_triangles, nx, ny))
    for t, tri in enumerate(surface.triangles):
        lo, hi = tri.min(axis=0), tri.max(axis=0)
        boxes.append((float(lo[0]), float(lo[1]), float(hi[0] - lo[0]) / nx, float(hi[1] - lo[1]) / ny))
        poly = [tuple(map(float, p)) for p in tri]
        for i in range(nx):
            for j in range(ny):
                areas[t, i, j] = _clip_area(poly, lo[0] + i * boxes[-1][2], lo[0] + (i + 1) * boxes[-1][2],
                                            lo[1] + j * boxes[-1][3], lo[1] + (j + 1) * boxes[-1][3])
    return boxes, areas


def leaf_walk(surface: TriangulatedFlatSurface, state: UnitTangentState, steps: int,
              seed: int | np.random.Generator | None = None, bins: tuple[int, int, int] = (8, 8, 64),
              mean_length: float = 1.0) -> LeafWalkRecord:
    """Random walk along a leaf: alternate X and Y segments of random length.

    Segment lengths are exponential with mean ``mean_length`` and a random
    sign, so the walk is reversible with respect to the Liouville volume.
    Segments that run into a cone point are discarded and redrawn.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    tracer = _tracer(surface)
    nx, ny, nt = bins
    boxes, areas = _cell_areas(surface, nx, ny)
    counts = np.zeros((surface.num_triangles, nx, ny, nt), dtype=np.int64)
    thetas = np.empty(steps)
    tri, x, y, th = state.tri, state.x, state.y, state.theta % TWO_PI
    rejected = 0
    chunk = 4096
    done = 0
    while done < steps:
        lengths = rng.exponential(mean_length, chunk) * rng.choice((-1.0, 1.0), chunk)
        for ln in lengths:
            if done >= steps:
                break
            offset = 0.0 if done % 2 == 0 else 0.5 * math.pi
            res = tracer.trace(tri, x, y, th, float(ln), offset)
            if res[5] is not None:
                rejected += 1
                continue
            tri, x, y, th = res[0], res[1], res[2], res[3] % TWO_PI
            bx, by, wx, wy = boxes[tri]
            i = min(max(int((x - bx) / wx), 0), nx - 1)
            j = min(max(int((y - by) / wy), 0), ny - 1)
            k = min(int(th / TWO_PI * nt), nt - 1)
            counts[tri, i, j, k] += 1
            thetas[done] = th
            done += 1
    return LeafWalkRecord(surface, (nx, ny, nt), counts, areas, thetas,
                          UnitTangentState(tri, x, y, th), rejected)


@dataclass
class ReturnAngleReport:
    angles: np.ndarray  # holonomy of each return, as a fraction of a turn
    discrepancy: float
    steps: int
    complete: bool
    requested: int = 0
    base_state: UnitTangentState | None = None
    radius: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def num_returns(self) -> int:
        return len(self.angles)


def return_angle_discrepancy(surface: TriangulatedFlatSurface, base_state: UnitTangentState,
                             radius: float, num_returns: int, seed: int | None = None,
                             max_steps: int = 5_000_000, mean_length: float = 1.0) -> ReturnAngleReport:
    """Star discrepancy of the holonomy angles at successive returns to a disk.

    The disk of ``radius`` about ``base_state``'s position must lie inside the
    base triangle.  Each time the leaf walk enters it, the direction angle
    relative to ``base_state.theta`` is recorded.
    """
    tri0, cx, cy = base_state.tri, base_state.x, base_state.y
    for nx_, ny_, c in _tracer(surface).edges[tri0]:
        if c - (nx_ * cx + ny_ * cy) < radius:
            raise ValueError("return disk must lie inside the base triangle")
    r2 = radius * radius
    angles: list[float] = []
    theta0 = base_state.theta

    def observer(t, x0, y0, x1, y1, theta):
        if t != tri0:
            return
        if (x0 - cx) ** 2 + (y0 - cy) ** 2 <= r2:
            return  # started inside: same visit
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        s = 0.0 if ll == 0.0 else min(max(((cx - x0) * dx + (cy - y0) * dy) / ll, 0.0), 1.0)
        if (x0 + s * dx - cx) ** 2 + (y0 + s * dy - cy) ** 2 <= r2:
            angles.append(((theta - theta0) / TWO_PI) % 1.0)

    rng = np.random.default_rng(seed)
    tracer = _tracer(surface)
    tri, x, y, th = tri0, cx, cy, theta0 % TWO_PI
    steps = 0
    while len(angles) < num_returns and steps < max_steps:
        lengths = rng.exponential(mean_length, 1024) * rng.choice((-1.0, 1.0), 1024)
        for ln in lengths:
            offset = 0.0 if steps % 2 == 0 else 0.5 * math.pi
            before = len(angles)
            res = tracer.trace(tri, x, y, th, float(ln), offset, observer=observer)
            if res[5] is not None:
                del angles[before:]
                continue
            tri, x, y, th = res[0], res[1], res[2], res[3] % TWO_PI
            steps += 1
            if len(angles) >= num_returns:
                break
    got = np.asarray(angles[:num_returns])
    report = ReturnAngleReport(got, star_discrepancy(got) if len(got) else 1.0, steps,
                               len(got) >= num_returns, num_returns, base_state, radius)
    if not report.complete:
        report.notes.append(f"only {len(got)} of {num_returns} returns within {max_steps} steps")
    return report
