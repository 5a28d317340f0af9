"""Regular refinement of a flat surface and per-mode P1 operators.

Every triangle is cut into ``m**2`` congruent pieces.  Lattice nodes on
glued edges and at corners are identified; the identification carries the
chart rotation, so a section of the mode-``n`` bundle is stored as one value
per surface vertex in the chart of that vertex's home node.  The value seen
in another chart is ``exp(i n w) * u`` with ``w`` the rotation from that
chart to the home chart.

A vertex whose identification cycle closes with rotation ``mu`` (a cone
point) supports nonzero mode-``n`` values only if ``exp(i n mu) = 1``;
otherwise it is pinned to zero at that mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .surface import TWO_PI, TriangulatedFlatSurface, triangle_area

PHASE_TOL = 1e-9

__all__ = ["FlatMesh", "build_mesh", "coarse_to_fine"]


def _wrap(a: float) -> float:
    """Reduce an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a > math.pi:
        a -= TWO_PI
    elif a <= -math.pi:
        a += TWO_PI
    return a


@dataclass(eq=False)
class FlatMesh:
    """Refined mesh with node-to-vertex identification and chart rotations.

    Attributes
    ----------
    node_tri, node_xy : chart triangle and chart position of each lattice node.
    node_vertex : surface vertex id of each node.
    node_rot : rotation from the node's chart to the vertex's home chart.
    vertex_node : home node of each vertex.
    vertex_monodromy : rotation accumulated around each vertex, in (-pi, pi].
    faces : (F, 3) node ids of the small triangles (counter-clockwise).
    face_tri, face_area, face_grad : chart, area and (F, 3, 2) hat gradients.
    """

    surface: TriangulatedFlatSurface
    m: int
    node_tri: np.ndarray
    node_xy: np.ndarray
    node_vertex: np.ndarray
    node_rot: np.ndarray
    vertex_node: np.ndarray
    vertex_monodromy: np.ndarray
    faces: np.ndarray
    face_tri: np.ndarray
    face_area: np.ndarray
    face_grad: np.ndarray

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_node)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def h(self) -> float:
        """Longest edge of the small triangles."""
        tri = self.surface.triangles
        edges = np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2)
        return float(edges.max() / self.m)

    @property
    def vertex_tri(self) -> np.ndarray:
        return self.node_tri[self.vertex_node]

    @property
    def vertex_xy(self) -> np.ndarray:
        return self.node_xy[self.vertex_node]

    @property
    def vertex_mass(self) -> np.ndarray:
        """Lumped (one third of incident area) mass of every vertex."""
        return self._vertex_mass

    def __post_init__(self):
        mass = np.zeros(self.num_vertices)
        np.add.at(mass, self.node_vertex[self.faces].ravel(), np.repeat(self.face_area / 3.0, 3))
        self._vertex_mass = mass
        self._cache: dict = {}

    # -- per-mode bookkeeping -------------------------------------------------
    def excluded(self, n: int) -> np.ndarray:
        """Boolean mask of vertices pinned to zero at mode ``n``."""
        ph = np.exp(1j * n * self.vertex_monodromy)
        return np.abs(ph - 1.0) > PHASE_TOL

    def dofs(self, n: int) -> np.ndarray:
        return np.flatnonzero(~self.excluded(n))

    def dof_index(self, n: int) -> np.ndarray:
        """Map vertex id -> unknown index at mode ``n`` (-1 if pinned)."""
        idx = np.full(self.num_vertices, -1)
        d = self.dofs(n)
        idx[d] = np.arange(len(d))
        return idx

    def node_phase(self, n: int) -> np.ndarray:
        return np.exp(1j * n * self.node_rot)

    def mass(self, n: int) -> np.ndarray:
        return self._vertex_mass[self.dofs(n)]

    def _face_columns(self, n: int):
        col = self.dof_index(n)[self.node_vertex[self.faces]]
        ph = self.node_phase(n)[self.faces]
        return col, ph

    def stiffness(self, n: int) -> sp.csr_matrix:
        """Hermitian cotangent stiffness of the mode-``n`` connection Laplacian."""
        key = ("K", n)
        if key not in self._cache:
            col, ph = self._face_columns(n)
            g = self.face_grad
            K = self.face_area[:, None, None] * np.einsum("fad,fbd->fab", g, g)
            vals = np.conj(ph)[:, :, None] * K * ph[:, None, :]
            rows = np.broadcast_to(col[:, :, None], vals.shape)
            cols = np.broadcast_to(col[:, None, :], vals.shape)
            keep = (rows >= 0) & (cols >= 0)
            nd = len(self.dofs(n))
            A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nd, nd)).tocsr()
            A = 0.5 * (A + A.conj().T)
            self._cache[key] = A.tocsr()
        return self._cache[key]

    def gradient(self, n: int) -> sp.csr_matrix:
        """Face-constant ``d/dx + i d/dy`` of the phased P1 interpolant (faces x unknowns)."""
        key = ("G", n)
        if key not in self._cache:
            col, ph = self._face_columns(n)
            w = ph * (self.face_grad[:, :, 0] + 1j * self.face_grad[:, :, 1])
            rows = np.broadcast_to(np.arange(self.num_faces)[:, None], col.shape)
            keep = col >= 0
            self._cache[key] = sp.coo_matrix((w[keep], (rows[keep], col[keep])),
                                             shape=(self.num_faces, len(self.dofs(n)))).tocsr()
        return self._cache[key]

    def face_average(self, n: int) -> sp.csr_matrix:
        """Mean of the three (phased) corner values on each face."""
        key = ("S", n)
        if key not in self._cache:
            col, ph = self._face_columns(n)
            rows = np.broadcast_to(np.arange(self.num_faces)[:, None], col.shape)
            keep = col >= 0
            self._cache[key] = sp.coo_matrix((ph[keep] / 3.0, (rows[keep], col[keep])),
                                             shape=(self.num_faces, len(self.dofs(n)))).tocsr()
        return self._cache[key]

    def restrict(self, n: int, values: np.ndarray) -> np.ndarray:
        """Vertex array -> unknown vector at mode ``n``."""
        return np.asarray(values)[self.dofs(n)]

    def extend(self, n: int, u: np.ndarray) -> np.ndarray:
        """Unknown vector at mode ``n`` -> vertex array (pinned vertices get 0)."""
        out = np.zeros(self.num_vertices, dtype=complex)
        out[self.dofs(n)] = u
        return out


def _lattice(m: int):
    idx = -np.ones((m + 1, m + 1), dtype=int)
    jk = [(j, k) for j in range(m + 1) for k in range(m + 1 - j)]
    for i, (j, k) in enumerate(jk):
        idx[j, k] = i
    up = [(idx[j, k], idx[j + 1, k], idx[j, k + 1]) for j in range(m) for k in range(m - j)]
    down = [(idx[j + 1, k], idx[j + 1, k + 1], idx[j, k + 1]) for j in range(m - 1) for k in range(m - 1 - j)]
    return np.array(jk, dtype=float), idx, np.array(up + down, dtype=int).reshape(-1, 3)


def _bary_index(idx: np.ndarray, m: int, b: list[int]) -> int:
    # b = (b0, b1, b2) weights on corners 0, 1, 2; jk coordinates are (b1, b2)
    return int(idx[b[1], b[2]])


@lru_cache(maxsize=16)
def build_mesh(surface: TriangulatedFlatSurface, m: int) -> FlatMesh:
    """Refine every triangle of ``surface`` into ``m**2`` pieces and glue the nodes."""
    if m < 1:
        raise ValueError("refinement m must be >= 1")
    jk, idx, local_faces = _lattice(m)
    nloc = len(jk)
    F = surface.num_triangles
    tri = surface.triangles
    node_tri = np.repeat(np.arange(F), nloc)
    node_xy = np.concatenate([tri[t, 0] + np.outer(jk[:, 0] / m, tri[t, 1] - tri[t, 0])
                              + np.outer(jk[:, 1] / m, tri[t, 2] - tri[t, 0]) for t in range(F)])

    parent = list(range(F * nloc))
    rot = [0.0] * (F * nloc)  # rotation node -> parent chart
    mono: dict[int, float] = {}

    def find(a: int) -> tuple[int, float]:
        path = []
        while parent[a] != a:
            path.append(a)
            a = parent[a]
        root, acc = a, 0.0
        for p in reversed(path):
            acc += rot[p]
            rot[p] = acc
            parent[p] = root
        return root, (rot[path[0]] if path else 0.0)

    for (t, e), g in surface.gluings.items():
        if (t, e) > (g.partner_tri, g.partner_edge):
            continue
        t2, e2 = g.partner_tri, g.partner_edge
        for s in range(m + 1):
            b = [0, 0, 0]
            b[(e + 1) % 3], b[(e + 2) % 3] = m - s, s
            b2 = [0, 0, 0]
            b2[(e2 + 1) % 3], b2[(e2 + 2) % 3] = s, m - s
            a = t * nloc + _bary_index(idx, m, b)
            c = t2 * nloc + _bary_index(idx, m, b2)
            ra, wa = find(a)
            rc, wc = find(c)
            w = -wa + g.rotation + wc  # rotation ra -> rc
            if ra == rc:
                mono[ra] = mono.get(ra, 0.0) + _wrap(w)
            else:
                parent[ra] = rc
                rot[ra] = w
                if ra in mono:
                    mono[rc] = mono.pop(ra) + mono.get(rc, 0.0)

    roots, node_rot = [], np.empty(F * nloc)
    root_of = np.empty(F * nloc, dtype=int)
    for a in range(F * nloc):
        r, w = find(a)
        root_of[a] = r
        node_rot[a] = _wrap(w)
    roots = np.unique(root_of)
    vid = -np.ones(F * nloc, dtype=int)
    vid[roots] = np.arange(len(roots))
    node_vertex = vid[root_of]
    monodromy = np.array([_wrap(mono.get(int(r), 0.0)) for r in roots])

    faces = np.concatenate([local_faces + t * nloc for t in range(F)])
    face_tri = np.repeat(np.arange(F), len(local_faces))
    P = node_xy[faces]  # (nf, 3, 2)
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    if np.any(area <= 0):
        raise ValueError("degenerate or clockwise refined triangle")
    # gradients of barycentric coordinates 1 and 2 are the rows of the inverse Jacobian
    g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    grad = np.stack([-(g1 + g2), g1, g2], axis=1)
    assert np.allclose(area.sum(), sum(triangle_area(t) for t in tri))
    return FlatMesh(surface, m, node_tri, node_xy, node_vertex, node_rot, roots, monodromy,
                    faces, face_tri, area, grad)


def coarse_to_fine(coarse: FlatMesh, fine: FlatMesh) -> tuple[np.ndarray, np.ndarray]:
    """Locate the vertices of ``coarse`` in a refinement ``fine`` of the same surface.

    Returns fine vertex ids and the rotation from the coarse home chart to the
    fine home chart, so that ``u_coarse ~ exp(i n rot) * u_fine[ids]``.
    """
    if coarse.surface is not fine.surface or fine.m % coarse.m:
        raise ValueError("fine mesh must refine the coarse one on the same surface")
    q = fine.m // coarse.m
    jk_c, _, _ = _lattice(coarse.m)
    _, idx_f, _ = _lattice(fine.m)
    nloc_c, nloc_f = len(jk_c), (fine.m + 1) * (fine.m + 2) // 2
    home = coarse.vertex_node
    t, loc = home // nloc_c, home % nloc_c
    j, k = (jk_c[loc] * q).astype(int).T
    node_f = t * nloc_f + idx_f[j, k]
    # coarse and fine home nodes share a chart triangle, so the rotations compose
    return fine.node_vertex[node_f], fine.node_rot[node_f] - coarse.node_rot[home]
