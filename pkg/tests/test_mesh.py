import math

import numpy as np
import pytest

from flatspec.mesh import build_mesh, coarse_to_fine


@pytest.mark.parametrize("name", ["torus", "equilateral", "irrational"])
@pytest.mark.parametrize("m", [1, 4, 7])
def test_euler_characteristic_and_area(request, name, m):
    s = request.getfixturevalue(name)
    me = build_mesh(s, m)
    F = me.num_faces
    E = 3 * F // 2
    assert me.num_vertices - E + F == 2 - 2 * s.genus
    assert me.vertex_mass.sum() == pytest.approx(s.area, rel=1e-12)
    assert me.face_area.sum() == pytest.approx(s.area, rel=1e-12)
    assert build_mesh(s, m) is me


def test_torus_vertex_count(torus):
    assert build_mesh(torus, 8).num_vertices == 64
    assert build_mesh(torus, 8).h == pytest.approx(math.sqrt(2) / 8)


def test_pinned_vertices(equilateral, irrational):
    me = build_mesh(equilateral, 4)
    assert me.excluded(0).sum() == 0
    assert me.excluded(1).sum() == 3 and me.excluded(2).sum() == 3
    assert me.excluded(3).sum() == 0
    mi = build_mesh(irrational, 4)
    assert all(mi.excluded(n).sum() == 3 for n in (1, 2, 5, -7))
    assert len(mi.dofs(1)) == mi.num_vertices - 3
    idx = mi.dof_index(1)
    assert (idx >= 0).sum() == len(mi.dofs(1))


@pytest.mark.parametrize("n", [0, 1, -2, 3])
def test_stiffness_hermitian_psd(irrational, n):
    me = build_mesh(irrational, 6)
    A = me.stiffness(n)
    assert abs(A - A.conj().T).max() < 1e-14
    w = np.linalg.eigvalsh(A.toarray())
    assert w.min() > -1e-10


def test_constant_kernel_and_phases(equilateral):
    me = build_mesh(equilateral, 6)
    one = np.ones(me.num_vertices)
    assert np.abs(me.stiffness(0) @ one).max() < 1e-12
    # mode 3 is untwisted on the equilateral double: the phased constant is parallel
    u = np.exp(-1j * 3 * me.node_rot[me.vertex_node])
    r = me.stiffness(3) @ me.restrict(3, u)
    assert np.abs(r).max() < 1e-12
    assert np.abs(me.gradient(3) @ me.restrict(3, u)).max() < 1e-12


def test_torus_rayleigh_quotient(torus):
    me = build_mesh(torus, 32)
    x = me.vertex_xy[:, 0]
    u = np.cos(2 * math.pi * x)
    rq = (u @ (me.stiffness(0) @ u)).real / (u @ (me.vertex_mass * u))
    assert rq == pytest.approx(4 * math.pi ** 2, rel=5e-3)


def test_gradient_of_linear_function(torus):
    me = build_mesh(torus, 4)
    # within each face, G (x) = 1 for the chart coordinate x; check on faces away from the wrap
    x = me.node_xy[:, 0]
    g = me.face_grad
    vals = np.einsum("fa,fa->f", g[:, :, 0] + 1j * g[:, :, 1], x[me.faces])
    assert vals == pytest.approx(np.ones(me.num_faces))


def test_face_average_of_constant(irrational):
    me = build_mesh(irrational, 5)
    S = me.face_average(0)
    assert S @ np.ones(me.num_vertices) == pytest.approx(np.ones(me.num_faces))


def test_restrict_extend_roundtrip(irrational, rng):
    me = build_mesh(irrational, 5)
    u = rng.standard_normal(len(me.dofs(1))) + 0j
    assert np.array_equal(me.restrict(1, me.extend(1, u)), u)
    assert np.all(me.extend(1, u)[me.excluded(1)] == 0)


def test_coarse_to_fine_positions(irrational):
    c, f = build_mesh(irrational, 4), build_mesh(irrational, 8)
    ids, rot = coarse_to_fine(c, f)
    assert len(set(ids.tolist())) == c.num_vertices
    # zero-mode mirrored data agree exactly at shared vertices
    def g(t, xy):
        y = np.where(t == 0, xy[:, 1], -xy[:, 1])
        return np.cos(3 * xy[:, 0]) + y ** 2
    assert g(c.vertex_tri, c.vertex_xy) == pytest.approx(g(f.vertex_tri[ids], f.vertex_xy[ids]), abs=1e-12)
    with pytest.raises(ValueError):
        coarse_to_fine(c, build_mesh(irrational, 6))


def test_coarse_to_fine_phases(irrational):
    # the bottom eigenvector at mode 1 transfers between levels through the phase
    from flatspec.spectral import build_mode_operator, smallest_eigenvalues
    c, f = build_mesh(irrational, 8), build_mesh(irrational, 16)
    ids, rot = coarse_to_fine(c, f)
    uc = c.extend(1, smallest_eigenvalues(build_mode_operator(c, 1), 1).vectors[:, 0])
    uf = f.extend(1, smallest_eigenvalues(build_mode_operator(f, 1), 1).vectors[:, 0])
    transported = np.exp(1j * rot) * uf[ids]
    z = np.vdot(transported, uc) / np.vdot(transported, transported)
    rel = np.linalg.norm(uc - z * transported) / np.linalg.norm(uc)
    assert rel < 0.1
