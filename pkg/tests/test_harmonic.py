import json
import math

import numpy as np
import pytest

from flatspec.cohomology import CROperatorPair, random_smooth_field
from flatspec.harmonic import (
    SobolevIndex, ThetaFourierField, fiber_norm, load_field, mode_equivalence_check, project,
    project_pi_n, save_field, sobolev_norm,
)
from flatspec.mesh import build_mesh


def trig(t, x, y, th):
    return np.cos(2 * np.pi * x) * (1 + 2 * np.cos(th) + 0.5j * np.sin(3 * th))


def test_project_trig_polynomial_exactly(torus):
    me = build_mesh(torus, 8)
    f = project(me, trig, N=4)
    c = np.cos(2 * np.pi * me.vertex_xy[:, 0])
    assert f.mode(0) == pytest.approx(c)
    assert f.mode(1) == pytest.approx(c) and f.mode(-1) == pytest.approx(c)
    assert f.mode(3) == pytest.approx(c / 4) and f.mode(-3) == pytest.approx(-c / 4)
    assert np.allclose(f.mode(2), 0) and np.allclose(f.mode(9), 0)
    assert project_pi_n(me, trig, 3, Q=16) == pytest.approx(f.mode(3))
    assert f.support() == [-3, -1, 0, 1, 3]


def test_projection_quadrature_checks(torus):
    me = build_mesh(torus, 2)
    with pytest.raises(ValueError):
        project(me, trig, N=4, Q=8)
    with pytest.raises(ValueError):
        project_pi_n(me, trig, 5, Q=10)


def test_constant_norm_and_mean(irrational):
    me = build_mesh(irrational, 6)
    one = ThetaFourierField.single_mode(me, 0, np.ones(me.num_vertices), N=2)
    assert one.norm() == pytest.approx(math.sqrt(2 * math.pi * irrational.area))
    assert one.mean() == pytest.approx(1.0)
    assert one.inner(one) == pytest.approx(one.norm() ** 2)
    assert one.is_real()


def test_pinned_values_are_zeroed(equilateral):
    me = build_mesh(equilateral, 4)
    f = ThetaFourierField.single_mode(me, 1, np.ones(me.num_vertices))
    assert np.count_nonzero(f.mode(1)) == me.num_vertices - 3
    with pytest.raises(ValueError):
        ThetaFourierField(me, 1, {1: np.ones(3)})
    with pytest.raises(ValueError):
        ThetaFourierField(me, 1, {2: np.ones(me.num_vertices)})


def test_algebra(torus, rng):
    me = build_mesh(torus, 4)
    a = project(me, trig, N=3)
    b = ThetaFourierField.single_mode(me, 5, rng.standard_normal(me.num_vertices))
    c = a + b
    assert c.N == 5
    assert (c - b).mode(1) == pytest.approx(a.mode(1))
    assert (2 * a).norm() == pytest.approx(2 * a.norm())
    assert a.theta().mode(3) == pytest.approx(3j * a.mode(3))
    assert a.theta(2).mode(-3) == pytest.approx(-9 * a.mode(-3))
    assert a.truncated(1).support() == [-1, 0, 1]
    v = np.array([0, 1, 2])
    th = np.array([0.0, 0.5, 1.0])
    want = trig(me.vertex_tri[v], me.vertex_xy[v, 0], me.vertex_xy[v, 1], th)
    assert a.evaluate(v, th) == pytest.approx(want)
    other = build_mesh(torus, 5)
    with pytest.raises(ValueError):
        a + ThetaFourierField.zeros(other, 1)


def test_fiber_and_sobolev_norms(torus):
    me = build_mesh(torus, 8)
    f = project(me, trig, N=4)
    nm = f.mode_norms()
    assert fiber_norm(f, 0) == pytest.approx(f.norm())
    assert fiber_norm(f, 1.5) == pytest.approx(math.sqrt(sum((1 + n * n) ** 1.5 * v ** 2 for n, v in nm.items())))
    assert sobolev_norm(f, (0, 0)) == pytest.approx(f.norm())
    assert sobolev_norm(f, (0, 1)) == pytest.approx(math.sqrt(f.norm() ** 2 + f.theta().norm() ** 2))
    with pytest.raises(ValueError):
        sobolev_norm(f, (3, 0))
    with pytest.raises(ValueError):
        sobolev_norm(f, (0, 0.5))
    with pytest.raises(ValueError):
        SobolevIndex(-1, 0)


def test_horizontal_norm_matches_gradient(torus):
    # for a mode-0 function, |Xf|^2 + |Yf|^2 integrates |grad f|^2 over the fibre
    errs = []
    for m in (16, 32):
        me = build_mesh(torus, m)
        f = ThetaFourierField.single_mode(me, 0, np.cos(2 * np.pi * me.vertex_xy[:, 0]), N=0)
        s1 = sobolev_norm(f, (1, 0), CROperatorPair(me)) ** 2
        errs.append(abs(s1 / (f.norm() ** 2 * (1 + 4 * np.pi ** 2)) - 1))
    assert errs[1] < 0.02
    assert errs[1] < errs[0] / 3


@pytest.mark.parametrize("index", [(0, 2), (1, 1), (2, 1)])
def test_mode_equivalence(irrational, index):
    me = build_mesh(irrational, 6)
    ops = CROperatorPair(me)
    f = random_smooth_field(ops, 3, np.random.default_rng(4))
    rep = mode_equivalence_check(f, index, ops)
    assert rep.within, rep


def test_save_load_roundtrip(tmp_path, irrational, rng):
    me = build_mesh(irrational, 4)
    f = ThetaFourierField(me, 2, {n: rng.standard_normal(me.num_vertices) + 1j * rng.standard_normal(me.num_vertices)
                                  for n in range(-2, 3)})
    path = save_field(f, tmp_path / "f")
    meta = json.loads(path.read_text())
    assert meta["surface_hash"] == irrational.content_hash()
    assert set(meta["modes"]) == {"-2", "-1", "0", "1", "2"}
    g = load_field(path)
    for n in range(-2, 3):
        assert np.array_equal(g.mode(n), f.mode(n))
    assert load_field(tmp_path / "f", irrational).mesh is me
    meta["surface_hash"] = "0" * 16
    path.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="hash"):
        load_field(path)
