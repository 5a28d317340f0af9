import math

import numpy as np
import pytest

from flatspec.harmonic import ThetaFourierField
from flatspec.mesh import build_mesh
from flatspec.spectral import (
    SolvabilityError, apriori_constant, build_mode_operator, cheeger_report,
    lambda_profile, richardson, smallest_eigenvalues, solve_H,
)


def test_torus_spectrum(torus):
    op = build_mode_operator(torus, 0, m=16)
    eig = smallest_eigenvalues(op, 6)
    assert eig.values[0] == pytest.approx(0.0, abs=1e-10)
    # 4 pi^2 has multiplicity four on the unit square torus
    assert eig.values[1:5] == pytest.approx([4 * math.pi ** 2] * 4, rel=0.05)
    assert eig.method == "dense"
    M = op.mass
    G = eig.vectors.conj().T @ (M[:, None] * eig.vectors)
    assert G == pytest.approx(np.eye(6), abs=1e-10)


def test_dense_and_sparse_agree(irrational):
    op = build_mode_operator(irrational, 2, m=12)
    a = smallest_eigenvalues(op, 3, method="dense")
    b = smallest_eigenvalues(op, 3, method="sparse")
    assert a.values == pytest.approx(b.values, rel=1e-9)
    assert b.residuals.max() < 1e-9


def test_eigen_argument_errors(irrational):
    op = build_mode_operator(irrational, 1, m=4)
    with pytest.raises(ValueError):
        smallest_eigenvalues(op, 0)
    with pytest.raises(ValueError):
        smallest_eigenvalues(op, 1, method="qr")


def test_epsilon_shift(irrational):
    op = build_mode_operator(irrational, 3, m=6)
    a = smallest_eigenvalues(op, 2).values
    b = smallest_eigenvalues(op.with_epsilon(0.5), 2).values
    assert b == pytest.approx(a + 0.25 * 9)
    u = np.ones(op.size)
    assert op.with_epsilon(0.5).apply(u) == pytest.approx(op.apply(u) + 2.25 * u)


@pytest.mark.parametrize("n, zero", [(0, True), (1, False), (2, False), (4, True), (-4, True), (6, False)])
def test_right_isosceles_kernels(right_isosceles, n, zero):
    lam = smallest_eigenvalues(build_mode_operator(right_isosceles, n, m=8), 1).values[0]
    assert (abs(lam) < 1e-9) == zero


def test_richardson_exact_for_quadratic_error():
    exact = 3.0
    f = lambda h: exact + 0.7 * h * h
    assert richardson(f(0.2), f(0.1)) == pytest.approx(exact)
    assert richardson(f(0.3), f(0.1), ratio=3.0) == pytest.approx(exact)


def test_lambda_profile_structure(equilateral):
    prof = lambda_profile(equilateral, range(-3, 4), refinements=(4, 8))
    assert prof.refinements == [4, 8]
    assert prof.h[0] == pytest.approx(2 * prof.h[1])
    for n in prof.modes:
        assert len(prof.levels[n]) == 2
        if n % 3 == 0:
            assert abs(prof.bottom[n][-1]) < 1e-9
        else:
            assert prof.bottom[n][-1] > 1.0
    assert prof.levels[0][-1] > 1.0  # least nonzero eigenvalue in the n = 0 row
    assert prof.values[3] == pytest.approx(0.0, abs=1e-9) and not prof.unstable[3]
    assert len(prof.table()) == 14
    assert prof.failures == {}


def test_cheeger_report_equilateral(equilateral):
    prof = lambda_profile(equilateral, range(1, 7), refinements=(4, 8))
    rep = cheeger_report(prof, [1 / 3] * 3, level=-1)
    ratios = {r["n"]: r["ratio"] for r in rep.rows}
    assert ratios[3] == math.inf and ratios[6] == math.inf
    assert rep.flags == []
    assert rep.argmin in (1, 2, 4, 5)
    # wrong angles: a kernel with q_n > 0 is flagged
    rep2 = cheeger_report(prof, [0.3, 0.3, 0.4], level=-1)
    assert any("n=3" in f for f in rep2.flags)


def test_solve_h_torus(torus):
    me = build_mesh(torus, 16)
    x, y = me.vertex_xy.T
    f = ThetaFourierField(me, 1, {0: np.cos(2 * np.pi * x), 1: np.sin(2 * np.pi * y)})
    res = solve_H(f)
    assert res.residual < 1e-9
    assert res.notes == []
    assert res.u.mode(0) == pytest.approx(np.cos(2 * np.pi * x) / (4 * np.pi ** 2), abs=5e-4)


def test_solve_h_nonzero_mean(irrational):
    me = build_mesh(irrational, 4)
    f = ThetaFourierField.single_mode(me, 0, np.ones(me.num_vertices), N=0)
    with pytest.raises(SolvabilityError, match="mean"):
        solve_H(f)


def test_solve_h_kernel_component(equilateral):
    me = build_mesh(equilateral, 6)
    par = np.exp(-3j * me.node_rot[me.vertex_node])  # parallel section at mode 3
    f = ThetaFourierField.single_mode(me, 3, par)
    with pytest.raises(SolvabilityError) as exc:
        solve_H(f)
    assert exc.value.n == 3 and exc.value.k == 1


def test_solve_h_twisted_modes(irrational, rng):
    me = build_mesh(irrational, 8)
    modes = {n: rng.standard_normal(me.num_vertices) + 0j for n in (-2, 1, 3)}
    f = ThetaFourierField(me, 3, modes)
    res = solve_H(f)
    assert res.residual < 1e-9
    for n in (-2, 1, 3):
        op = build_mode_operator(me, n)
        assert op.apply(res.u.dof_vector(n)) == pytest.approx(f.dof_vector(n), abs=1e-8)


def test_apriori_constant(irrational, equilateral):
    prof = lambda_profile(irrational, range(-3, 4), refinements=(6,))
    lv = prof.level_values()
    want = max((1 + n * n) ** -1.0 / lv[n] for n in range(-3, 4))
    assert apriori_constant(prof, 1.0) == pytest.approx(want)
    prof_e = lambda_profile(equilateral, range(0, 4), refinements=(4,))
    assert apriori_constant(prof_e, 1.0) == math.inf
