import math

import numpy as np
import pytest

from flatspec.cohomology import (
    CROperatorPair, SolveXError, TruncatedXSystem, apriori_report, build_cr_operators,
    invariant_from_meromorphic, norm_identity_check, random_smooth_field, solve_X,
)
from flatspec.harmonic import ThetaFourierField
from flatspec.mesh import build_mesh


def _crandn(rng, k):
    return rng.standard_normal(k) + 1j * rng.standard_normal(k)


def mass_inner(me, n, a, b):
    return np.vdot(b, me.mass(n) * a)


@pytest.mark.parametrize("n", [-3, 0, 1, 2])
def test_mode_shift_shapes(irrational, n):
    pair = build_cr_operators(irrational, [n], m=6)
    me = pair.mesh
    assert pair.dplus(n).shape == (len(me.dofs(n - 1)), len(me.dofs(n)))
    assert pair.dminus(n).shape == (len(me.dofs(n + 1)), len(me.dofs(n)))
    f = ThetaFourierField.single_mode(me, n, np.ones(me.num_vertices), N=abs(n) + 1)
    assert set(pair.apply_dplus(f).support()) <= {n - 1}
    assert set(pair.apply_dminus(f).support()) <= {n + 1}
    assert set(pair.X(f).support()) <= {n - 1, n + 1}


@pytest.mark.parametrize("n", [-2, 0, 1, 4])
def test_adjoint_identity(irrational, rng, n):
    pair = CROperatorPair(build_mesh(irrational, 8))
    me = pair.mesh
    u = _crandn(rng, len(me.dofs(n)))
    v = _crandn(rng, len(me.dofs(n - 1)))
    lhs = mass_inner(me, n - 1, pair.dplus(n) @ u, v)
    rhs = -mass_inner(me, n, u, pair.dminus(n - 1) @ v)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_norm_identity_is_exact(equilateral, rng):
    pair = CROperatorPair(build_mesh(equilateral, 8))
    me = pair.mesh
    for n in (-1, 0, 2):
        x = _crandn(rng, len(me.dofs(n)))
        a = np.sqrt(mass_inner(me, n - 1, pair.dplus(n) @ x, pair.dplus(n) @ x).real)
        b = np.sqrt(mass_inner(me, n + 1, pair.dminus(n) @ x, pair.dminus(n) @ x).real)
        assert a == pytest.approx(b, rel=1e-12)


def test_norm_identity_report(equilateral):
    v = lambda t, x, y, th: np.cos(3 * x) * np.cos(th) + 0 * y
    rep = norm_identity_check(equilateral, v, levels=(4, 8), N=2)
    assert max(rep.deviation) < 1e-12
    assert norm_identity_check(equilateral, None, levels=(4,)).deviation == [0.0]


def test_dplus_is_cauchy_riemann_on_torus(torus):
    me = build_mesh(torus, 32)
    pair = CROperatorPair(me)
    x = me.vertex_xy[:, 0]
    w = np.exp(2j * np.pi * x)
    got = pair.dplus(0) @ w
    assert np.abs(got - 2j * np.pi * w).max() < 0.05 * 2 * np.pi
    got_m = pair.dminus(0) @ w
    assert np.abs(got_m - 2j * np.pi * w).max() < 0.05 * 2 * np.pi


def test_constants_in_kernel(irrational):
    pair = CROperatorPair(build_mesh(irrational, 6))
    one = ThetaFourierField.single_mode(pair.mesh, 0, np.ones(pair.mesh.num_vertices), N=2)
    assert pair.X(one).norm() < 1e-12
    assert pair.Y(one).norm() < 1e-12


def test_laplacian_form_is_hermitian_psd(irrational):
    pair = CROperatorPair(build_mesh(irrational, 6))
    L = pair.laplacian_form(1).toarray()
    assert np.abs(L - L.conj().T).max() < 1e-10
    assert np.linalg.eigvalsh(L).min() > -1e-10


@pytest.mark.parametrize("closure, n_out, n_in", [("closed", 2, 1), ("square", 1, 1), ("open", 1, 2)])
def test_system_shapes(torus, closure, n_out, n_in):
    pair = CROperatorPair(build_mesh(torus, 4))
    sysm = TruncatedXSystem(pair, 1, closure)
    V = pair.mesh.num_vertices
    assert sysm.out_modes == list(range(-n_out, n_out + 1))
    assert sysm.in_modes == list(range(-n_in, n_in + 1))
    assert sysm.shape == ((2 * n_out + 1) * V, (2 * n_in + 1) * V)
    with pytest.raises(ValueError):
        TruncatedXSystem(pair, 1, "periodic")


def _kernel_free(u):
    # the min-norm solution on the torus is orthogonal to the constant section in each mode
    w = u.mesh.vertex_mass
    return u.map_modes(lambda n, x: x - np.sum(w * x) / np.sum(w))


def test_solve_x_manufactured_torus():
    from flatspec.surface import flat_torus
    pair = CROperatorPair(build_mesh(flat_torus(), 6))
    rng = np.random.default_rng(0)
    u = _kernel_free(random_smooth_field(pair, 2, rng))
    f = pair.X(u).truncated(5)
    res = solve_X(f, pair=pair)
    assert res.residual < 1e-10
    assert (res.u.truncated(5) - u.truncated(5)).norm() < 1e-10 * u.norm()


def test_solve_x_validation(torus):
    me = build_mesh(torus, 4)
    one = ThetaFourierField.single_mode(me, 0, np.ones(me.num_vertices), N=4)
    with pytest.raises(ValueError, match="mean"):
        solve_X(one)
    f = ThetaFourierField.single_mode(me, 3, np.cos(2 * np.pi * me.vertex_xy[:, 0]), N=4)
    with pytest.raises(ValueError, match="exceed"):
        solve_X(f)


def test_solve_x_obstructed(torus):
    me = build_mesh(torus, 4)
    f = ThetaFourierField.single_mode(me, 1, np.ones(me.num_vertices), N=4)
    with pytest.raises(SolveXError) as exc:
        solve_X(f)
    assert exc.value.result.residual > 0.5
    soft = solve_X(f, raise_on_residual=False)
    assert soft.notes


def test_lsqr_matches_dense(torus):
    pair = CROperatorPair(build_mesh(torus, 4))
    u = _kernel_free(random_smooth_field(pair, 1, np.random.default_rng(3)))
    f = pair.X(u).truncated(4)
    sysm = TruncatedXSystem(pair, 4)
    a = sysm.solve_min_norm(f, "dense")
    b = sysm.solve_min_norm(f, "lsqr")
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)


def test_apriori_report_irrational(irrational):
    rep = apriori_report(irrational, 6, (1, 2.0), (0, 0.0), seed=1, m=4, contents=(1, 2))
    assert len(rep.ratios) == 6
    assert np.all(np.isfinite(rep.ratios)) and rep.max_ratio > 0
    assert set(rep.by_content) == {1, 2}
    assert rep.gamma == pytest.approx(0.5, abs=0.2)
    assert not rep.gap_condition and rep.notes
    counts, _ = rep.histogram(3)
    assert counts.sum() == 6


def test_apriori_kernel_detected(torus):
    me = build_mesh(torus, 4)
    k = ThetaFourierField.single_mode(me, 1, np.ones(me.num_vertices), N=1)
    rep = apriori_report(torus, 1, (0, 0), (0, 0), fields=[k], gamma=1.0, m=4)
    assert rep.ratios[0] == math.inf and rep.growth_flag


def test_invariant_trivial_and_invalid(irrational):
    me = build_mesh(irrational, 4)
    zero = ThetaFourierField.zeros(me, 2)
    res = invariant_from_meromorphic(zero)
    assert res.D.norm() == 0 and res.defect == 0
    bumpy = ThetaFourierField.single_mode(me, 1, np.arange(me.num_vertices, dtype=float), N=1)
    with pytest.raises(ValueError, match="meromorphic"):
        invariant_from_meromorphic(bumpy)
    with pytest.raises(ValueError):
        invariant_from_meromorphic(zero, sign="*")


def test_invariant_torus_constant_section_is_obstructed(torus):
    me = build_mesh(torus, 4)
    m = ThetaFourierField.single_mode(me, 2, np.ones(me.num_vertices), N=2)
    with pytest.raises(SolveXError):
        invariant_from_meromorphic(m)
