import math

import numpy as np
import pytest

from wgscatter import DomainSpec, TransverseBasis, assemble, build_domain, trace_matrix
from wgscatter import fem
from wgscatter.errors import CacheError, SingularSystem
from wgscatter.ndmap import nd_map


def square_levels(side, count):
    k = np.arange(12)
    lv = np.sort(((np.pi / side) ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)).ravel())
    return lv[:count]


@pytest.fixture(scope="module")
def square():
    mesh = build_domain(DomainSpec.channel(width=2.0, length=2.0, refinement=6))
    return mesh, assemble(mesh, order=2)


@pytest.fixture(scope="module")
def square_basis(square):
    mesh, ops = square
    basis = TransverseBasis.from_widths(mesh.port_widths, 4)
    return basis, fem.solve_neumann_eigenbasis(ops, mesh, basis, 200, lam_tilde=-1.0)


def test_mass_matrix_integrates_area(square):
    mesh, ops = square
    one = np.ones(ops.ndof)
    assert one @ ops.mass @ one == pytest.approx(4.0, rel=1e-12)
    assert np.abs(ops.stiffness @ one).max() < 1e-10


def test_square_spectrum(square_basis):
    _, eb = square_basis
    exact = square_levels(2.0, 12)
    assert eb.eigenvalues[0] == 0.0
    assert np.allclose(eb.eigenvalues[:12], exact, rtol=1e-3, atol=1e-12)


def test_quadratic_elements_converge_at_fourth_order():
    errs = []
    for n in (5, 10):
        mesh = build_domain(DomainSpec.channel(width=2.0, length=2.0, refinement=n))
        ops = assemble(mesh)
        vals, _ = fem.neumann_eigenpairs(ops.stiffness, ops.mass, 8)
        errs.append(np.abs(vals[1:8] - square_levels(2.0, 8)[1:]).max())
    assert errs[0] / errs[1] > 10


def test_p1_elements_converge_too():
    mesh = build_domain(DomainSpec.channel(width=2.0, length=2.0, refinement=10))
    ops = assemble(mesh, order=1)
    vals, _ = fem.neumann_eigenpairs(ops.stiffness, ops.mass, 6)
    assert np.allclose(vals[1:6], square_levels(2.0, 6)[1:], rtol=1e-2)


def test_counting_function_follows_weyl(square_basis):
    # Neumann: N(lam) ~ |X| lam / 4 pi + |dX| sqrt(lam) / 4 pi
    _, eb = square_basis
    lam = 60.0
    exact = np.sum(square_levels(2.0, 144) <= lam)
    assert np.sum(eb.eigenvalues <= lam) == exact
    weyl = 4 * lam / (4 * np.pi) + 8 * np.sqrt(lam) / (4 * np.pi)
    assert exact == pytest.approx(weyl, rel=0.15)


def test_sliced_solver_agrees_with_itself_across_window_sizes():
    mesh = build_domain(DomainSpec.channel(width=2.0, length=2.0, refinement=14))
    ops = assemble(mesh)
    assert ops.ndof > fem.DENSE_LIMIT
    a, va = fem.neumann_eigenpairs(ops.stiffness, ops.mass, 90, slice_size=40)
    b, vb = fem.neumann_eigenpairs(ops.stiffness, ops.mass, 90, slice_size=120)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)
    assert np.allclose(a[:20], square_levels(2.0, 20), rtol=1e-4, atol=1e-10)
    G = va.T @ ops.mass @ va
    assert np.allclose(G, np.eye(90), atol=1e-8)


def test_trace_of_constant_function(square):
    mesh, ops = square
    basis = TransverseBasis.from_widths(mesh.port_widths, 4)
    B = trace_matrix(ops, mesh, basis)
    got = B @ np.ones(ops.ndof)
    want = np.where(basis.index == 0, np.sqrt(2.0), 0.0)
    assert np.allclose(got, want, atol=1e-13)


def coth_block(t, lam, L):
    # a strip of length L: mode with threshold t couples the two ends only
    k = np.sqrt(complex(t - lam))
    return np.array([[1 / np.tanh(k * L), 1 / np.sinh(k * L)],
                     [1 / np.sinh(k * L), 1 / np.tanh(k * L)]]) / k


@pytest.mark.parametrize("lam", [-1.0, -3.5, 0.7 + 0.4j, 1.9])
def test_nd_map_matches_strip_formula(square_basis, lam):
    basis, eb = square_basis
    N = nd_map(eb, lam).matrix
    for m in range(3):
        g = basis.port_modes(1)[m], basis.port_modes(2)[m]
        ref = coth_block(basis.thresholds[g[0]], lam, 2.0)
        assert np.abs(N[np.ix_(g, g)] - ref).max() < 1e-3 * np.abs(ref).max()


def test_accelerated_series_matches_direct_solve(square, square_basis):
    mesh, ops = square
    basis, eb = square_basis
    direct = fem.direct_nd_map(ops, mesh, basis, -3.5)
    plain = nd_map(eb, -3.5, accelerate=False).matrix
    fast = nd_map(eb, -3.5).matrix
    assert np.abs(fast - direct).max() < 1e-2 * np.abs(plain - direct).max()


def test_direct_map_is_the_strip_formula(square, square_basis):
    mesh, ops = square
    basis, eb = square_basis
    assert eb.direct is not None and eb.lam_tilde == -1.0
    g = basis.port_modes(1)[1], basis.port_modes(2)[1]
    ref = coth_block(basis.thresholds[g[0]], -1.0, 2.0)
    assert np.abs(eb.direct[np.ix_(g, g)] - ref).max() < 1e-3 * np.abs(ref).max()
    assert np.allclose(eb.direct, eb.direct.T, atol=1e-14)


def test_helmholtz_solve_refuses_an_eigenvalue(square):
    mesh, ops = square
    basis = TransverseBasis.from_widths(mesh.port_widths, 2)
    vals, _ = fem.neumann_eigenpairs(ops.stiffness, ops.mass, 3)
    with pytest.raises(SingularSystem):
        fem.helmholtz_neumann_solve(ops, mesh, float(vals[1]), np.ones(basis.size), basis)


def test_cache_text_round_trip_is_exact(square_basis, tmp_path):
    _, eb = square_basis
    path = tmp_path / "b.wgbasis"
    fem.save_basis(eb, path)
    back = fem.load_basis(path)
    assert np.array_equal(back.eigenvalues, eb.eigenvalues)
    assert np.array_equal(back.trace_coeffs, eb.trace_coeffs)
    assert np.array_equal(back.direct, eb.direct)
    assert back.meta["fingerprint"] == eb.meta["fingerprint"]


@pytest.mark.parametrize("damage", [
    lambda s: s.replace("wgbasis 1", "wgbasis 7"),
    lambda s: s.replace("traces", "tracez"),
    lambda s: s[: len(s) // 2],
])
def test_damaged_cache_is_a_hard_error_naming_the_file(square_basis, tmp_path, damage):
    _, eb = square_basis
    path = tmp_path / "bad.wgbasis"
    path.write_text(damage(fem.basis_to_text(eb)))
    with pytest.raises(CacheError, match="bad.wgbasis"):
        fem.load_basis(path)


def test_truncation_and_restriction(square_basis):
    basis, eb = square_basis
    small = eb.truncated(50)
    assert small.M == 50 and np.array_equal(small.eigenvalues, eb.eigenvalues[:50])
    with pytest.raises(ValueError):
        eb.truncated(eb.M + 1)
    cols = basis.port_modes(1)
    r = eb.restricted(cols)
    assert r.P_tot == len(cols)
    assert math.isclose(r.direct[0, 0], eb.direct[cols[0], cols[0]])
