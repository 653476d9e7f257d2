import numpy as np
import pytest

from wgscatter import s_derivatives
from wgscatter.errors import AmbiguousKernel, BranchPointSingularity, SingularExtraction, SingularTau
from wgscatter.modes import d_jet
from wgscatter.scattering import null_space, scattering_from_jets

rng = np.random.default_rng(7)


def schur_s(model, lam, J, physical=False):
    """S from eliminating the decaying modes directly; no SVD involved."""
    N = model.nd(lam).matrix
    basis = model.basis
    Ji, K = J.indices, J.complement(basis)
    s = np.sqrt(lam - basis.thresholds[K] + 0j)
    s = np.where(s.imag < 0, -s, s)
    E = np.diag(1 / (1j * s))
    Sig = N[np.ix_(Ji, Ji)] - N[np.ix_(Ji, K)] @ np.linalg.solve(N[np.ix_(K, K)] - E,
                                                                 N[np.ix_(K, Ji)])
    tau = np.linalg.inv(Sig)
    D = np.diag(d_jet(lam, 0, J, basis, physical)[0])
    return np.linalg.solve(D - tau, D + tau)


@pytest.mark.parametrize("lam", [0.4, 1.7, 2.2 + 0.3j, 3.0 - 0.1j])
def test_svd_route_matches_schur_complement(obstacle, lam):
    J = obstacle.sheet(1)
    got = obstacle.s_matrix(lam, 1).S
    assert np.allclose(got, schur_s(obstacle, lam, J), atol=1e-10)


def test_straight_channel_transmits_with_phase(cylinder):
    for lam in (0.3, 1.1, 2.0):
        S = cylinder.s_matrix(lam, 1, physical=True).S
        phase = np.exp(1j * np.sqrt(lam) * 8.0)
        assert np.abs(S - np.array([[0, phase], [phase, 0]])).max() < 2e-3


def test_nonphysical_value_on_the_axis_is_inverse(cylinder):
    lam = 1.3
    Sp = cylinder.s_matrix(lam, 1, physical=True).S
    Sj = cylinder.s_matrix(lam, 1).S
    assert np.allclose(Sj @ Sp, np.eye(2), atol=1e-10)


def test_unitary_and_symmetric_on_the_spectrum(obstacle):
    for lam in (0.5, 1.4, 2.3):
        S = obstacle.s_matrix(lam, 1, physical=True).S
        assert np.abs(S @ S.conj().T - np.eye(2)).max() < 1e-8
        assert np.allclose(S, S.T, atol=1e-10)


def test_two_channel_unitarity(obstacle):
    lam = 3.5   # above the second threshold (pi/2)^2
    sd = obstacle.s_matrix(lam, [1, 2], physical=True)
    assert sd.S.shape == (4, 4)
    # amplitudes are not unitary across thresholds, fluxes are
    assert np.abs(sd.S @ sd.S.conj().T - np.eye(4)).max() > 1e-3
    U = sd.flux_normalized()
    assert np.abs(U @ U.conj().T - np.eye(4)).max() < 1e-8
    assert np.allclose(U, U.T, atol=1e-10)


def test_functional_equation_off_axis(obstacle):
    for _ in range(4):
        lam = complex(rng.uniform(0.2, 2.4), rng.uniform(-0.5, 0.5))
        Sp = obstacle.s_matrix(lam, 1, physical=True).S
        Sj = obstacle.s_matrix(np.conj(lam), 1).S
        assert np.abs(Sp @ Sj.conj().T - np.eye(2)).max() < 1e-9


def test_conjugation_symmetry(obstacle):
    lam = 1.9 + 0.4j
    a = obstacle.s_matrix(lam, 1).S
    b = obstacle.s_matrix(np.conj(lam), 1).S
    assert np.allclose(b, a.conj(), atol=1e-11)


@pytest.mark.parametrize("lam", [1.2, 2.1 + 0.2j])
def test_derivatives_match_finite_differences(obstacle, lam):
    sd = obstacle.s_derivatives(lam, 1, n=2)
    h1, h2 = 1e-5, 1e-4
    S = lambda z: obstacle.s_matrix(z, 1).S
    fd1 = (S(lam + h1) - S(lam - h1)) / (2 * h1)
    fd2 = (S(lam + h2) - 2 * S(lam) + S(lam - h2)) / h2**2
    assert np.abs(sd[1] - fd1).max() <= 1e-5 * np.abs(fd1).max()
    assert np.abs(sd[2] - fd2).max() <= 1e-3 * np.abs(fd2).max()


def test_derivative_jets_are_toeplitz(obstacle):
    sd = obstacle.s_derivatives(1.8 + 0.1j, 1, n=3)
    assert sd.diagnostics["toeplitz_defect"] < 1e-8
    assert sd.diagnostics["gap"] < 1e-6


def test_log_det_derivative(obstacle):
    sd = obstacle.s_derivatives(2.0 + 0.2j, 1, n=1)
    direct = np.trace(np.linalg.solve(sd.S, sd[1]))
    assert sd.log_det_derivative() == pytest.approx(direct, rel=1e-9)


def test_dropping_high_modes_barely_moves_s(obstacle):
    assert obstacle.truncation_check(1.5, 1, drop=3, tol=1e-4) < 1e-4


def test_kernel_dimension_mismatch_is_reported():
    A = rng.standard_normal((6, 6))
    u, s, vh = np.linalg.svd(A)
    s[-2:] = 0
    with pytest.raises(AmbiguousKernel):
        null_space((u * s) @ vh, 1)
    W, sigma, gap = null_space((u * s) @ vh, 2)
    assert W.shape == (6, 2) and gap < 1e-12


def test_singular_extraction_is_refused(obstacle):
    J = obstacle.sheet(1)
    dj = d_jet(1.0, 0, J, obstacle.basis)
    with pytest.raises(SingularExtraction):
        scattering_from_jets(1.0, J, np.array([np.diag(dj[0])]), dj)


def test_threshold_is_a_branch_point(cylinder):
    with pytest.raises(BranchPointSingularity):
        s_derivatives(np.pi**2 / 4, cylinder.sheet(1), cylinder.basis, cylinder.eigenbasis, 1)


def test_log_det_derivative_is_smooth_across_a_pole_of_tau(capped):
    # tau = sqrt(lam) tan(4 sqrt(lam)) blows up at lam = (pi/8)^2; S does not
    pole = (np.pi / 8) ** 2
    sd = capped.s_derivatives(pole, 1, n=1)
    exact = 4j / np.sqrt(pole)
    near = [capped.log_det_derivative(pole + h, 1, physical=True) for h in (-1e-9, 0.0, 1e-9)]
    assert np.allclose(near, exact, rtol=1e-3)
    assert abs(near[0] - near[2]) < 1e-6 * abs(exact)
    assert abs(sd.dirichlet_to_neumann()[0][0, 0]) > 1e3


def test_singular_dirichlet_data_are_reported(capped):
    sd = capped.s_derivatives(0.5, 1, n=1)
    broken = type(sd)(sd.lam, sd.J, sd.modes, sd.S, sd.derivs, tau_jet=None,
                      diagnostics={"cond_tau": np.inf})
    with pytest.raises(SingularTau):
        broken.dirichlet_to_neumann()
