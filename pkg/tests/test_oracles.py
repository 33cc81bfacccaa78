import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import expm

from salab.engine import Constant, sa_run
from salab.errors import CapabilityError, LayoutError, NumericalError, SpectrumError, StructureError
from salab.models import FiniteLinearModel, ScalarLinearModel, SgdModel, TdModel
from salab.oracles import (ar1_poisson, decompose_disturbance, lyapunov_residual, sigma_theta_star,
                           solve_lyapunov, solve_poisson_finite, zeta_theta_star)
from salab.rng import make_rng

from conftest import neumann_oracle, random_chain, random_hurwitz, random_psd


def test_poisson_constant_forcing():
    sol = solve_poisson_finite(random_chain(np.random.default_rng(0), 4), np.full(4, 3.0))
    np.testing.assert_allclose(sol.ghat, 0.0, atol=1e-14)


def test_poisson_flip_chain():
    sol = solve_poisson_finite([[0, 1], [1, 0]], [1.0, -1.0])
    np.testing.assert_allclose(sol.ghat, [0.5, -0.5], atol=1e-14)
    assert sol.forcing_mean == pytest.approx(0.0, abs=1e-14)


def test_poisson_neumann_six_states(rng):
    P = random_chain(rng, 6)
    g = rng.standard_normal(6)
    sol = solve_poisson_finite(P, g)
    np.testing.assert_allclose(sol.ghat, neumann_oracle(P, g), atol=1e-6)
    assert sol.residual_inf <= 1e-10
    assert sol.mean_under_pi <= 1e-10


def test_poisson_matrix_forcing(rng):
    P = random_chain(rng, 4)
    G = rng.standard_normal((4, 3))
    sol = solve_poisson_finite(P, G)
    for k in range(3):
        np.testing.assert_allclose(sol.ghat[:, k], solve_poisson_finite(P, G[:, k]).ghat, atol=1e-12)


def test_poisson_errors():
    with pytest.raises(StructureError):
        solve_poisson_finite([[1.0, 0.0], [0.0, 1.0]], [1.0, 2.0])
    with pytest.raises(LayoutError):
        solve_poisson_finite([[0.5, 0.5], [0.5, 0.5]], [1.0, 2.0, 3.0])


def test_ar1_poisson():
    assert ar1_poisson(1.0, 0.9) == pytest.approx(10.0)
    assert ar1_poisson(2.5, 0.0) == 2.5
    rng = np.random.default_rng(4)
    beta = 0.9
    w = rng.standard_normal(100)
    lhs = beta * w / (1 - beta) - ar1_poisson(w, beta)
    np.testing.assert_allclose(lhs, -w, atol=1e-13)


def test_lyapunov_examples():
    np.testing.assert_allclose(solve_lyapunov(-np.eye(3), 2 * np.eye(3)), np.eye(3), atol=1e-14)
    assert solve_lyapunov([[-1.0]], [[2299.0]])[0, 0] == pytest.approx(1149.5)


def test_lyapunov_integral_oracle(rng):
    A = random_hurwitz(rng, 3)
    S = random_psd(rng, 3)
    Z = solve_lyapunov(A, S)
    assert lyapunov_residual(A, Z, S) <= 1e-10
    decay = -np.linalg.eigvals(A).real.max()
    T = 40.0 / decay
    ts = np.linspace(0.0, T, 200_001)
    step = expm(A * (ts[1] - ts[0]))
    E = np.eye(3)
    vals = np.empty((ts.shape[0], 3, 3))
    for i in range(ts.shape[0]):
        vals[i] = E @ S @ E.T
        E = step @ E
    oracle = trapezoid(vals, ts, axis=0)
    np.testing.assert_allclose(Z, oracle, atol=1e-6 * max(1.0, np.abs(Z).max()))


def test_lyapunov_properties(rng):
    for d in (1, 2, 5, 10):
        A, S = random_hurwitz(rng, d), random_psd(rng, d)
        Z = solve_lyapunov(A, S)
        assert np.abs(Z - Z.T).max() <= 1e-12
        assert np.linalg.eigvalsh(Z).min() >= -1e-10


def test_lyapunov_rejects_unstable():
    with pytest.raises(SpectrumError):
        solve_lyapunov([[0.1]], [[1.0]])
    with pytest.raises(LayoutError):
        solve_lyapunov(-np.eye(2), np.eye(3))


def test_sigma_theta_star():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(sigma_theta_star(np.eye(2), S), S)
    assert sigma_theta_star([[1.0]], [[2299.0]])[0, 0] == 2299.0
    np.testing.assert_allclose(sigma_theta_star(np.diag([2.0, 3.0]), np.eye(2)), np.diag([4.0, 9.0]))
    with pytest.raises(LayoutError):
        sigma_theta_star(np.eye(2), np.eye(3))


def test_zeta_theta_star():
    assert zeta_theta_star([[-1.0]], [-99.0])[0] == pytest.approx(99.0)
    np.testing.assert_array_equal(zeta_theta_star(-np.eye(2), [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(zeta_theta_star(-np.diag([1.0, 2.0]), [1.0, 1.0]), [-1.0, -0.5])
    with pytest.raises(NumericalError):
        zeta_theta_star(np.zeros((2, 2)), [1.0, 1.0])


# ------------------------------------------------------------ decomposition

def _scalar_trace(alpha=2.8e-3, N=10_000, seed=0):
    m = ScalarLinearModel()
    rec = sa_run(m.problem(), m.chain(), Constant(alpha), [0.0], N, rng=make_rng(seed, 0),
                 record_path=True)
    return m, rec, decompose_disturbance(m, rec.thetas, rec.states, alpha)


def test_decomposition_identity_scalar():
    _, _, tr = _scalar_trace()
    assert tr.max_residual <= 1e-9
    assert tr.summed_residual() <= 1e-7


def test_decomposition_upsilon_closed_form():
    m, rec, tr = _scalar_trace(N=2000)
    w = rec.states[1:, 0]
    f = m.f_vec(rec.thetas[:-1], rec.states[1:])[:, 0]
    np.testing.assert_allclose(tr.upsilon[:, 0], -m.beta / (1 - m.beta) * w * f, rtol=1e-6, atol=1e-6)


def test_decomposition_martingale_uncorrelated():
    _, _, tr = _scalar_trace(N=1_000_000, seed=3)
    W = tr.martingale[:, 0]
    r1 = np.corrcoef(W[1:], W[:-1])[0, 1]
    assert abs(r1) <= 3 / np.sqrt(W.shape[0])


def test_decomposition_additive_noise_has_no_upsilon():
    for exploration in ("iid", "zigzag"):
        m = SgdModel("styblinski", exploration)
        rec = sa_run(m.problem(), m.chain(), Constant(0.1), [0.0, 0.0], 3000, rng=make_rng(2, 0),
                     record_path=True)
        tr = decompose_disturbance(m, rec.thetas, rec.states, 0.1)
        assert np.abs(tr.upsilon).max() <= 1e-12
        assert tr.max_residual <= 1e-9


def test_decomposition_finite_chain(rng):
    P = random_chain(rng, 4)
    A = np.stack([-np.eye(2) * (1 + k) + 0.3 * rng.standard_normal((2, 2)) for k in range(4)])
    b = rng.standard_normal((4, 2))
    m = FiniteLinearModel(P, A, b)
    rec = sa_run(m.problem(), m.chain(), Constant(0.05), [0.0, 0.0], 5000, rng=make_rng(9, 0),
                 record_path=True)
    tr = decompose_disturbance(m, rec.thetas, rec.states, 0.05)
    assert tr.max_residual <= 1e-9
    assert tr.summed_residual() <= 1e-7


def test_decomposition_unsupported():
    m = TdModel()
    with pytest.raises(CapabilityError):
        decompose_disturbance(m, np.zeros((3, 2)), np.zeros((3, 4)), 0.1)
    with pytest.raises(LayoutError):
        decompose_disturbance(ScalarLinearModel(), np.zeros((3, 1)), np.zeros((4, 1)), 0.1)
