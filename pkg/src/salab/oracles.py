"""Closed-form quantities predicted by the theory.

Poisson equation
    For a chain with kernel ``P``, ``g_hat`` solves
    ``g_hat - P g_hat = g - pi(g)`` normalized by ``pi(g_hat) = 0``.

Disturbance decomposition
    With ``f_hat = fbar + h_hat``, ``h_hat`` the zero-mean Poisson solution
    for the centered field ``f - fbar``, and ``psi = f - f_hat``::

        Delta_{n+1} = f(theta_n, Phi_{n+1}) - fbar(theta_n)
                    = W_{n+1} - T_{n+1} + T_n - alpha * Ups_{n+1}

    where ``W_{n+1} = h_hat(theta_n, Phi_{n+1}) - (P h_hat)(theta_n, Phi_n)``
    is a martingale difference, ``T_n = -psi(theta_n, Phi_n)`` telescopes and
    ``Ups_{n+1} = [psi(theta_{n+1}, Phi_{n+1}) - psi(theta_n, Phi_{n+1})] / alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .chains import check_stochastic, stationary_dist
from .errors import CapabilityError, DomainError, LayoutError, NumericalError, SpectrumError


@dataclass
class PoissonSolution:
    ghat: np.ndarray
    pi: np.ndarray
    forcing_mean: np.ndarray
    residual_inf: float
    mean_under_pi: float


def solve_poisson_finite(P, g) -> PoissonSolution:
    """Zero-mean solution of Poisson's equation on a finite chain.

    Solves the bordered system ``[[I - P, 1], [pi, 0]] [g_hat; c] = [g; 0]``
    in one linear solve; the multiplier ``c`` comes out equal to ``pi(g)``.
    ``g`` may be a vector or an ``(n_states, k)`` array of forcings.
    """
    P = np.array(P, dtype=float)
    check_stochastic(P)
    g = np.array(g, dtype=float)
    vector = g.ndim == 1
    G = g[:, None] if vector else g.reshape(g.shape[0], -1)
    n = P.shape[0]
    if G.shape[0] != n:
        raise LayoutError(f"forcing has {G.shape[0]} rows for a {n}-state chain")
    pi = stationary_dist(P)
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = np.eye(n) - P
    K[:n, n] = 1.0
    K[n, :n] = pi
    rhs = np.vstack([G, np.zeros((1, G.shape[1]))])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular bordered Poisson system") from exc
    ghat, c = sol[:n], sol[n]
    centered = G - pi @ G
    residual = float(np.abs(ghat - P @ ghat - centered).max())
    mean = float(np.abs(pi @ ghat).max())
    if vector:
        ghat = ghat[:, 0]
    else:
        ghat = ghat.reshape(g.shape)
    return PoissonSolution(ghat, pi, c if not vector else c[0], residual, mean)


def ar1_poisson(w, beta: float):
    """Zero-mean Poisson solution ``w / (1 - beta)`` for the forcing ``w`` of a unit AR(1)."""
    if not 0.0 <= beta < 1.0:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    return np.asarray(w) / (1.0 - beta)


def solve_lyapunov(A, Sigma) -> np.ndarray:
    """Solve ``A Z + Z A^T + Sigma = 0`` for Hurwitz ``A``.

    Uses the vectorized form ``(I kron A + A kron I) vec(Z) = -vec(Sigma)``,
    which is fine for the small dimensions (d <= 10) used here.
    """
    A = np.atleast_2d(np.array(A, dtype=float))
    Sigma = np.atleast_2d(np.array(Sigma, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or Sigma.shape != (d, d):
        raise LayoutError("A and Sigma must be square of the same size")
    if np.linalg.eigvals(A).real.max() >= 0:
        raise SpectrumError("A is not Hurwitz")
    I = np.eye(d)
    K = np.kron(I, A) + np.kron(A, I)
    # column-major vec so that vec(A Z + Z A^T) = K vec(Z)
    z = np.linalg.solve(K, -Sigma.reshape(-1, order="F"))
    Z = z.reshape(d, d, order="F")
    return 0.5 * (Z + Z.T)


def lyapunov_residual(A, Z, Sigma) -> float:
    A, Z, Sigma = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, Z, Sigma))
    return float(np.abs(A @ Z + Z @ A.T + Sigma).max())


def sigma_theta_star(G_star, Sigma_noise) -> np.ndarray:
    """Optimal asymptotic covariance ``G* Sigma G*^T`` (symmetrized)."""
    G = np.atleast_2d(np.array(G_star, dtype=float))
    S = np.atleast_2d(np.array(Sigma_noise, dtype=float))
    if G.shape[1] != S.shape[0] or S.shape[0] != S.shape[1]:
        raise LayoutError(f"cannot form G Sigma G^T with G {G.shape} and Sigma {S.shape}")
    out = G @ S @ G.T
    return 0.5 * (out + out.T)


def zeta_theta_star(A_star, upsilon_bar_star) -> np.ndarray:
    """First-order bias direction: the solution of ``A* zeta = Ups*``."""
    A = np.atleast_2d(np.array(A_star, dtype=float))
    u = np.atleast_1d(np.array(upsilon_bar_star, dtype=float))
    if np.linalg.cond(A) > 1e12:
        raise NumericalError("A* is singular to working precision")
    return np.linalg.solve(A, u)


@dataclass
class OracleReport:
    """Closed-form statistics of a model; ``None`` where no closed form exists."""

    model: str
    theta_star: np.ndarray | None = None
    astar: np.ndarray | None = None
    sigma_clt_noise: np.ndarray | None = None
    sigma_theta_star: np.ndarray | None = None
    z_theta_star: np.ndarray | None = None
    upsilon_bar_star: np.ndarray | None = None
    zeta_theta_star: np.ndarray | None = None
    bias_first_order: np.ndarray | None = None
    mean_first_order: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


# ------------------------------------------------------------ decomposition

@dataclass
class DecompositionTrace:
    """Per-step terms of the disturbance decomposition for one stored run.

    Arrays are indexed by step ``n = 0..N-1`` (term with subscript ``n+1``),
    except ``telescope`` which holds ``T_0..T_N``.
    """

    alpha: float
    delta: np.ndarray
    martingale: np.ndarray
    telescope: np.ndarray
    upsilon: np.ndarray
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.abs(self.residual).max())

    @property
    def upsilon_mean(self) -> np.ndarray:
        """Trajectory average of ``Ups``, an estimate of the steady-state target bias term."""
        return self.upsilon.mean(axis=0)

    def summed_residual(self) -> float:
        """Gap in the summed identity ``sum Delta = sum W - T_N + T_0 - alpha sum Ups``."""
        lhs = self.delta.sum(axis=0)
        rhs = (self.martingale.sum(axis=0) - self.telescope[-1] + self.telescope[0]
               - self.alpha * self.upsilon.sum(axis=0))
        return float(np.abs(lhs - rhs).max())


_DECOMP_METHODS = ("f_vec", "fbar_vec", "hhat_vec", "phat_vec")


def decompose_disturbance(model, thetas, states, alpha: float) -> DecompositionTrace:
    """Split the noise of a stored constant-gain run into its four terms.

    ``model`` must expose vectorized ``f_vec``, ``fbar_vec``, ``hhat_vec``
    (zero-mean Poisson solution of ``f - fbar``) and ``phat_vec`` (its
    conditional mean one step ahead).  ``thetas`` and ``states`` hold
    ``theta_0..theta_N`` and ``Phi_0..Phi_N`` as produced by
    ``sa_run(..., record_path=True)``.
    """
    if not all(hasattr(model, m) for m in _DECOMP_METHODS):
        raise CapabilityError(f"{type(model).__name__} has no closed-form Poisson solution")
    thetas = np.asarray(thetas, dtype=float)
    states = np.asarray(states, dtype=float)
    if thetas.shape[0] != states.shape[0] or thetas.shape[0] < 2:
        raise LayoutError("need matching theta and state paths of length N+1 >= 2")
    th_n, th_n1 = thetas[:-1], thetas[1:]
    ph_n, ph_n1 = states[:-1], states[1:]

    def psi(th, ph):
        return (model.f_vec(th, ph) - model.fbar_vec(th)) - model.hhat_vec(th, ph)

    delta = model.f_vec(th_n, ph_n1) - model.fbar_vec(th_n)
    mart = model.hhat_vec(th_n, ph_n1) - model.phat_vec(th_n, ph_n)
    tele = -psi(thetas, states)
    ups = (psi(th_n1, ph_n1) - psi(th_n, ph_n1)) / alpha
    resid = delta - (mart - tele[1:] + tele[:-1] - alpha * ups)
    return DecompositionTrace(alpha, delta, mart, tele, ups, resid)
