"""Concrete SA problems.

* :class:`ScalarLinearModel` -- ``f(theta, w) = (w - 1) theta - b + w`` driven
  by a unit-variance AR(1).
* :class:`TdModel` -- TD(lambda) with basis ``psi(x) = (x**2, 1)`` on the
  chain ``x' = F x + sigma_w W``, cost ``c(x) = x**2``.
* :class:`SgdModel` -- gradient descent ``fbar = -G(theta) grad Obj(theta)``
  plus i.i.d. or zig-zag exploration, on the six-hump camel-back or the
  modified Styblinski-Tang objective.
* :class:`FiniteLinearModel` -- linear SA driven by a finite chain, with
  exact Poisson solutions.

Field expressions are written with the same operand order as the kernels
in :mod:`salab.kernels` so that kernel and pure-Python runs agree bitwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .chains import SQRT2, Ar1, Finite, IidGaussian, NoiseChain, TdState, ZigZag, ar1_clt_variance
from .engine import SAProblem
from .errors import CapabilityError, DomainError
from .kernels import KernelSpec
from .oracles import (OracleReport, ar1_poisson, sigma_theta_star, solve_lyapunov,
                      solve_poisson_finite, zeta_theta_star)

# -------------------------------------------------------------- objectives


def camel_objective(theta) -> np.ndarray:
    """Six-hump camel-back ``(4 - 2.1x^2 + x^4/3)x^2 + xy + (-4 + 4y^2)y^2``."""
    theta = np.asarray(theta, dtype=float)
    x, y = theta[..., 0], theta[..., 1]
    x2 = x * x
    y2 = y * y
    return (4.0 - 2.1 * x2 + x2 * x2 / 3.0) * x2 + x * y + (-4.0 + 4.0 * y2) * y2


def camel_gain(theta) -> np.ndarray:
    """Diagonal of ``G(theta) = diag(1/(1 + x^4), 1/(1 + y^2))``."""
    x, y = float(theta[0]), float(theta[1])
    return np.array([1.0 / (1.0 + x * x * x * x), 1.0 / (1.0 + y * y)])


def camel_field(theta) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the camel-back objective and the mean field ``-G grad``."""
    theta = np.asarray(theta, dtype=float)
    x, y = theta[..., 0], theta[..., 1]
    x2 = x * x
    y2 = y * y
    gx = ((8.0 * x - 8.4 * x2 * x) + 2.0 * x2 * x2 * x) + y
    gy = (x - 8.0 * y) + 16.0 * y2 * y
    grad = np.stack([gx, gy], axis=-1)
    fbar = np.stack([-gx / (1.0 + x2 * x2), -gy / (1.0 + y2)], axis=-1)
    return grad, fbar


def camel_jacobian(theta) -> np.ndarray:
    x, y = float(theta[0]), float(theta[1])
    gx = 8 * x - 8.4 * x**3 + 2 * x**5 + y
    gy = x - 8 * y + 16 * y**3
    gxx = 8 - 25.2 * x**2 + 10 * x**4
    gyy = -8 + 48 * y**2
    qx, qy = 1 + x**4, 1 + y**2
    return -np.array([
        [(gxx * qx - gx * 4 * x**3) / qx**2, 1.0 / qx],
        [1.0 / qy, (gyy * qy - gy * 2 * y) / qy**2],
    ])


def styblinski_objective(theta, xi: float = 50.0):
    """``0.5 * (t1^4 + t2^4 + xi (t1 + t2) - 16 |t|^2)``."""
    t = np.asarray(theta, dtype=float)
    return 0.5 * np.sum(t**4 + xi * t - 16.0 * t**2, axis=-1)


def styblinski_root(xi: float = 50.0) -> float:
    """Most negative real root of ``4 t^3 - 32 t + xi = 0``."""
    roots = np.roots([4.0, 0.0, -32.0, xi])
    t = float(min(r.real for r in roots if abs(r.imag) < 1e-9 * max(1.0, abs(r))))
    for _ in range(3):
        t -= (4 * t**3 - 32 * t + xi) / (12 * t**2 - 32)
    return t


def styblinski_field(theta, xi: float = 50.0) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradient, mean field ``-G grad`` and the coordinate of the global minimizer.

    ``G(theta) = diag(1/(1 + t_i^2))`` keeps the mean field linear at infinity.
    """
    t = np.asarray(theta, dtype=float)
    grad = 0.5 * (4.0 * t * t * t + xi - 32.0 * t)
    fbar = -grad / (1.0 + t * t)
    return grad, fbar, styblinski_root(xi)


def styblinski_jacobian(theta, xi: float = 50.0) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    g = 0.5 * (4 * t**3 + xi - 32 * t)
    dg = 0.5 * (12 * t**2 - 32)
    q = 1 + t**2
    return np.diag(-(dg * q - g * 2 * t) / q**2)


def styblinski_curvature(xi: float = 50.0) -> float:
    """``sigma_A^2 = (6 t*^2 - 16) / (1 + t*^2)``, so that ``A* = -sigma_A^2 I``."""
    t = styblinski_root(xi)
    return (6 * t * t - 16) / (1 + t * t)


# ------------------------------------------------------------ scalar linear

@dataclass(frozen=True)
class ScalarLinearModel:
    """``theta' = theta + alpha [(-1 + W) theta - b + W]`` with AR(1) noise ``W``."""

    beta: float = 0.9
    b: float = -10.0
    name = "scalar-linear"

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise DomainError(f"beta must lie in [0, 1), got {self.beta}")

    @property
    def theta_star(self) -> np.ndarray:
        return np.array([-self.b])

    def chain(self) -> Ar1:
        return Ar1(self.beta)

    def f(self, theta, state):
        w = state[0]
        return np.array([((w - 1.0) * theta[0] - self.b) + w])

    def fbar(self, theta):
        return np.array([-theta[0] - self.b])

    def jacobian_f(self, theta, state):
        return np.array([[state[0] - 1.0]])

    def kernel_for(self, chain: NoiseChain):
        if isinstance(chain, Ar1) and chain.beta == self.beta:
            return KernelSpec(kernels.SCALAR_LINEAR, 0,
                              (self.beta, chain.innovation_scale, self.b), 1, 1, 1)
        return None

    def problem(self) -> SAProblem:
        return SAProblem(1, self.f, self.fbar, self.jacobian_f, self.theta_star,
                         np.array([[-1.0]]), self.kernel_for, self.name)

    # vectorized pieces for the disturbance decomposition
    def f_vec(self, thetas, states):
        w = states[:, :1]
        return ((w - 1.0) * thetas - self.b) + w

    def fbar_vec(self, thetas):
        return -thetas - self.b

    def hhat_vec(self, thetas, states):
        return (thetas + 1.0) * ar1_poisson(states[:, :1], self.beta)

    def phat_vec(self, thetas, states):
        return (thetas + 1.0) * (self.beta * states[:, :1] / (1.0 - self.beta))

    def oracles(self, alpha: float | None = None) -> OracleReport:
        return scalar_linear_oracles(self.beta, self.b, alpha)


def scalar_linear_oracles(beta: float, b: float, alpha: float | None = None) -> OracleReport:
    """Closed-form statistics of the scalar linear model.

    ``Sigma_CLT^W = (1+beta)/(1-beta)``, ``Sigma*_theta = (1+theta*)^2 Sigma_CLT^W``,
    ``Z*_theta`` solves the scalar Lyapunov equation with ``A* = -1``, and the
    first-order bias is ``alpha * beta/(1-beta) * (1+theta*)``.
    """
    clt = ar1_clt_variance(beta)
    ts = -b
    astar = np.array([[-1.0]])
    sigma_delta = np.array([[(1.0 + ts) ** 2 * clt]])
    ups = np.array([-beta / (1.0 - beta) * (1.0 + ts)])
    zeta = zeta_theta_star(astar, ups)
    report = OracleReport(
        model="scalar-linear",
        theta_star=np.array([ts]),
        astar=astar,
        sigma_clt_noise=np.array([[clt]]),
        sigma_theta_star=sigma_theta_star(np.array([[1.0]]), sigma_delta),
        z_theta_star=solve_lyapunov(astar, sigma_delta),
        upsilon_bar_star=ups,
        zeta_theta_star=zeta,
    )
    if alpha is not None:
        report.bias_first_order = alpha * zeta
        report.mean_first_order = ts + alpha * zeta
        report.extra["alpha"] = alpha
    return report


# ----------------------------------------------------------------------- TD

def td_true_theta(gamma: float, F: float, sigma_w: float) -> np.ndarray:
    """Value-function coefficients ``(coef of x^2, constant)`` for ``c(x) = x^2``."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"discount must lie in (0, 1), got {gamma}")
    if not abs(F) < 1.0:
        raise DomainError(f"|F| must be < 1, got {F}")
    q = 1.0 / (1.0 - gamma * F * F)
    s2 = sigma_w * sigma_w / (1.0 - F * F)
    return np.array([q, s2 * (1.0 / (1.0 - gamma) - q)])


def td_mean_field(gamma: float, lam: float, F: float, sigma_w: float) -> tuple[np.ndarray, np.ndarray]:
    """``(A, b)`` with ``fbar(theta) = A theta + b`` under the stationary law.

    Uses ``E[X_j^2 X_k^2] = s^4 (1 + 2 F^{2|j-k|})`` for the stationary
    Gaussian chain with variance ``s^2`` and sums the trace geometrically.
    """
    s2 = sigma_w * sigma_w / (1.0 - F * F)
    mu = lam * gamma
    c0 = 1.0 / (1.0 - mu)
    e_now = s2 * s2 * (c0 + 2.0 / (1.0 - mu * F * F))
    e_next = s2 * s2 * (c0 + 2.0 * F * F / (1.0 - mu * F * F))
    e_z = s2 * c0
    A = np.array([
        [gamma * e_next - e_now, (gamma - 1.0) * e_z],
        [c0 * (gamma - 1.0) * s2, c0 * (gamma - 1.0)],
    ])
    return A, np.array([e_now, c0 * s2])


def td_field(theta, td_state, gamma: float) -> np.ndarray:
    """TD update ``D * z`` for the state ``(x_prev, x, z_1, z_2)``.

    ``D = -theta . psi(x_prev) + c(x_prev) + gamma theta . psi(x)``.
    """
    t0, t1 = float(theta[0]), float(theta[1])
    x0, x1, z1, z2 = (float(v) for v in td_state)
    p0 = x0 * x0
    p1 = x1 * x1
    D = (-(t0 * p0 + t1) + p0) + gamma * (t0 * p1 + t1)
    return np.array([D * z1, D * z2])


@dataclass(frozen=True)
class TdModel:
    gamma: float = 0.7
    lam: float = 0.0
    F: float = 0.5
    sigma_w: float = 1.0
    name = "td"

    def __post_init__(self):
        TdState(self.F, self.sigma_w, self.gamma, self.lam)

    @property
    def theta_star(self) -> np.ndarray:
        return td_true_theta(self.gamma, self.F, self.sigma_w)

    def chain(self) -> TdState:
        return TdState(self.F, self.sigma_w, self.gamma, self.lam)

    def mean_field(self):
        return td_mean_field(self.gamma, self.lam, self.F, self.sigma_w)

    def f(self, theta, state):
        return td_field(theta, state, self.gamma)

    def fbar(self, theta):
        A, b = self.mean_field()
        t0, t1 = float(theta[0]), float(theta[1])
        return np.array([(A[0, 0] * t0 + A[0, 1] * t1) + b[0],
                         (A[1, 0] * t0 + A[1, 1] * t1) + b[1]])

    def jacobian_f(self, theta, state):
        x0, x1 = state[0], state[1]
        dD = np.array([-x0 * x0 + self.gamma * x1 * x1, -1.0 + self.gamma])
        return np.outer(state[2:], dD)

    def kernel_for(self, chain):
        if isinstance(chain, TdState) and chain == self.chain():
            A, b = self.mean_field()
            params = (self.F, self.sigma_w, self.gamma, self.lam * self.gamma,
                      A[0, 0], A[0, 1], A[1, 0], A[1, 1], b[0], b[1])
            return KernelSpec(kernels.TD, 0, params, 2, 4, 1)
        return None

    def problem(self) -> SAProblem:
        A, _ = self.mean_field()
        return SAProblem(2, self.f, self.fbar, self.jacobian_f, self.theta_star, A,
                         self.kernel_for, self.name)

    def oracles(self, alpha=None) -> OracleReport:
        A, b = self.mean_field()
        return OracleReport(model="td", theta_star=self.theta_star, astar=A,
                            extra={"mean_field_b": b.tolist()})


# ---------------------------------------------------------------------- SGD

@dataclass(frozen=True)
class SgdModel:
    """Gradient descent with additive exploration ``f = -G grad Obj + Xi``."""

    objective: str = "styblinski"
    exploration: str = "iid"
    sigma_w: float = 1.0
    xi: float = 50.0
    name = "sgd"
    additive = True

    def __post_init__(self):
        if self.objective not in ("styblinski", "camel"):
            raise DomainError(f"unknown objective {self.objective!r}")
        if self.exploration not in ("iid", "zigzag"):
            raise DomainError(f"unknown exploration {self.exploration!r}")

    @property
    def theta_star(self) -> np.ndarray | None:
        if self.objective == "styblinski":
            return np.full(2, styblinski_root(self.xi))
        return None  # two global minimizers

    def chain(self) -> NoiseChain:
        cls = IidGaussian if self.exploration == "iid" else ZigZag
        return cls(2, self.sigma_w)

    def objective_value(self, theta):
        if self.objective == "styblinski":
            return styblinski_objective(theta, self.xi)
        return camel_objective(theta)

    def fbar(self, theta):
        if self.objective == "styblinski":
            return styblinski_field(theta, self.xi)[1]
        return camel_field(theta)[1]

    def emit(self, state):
        if self.exploration == "iid":
            return state
        return (state[2:] - state[:2]) / SQRT2

    def f(self, theta, state):
        return self.fbar(theta) + self.emit(state)

    def jacobian_f(self, theta, state):
        if self.objective == "styblinski":
            return styblinski_jacobian(theta, self.xi)
        return camel_jacobian(theta)

    def kernel_for(self, chain):
        if chain == self.chain():
            model = kernels.STYBLINSKI if self.objective == "styblinski" else kernels.CAMEL
            explore = 0 if self.exploration == "iid" else 1
            ns = 2 if explore == 0 else 4
            return KernelSpec(model, explore, (self.sigma_w, self.xi), 2, ns, 2)
        return None

    def problem(self) -> SAProblem:
        star = self.theta_star
        astar = None
        if star is not None:
            astar = styblinski_jacobian(star, self.xi)
        return SAProblem(2, self.f, self.fbar, self.jacobian_f, star, astar, self.kernel_for,
                         f"sgd-{self.objective}-{self.exploration}")

    # the exploration is additive, so h_hat depends on the chain state only
    def f_vec(self, thetas, states):
        return self.fbar_vec(thetas) + self.emit(states.T).T

    def fbar_vec(self, thetas):
        return np.stack([self.fbar(th) for th in thetas])

    def hhat_vec(self, thetas, states):
        if self.exploration == "iid":
            return states.copy()
        return -states[:, :2] / SQRT2

    def phat_vec(self, thetas, states):
        if self.exploration == "iid":
            return np.zeros_like(states)
        return -states[:, 2:] / SQRT2

    def oracles(self, alpha=None) -> OracleReport:
        if self.objective != "styblinski":
            raise CapabilityError("the camel-back objective has no closed-form oracle")
        star = self.theta_star
        s2a = styblinski_curvature(self.xi)
        astar = -s2a * np.eye(2)
        noise = (self.sigma_w**2 if self.exploration == "iid" else 0.0) * np.eye(2)
        return OracleReport(
            model=f"sgd-styblinski-{self.exploration}",
            theta_star=star,
            astar=astar,
            sigma_clt_noise=noise,
            sigma_theta_star=sigma_theta_star(np.linalg.inv(-astar), noise),
            z_theta_star=solve_lyapunov(astar, noise),
            upsilon_bar_star=np.zeros(2),
            zeta_theta_star=np.zeros(2),
            extra={"sigma_a_squared": s2a},
        )


# ---------------------------------------------------------- finite chains

@dataclass(frozen=True, eq=False)
class FiniteLinearModel:
    """``f(theta, x) = A_x theta + b_x`` driven by a finite chain."""

    P: np.ndarray
    A: np.ndarray
    b: np.ndarray
    name = "finite-linear"
    _poisson: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float)
        n = P.shape[0]
        if A.ndim != 3 or A.shape[0] != n or b.shape != (n, A.shape[1]):
            raise DomainError("need A of shape (n, d, d) and b of shape (n, d)")
        for k, v in (("P", P), ("A", A), ("b", b)):
            object.__setattr__(self, k, v)
        sol_A = solve_poisson_finite(P, A.reshape(n, -1))
        sol_b = solve_poisson_finite(P, b)
        pi = sol_A.pi
        self._poisson.update(
            pi=pi,
            Abar=np.tensordot(pi, A, axes=1),
            bbar=pi @ b,
            Ahat=sol_A.ghat.reshape(A.shape),
            bhat=sol_b.ghat,
        )

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def theta_star(self):
        return -np.linalg.solve(self._poisson["Abar"], self._poisson["bbar"])

    def chain(self) -> Finite:
        return Finite(self.P)

    def f(self, theta, state):
        x = int(state[0])
        return self.A[x] @ theta + self.b[x]

    def fbar(self, theta):
        return self._poisson["Abar"] @ theta + self._poisson["bbar"]

    def jacobian_f(self, theta, state):
        return self.A[int(state[0])]

    def problem(self) -> SAProblem:
        return SAProblem(self.dim, self.f, self.fbar, self.jacobian_f, self.theta_star,
                         self._poisson["Abar"], None, self.name)

    def f_vec(self, thetas, states):
        x = states[:, 0].astype(int)
        return np.einsum("nij,nj->ni", self.A[x], thetas) + self.b[x]

    def fbar_vec(self, thetas):
        return thetas @ self._poisson["Abar"].T + self._poisson["bbar"]

    def hhat_vec(self, thetas, states):
        x = states[:, 0].astype(int)
        return np.einsum("nij,nj->ni", self._poisson["Ahat"][x], thetas) + self._poisson["bhat"][x]

    def phat_vec(self, thetas, states):
        x = states[:, 0].astype(int)
        PA = np.tensordot(self.P, self._poisson["Ahat"], axes=1)
        Pb = self.P @ self._poisson["bhat"]
        return np.einsum("nij,nj->ni", PA[x], thetas) + Pb[x]


def additive_problem(fbar, chain: NoiseChain, dim: int) -> SAProblem:
    """``f(theta, Phi) = fbar(theta) + chain.emit(Phi)`` for a generic mean field."""
    return SAProblem(dim, lambda th, st: np.asarray(fbar(th), dtype=float) + chain.emit(st),
                     fbar, name="additive")


MODEL_TYPES = {"scalar-linear": ScalarLinearModel, "td": TdModel, "sgd": SgdModel}
