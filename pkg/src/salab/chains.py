"""Markovian noise processes that drive the SA recursions.

Each chain is an immutable descriptor.  The chain state is a plain float
vector whose layout depends on the kind:

================  ==========================================  =================
kind              state layout                                draws per step
================  ==========================================  =================
``IidGaussian``   ``W`` (dim)                                 dim normals
``ZigZag``        ``(W_prev, W)`` (2 * dim)                   dim normals
``Ar1``           ``w``                                       1 normal
``LinearGauss``   ``x``                                       1 normal
``TdState``       ``(x_prev, x, z_1, z_2)``                   1 normal
``Finite``        ``(index,)``                                1 uniform
================  ==========================================  =================

``advance(state, draws)`` is a pure function, so replaying the same raw
draws reproduces a trajectory bit for bit.  ``chain_step`` pulls exactly
``draws_per_step`` variates from the generator before each transition.

For ``TdState`` the trace ``z`` stored next to ``(x_prev, x)`` is the
eligibility vector accumulated through ``x_prev``:
``z <- lambda*gamma*z + psi(x_prev)`` with ``psi(x) = (x**2, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, ClassVar

import numpy as np

from .errors import CapabilityError, DomainError, LayoutError, StructureError

SQRT2 = math.sqrt(2.0)


class NoiseChain:
    """Common interface of the noise chains."""

    kind: ClassVar[str] = ""
    draw_kind: ClassVar[str] = "normal"

    @property
    def state_dim(self) -> int:
        raise NotImplementedError

    @property
    def draws_per_step(self) -> int:
        raise NotImplementedError

    def advance(self, state: np.ndarray, draws: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def emit(self, state: np.ndarray):
        """The noise value the chain feeds into an SA update."""
        raise NotImplementedError

    def stationary(self, rng: np.random.Generator) -> np.ndarray:
        raise CapabilityError(f"{self.kind} chain has no stationary sampler")

    def draw(self, rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
        """Raw variates for one step, or an array of shape ``(steps, k)``."""
        shape = self.draws_per_step if steps is None else (steps, self.draws_per_step)
        if self.draw_kind == "uniform":
            return rng.random(shape)
        return rng.standard_normal(shape)

    def check_state(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.state_dim,):
            raise LayoutError(
                f"{self.kind} state must have shape ({self.state_dim},), got {state.shape}"
            )
        return state

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class IidGaussian(NoiseChain):
    dim: int = 1
    sigma_w: float = 1.0
    kind: ClassVar[str] = "iid"

    def __post_init__(self):
        if self.dim < 1 or not self.sigma_w >= 0:
            raise DomainError("IidGaussian needs dim >= 1 and sigma_w >= 0")

    @property
    def state_dim(self):
        return self.dim

    @property
    def draws_per_step(self):
        return self.dim

    def advance(self, state, draws):
        return self.sigma_w * np.asarray(draws, dtype=float)

    def emit(self, state):
        return state

    def stationary(self, rng):
        return self.sigma_w * rng.standard_normal(self.dim)


@dataclass(frozen=True)
class ZigZag(NoiseChain):
    """Pair chain ``(W_prev, W)`` emitting ``(W - W_prev) / sqrt(2)``."""

    dim: int = 1
    sigma_w: float = 1.0
    kind: ClassVar[str] = "zigzag"

    def __post_init__(self):
        if self.dim < 1 or not self.sigma_w >= 0:
            raise DomainError("ZigZag needs dim >= 1 and sigma_w >= 0")

    @property
    def state_dim(self):
        return 2 * self.dim

    @property
    def draws_per_step(self):
        return self.dim

    def advance(self, state, draws):
        return np.concatenate([state[self.dim:], self.sigma_w * np.asarray(draws, dtype=float)])

    def emit(self, state):
        return (state[self.dim:] - state[: self.dim]) / SQRT2

    def stationary(self, rng):
        return self.sigma_w * rng.standard_normal(2 * self.dim)


@dataclass(frozen=True)
class Ar1(NoiseChain):
    """Unit-variance AR(1): ``w' = beta*w + sqrt(1 - beta**2)*xi``."""

    beta: float = 0.0
    kind: ClassVar[str] = "ar1"

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise DomainError(f"Ar1 requires 0 <= beta < 1, got {self.beta}")

    @property
    def innovation_scale(self) -> float:
        return math.sqrt(1.0 - self.beta * self.beta)

    @property
    def state_dim(self):
        return 1

    @property
    def draws_per_step(self):
        return 1

    def advance(self, state, draws):
        return np.array([self.beta * state[0] + self.innovation_scale * draws[0]])

    def emit(self, state):
        return state[0]

    def stationary(self, rng):
        return rng.standard_normal(1)


@dataclass(frozen=True)
class LinearGauss(NoiseChain):
    """Scalar Gaussian chain ``x' = F*x + sigma_w*xi``."""

    F: float = 0.5
    sigma_w: float = 1.0
    kind: ClassVar[str] = "linear-gauss"

    def __post_init__(self):
        if not abs(self.F) < 1.0:
            raise DomainError(f"LinearGauss requires |F| < 1, got {self.F}")

    @property
    def stationary_std(self) -> float:
        return self.sigma_w / math.sqrt(1.0 - self.F * self.F)

    @property
    def state_dim(self):
        return 1

    @property
    def draws_per_step(self):
        return 1

    def advance(self, state, draws):
        return np.array([self.F * state[0] + self.sigma_w * draws[0]])

    def emit(self, state):
        return state[0]

    def stationary(self, rng):
        return self.stationary_std * rng.standard_normal(1)


@dataclass(frozen=True)
class TdState(NoiseChain):
    """Linear Gaussian chain augmented with the TD(lambda) eligibility trace."""

    F: float = 0.5
    sigma_w: float = 1.0
    gamma: float = 0.7
    lam: float = 0.0
    kind: ClassVar[str] = "td"

    def __post_init__(self):
        if not abs(self.F) < 1.0:
            raise DomainError(f"TdState requires |F| < 1, got {self.F}")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"discount must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"trace parameter must lie in [0, 1], got {self.lam}")

    @property
    def stationary_std(self) -> float:
        return self.sigma_w / math.sqrt(1.0 - self.F * self.F)

    @property
    def state_dim(self):
        return 4

    @property
    def draws_per_step(self):
        return 1

    def advance(self, state, draws):
        lg = self.lam * self.gamma
        xo = state[1]
        xn = self.F * xo + self.sigma_w * draws[0]
        return np.array([xo, xn, lg * state[2] + xo * xo, lg * state[3] + 1.0])

    def emit(self, state):
        return state

    def stationary(self, rng):
        # the trace restarts at psi(x_prev); exact for lam = 0
        x0 = self.stationary_std * rng.standard_normal()
        x1 = self.F * x0 + self.sigma_w * rng.standard_normal()
        return np.array([x0, x1, x0 * x0, 1.0])


@dataclass(frozen=True, eq=False)
class Finite(NoiseChain):
    """Finite-state chain with transition matrix ``P`` and per-state emissions."""

    P: np.ndarray = field(default_factory=lambda: np.eye(1))
    emit_values: np.ndarray | None = None
    kind: ClassVar[str] = "finite"
    draw_kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        check_stochastic(P)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "_cdf", np.cumsum(P, axis=1))
        if self.emit_values is None:
            object.__setattr__(self, "emit_values", np.arange(P.shape[0], dtype=float))
        else:
            ev = np.array(self.emit_values, dtype=float)
            if ev.shape[0] != P.shape[0]:
                raise LayoutError("need one emission value per state")
            object.__setattr__(self, "emit_values", ev)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def state_dim(self):
        return 1

    @property
    def draws_per_step(self):
        return 1

    def advance(self, state, draws):
        row = self._cdf[int(state[0])]
        nxt = int(np.searchsorted(row, draws[0], side="right"))
        return np.array([float(min(nxt, self.n_states - 1))])

    def emit(self, state):
        return self.emit_values[int(state[0])]

    def stationary(self, rng):
        cdf = np.cumsum(stationary_dist(self.P))
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        return np.array([float(min(idx, self.n_states - 1))])

    def to_dict(self):
        return {"kind": self.kind, "P": self.P.tolist(), "emit_values": self.emit_values.tolist()}


CHAIN_KINDS = {c.kind: c for c in (IidGaussian, ZigZag, Ar1, LinearGauss, TdState, Finite)}


def chain_from_dict(data: dict[str, Any]) -> NoiseChain:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in CHAIN_KINDS:
        raise DomainError(f"unknown chain kind {kind!r}; expected one of {sorted(CHAIN_KINDS)}")
    return CHAIN_KINDS[kind](**data)


def chain_step(chain: NoiseChain, state, rng: np.random.Generator) -> np.ndarray:
    """Advance ``state`` by one transition using fresh draws from ``rng``."""
    state = chain.check_state(state)
    return chain.advance(state, chain.draw(rng))


def stationary_sample(chain: NoiseChain, rng: np.random.Generator) -> np.ndarray:
    """One draw from the stationary law of ``chain``."""
    return chain.stationary(rng)


def check_stochastic(P: np.ndarray, tol: float = 1e-12) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise LayoutError(f"transition matrix must be square, got shape {P.shape}")
    if (P < 0).any():
        raise StructureError("transition matrix has negative entries")
    if np.abs(P.sum(axis=1) - 1.0).max() > tol:
        raise StructureError("transition matrix rows must sum to one")


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = np.flatnonzero(adj[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = nxt.tolist()
    return seen


def is_irreducible(P: np.ndarray) -> bool:
    adj = np.asarray(P) > 0
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def stationary_dist(P) -> np.ndarray:
    """Invariant probability vector of an irreducible transition matrix.

    Solves ``pi (I - P) = 0`` with one balance equation replaced by the
    normalization ``sum(pi) = 1``.  Aperiodicity is not required.
    """
    P = np.array(P, dtype=float)
    check_stochastic(P)
    if not is_irreducible(P):
        raise StructureError("transition matrix is reducible")
    n = P.shape[0]
    M = (np.eye(n) - P).T
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(M, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def ar1_clt_variance(beta: float) -> float:
    """Asymptotic variance ``(1 + beta) / (1 - beta)`` of the unit-variance AR(1)."""
    if not 0.0 <= beta < 1.0:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    return (1.0 + beta) / (1.0 - beta)
