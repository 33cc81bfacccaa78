"""The SA recursion, step-size schedules, averaging, and the sensitivity process.

The recursion is ``theta_{n+1} = theta_n + alpha_{n+1} f(theta_n, Phi_{n+1})``
with the chain advanced before each use.  Polyak-Ruppert averages, the
empirical target bias and the steady-state squared error are accumulated in
streaming (Kahan-compensated) form, so full paths are stored only on request.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .chains import NoiseChain, stationary_sample
from .errors import ArgumentError, CapabilityError, DivergenceError, DomainError

DIVERGENCE_RADIUS = 1e12
LN2 = math.log(2.0)


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True)
class Constant:
    alpha: float
    kind = "constant"

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"step size must be positive, got {self.alpha}")

    def values(self, start: int, count: int) -> np.ndarray:
        return np.full(count, float(self.alpha))

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha}


@dataclass(frozen=True)
class Polynomial:
    """``a * n**(-rho)``."""

    a: float
    rho: float
    kind = "polynomial"

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"gain prefactor must be positive, got {self.a}")
        if not 0.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [0, 1], got {self.rho}")

    def values(self, start, count):
        n = np.arange(start, start + count, dtype=float)
        return self.a * n ** (-self.rho)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "rho": self.rho}


@dataclass(frozen=True)
class Clipped:
    """``min(alpha, n**(-rho))``."""

    alpha: float
    rho: float
    kind = "clipped"

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"step size must be positive, got {self.alpha}")
        if not 0.0 < self.rho <= 1.0:
            raise DomainError(f"rho must lie in (0, 1], got {self.rho}")

    def values(self, start, count):
        n = np.arange(start, start + count, dtype=float)
        return np.minimum(float(self.alpha), n ** (-self.rho))

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "rho": self.rho}


StepSchedule = Constant | Polynomial | Clipped
SCHEDULES = {"constant": Constant, "polynomial": Polynomial, "clipped": Clipped}


def schedule_from_dict(data: dict) -> StepSchedule:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in SCHEDULES:
        raise DomainError(f"unknown schedule kind {kind!r}")
    return SCHEDULES[kind](**data)


def schedule_value(schedule: StepSchedule, n: int) -> float:
    """Step size used to produce ``theta_n`` (``n >= 1``)."""
    if n < 1:
        raise ArgumentError("schedule index starts at 1")
    return float(schedule.values(n, 1)[0])


# ------------------------------------------------------------------ problem

@dataclass(frozen=True)
class SAProblem:
    """Update field ``f(theta, state)`` with optional closed-form extras.

    ``kernel_for(chain)`` returns a :class:`~salab.kernels.KernelSpec` when a
    compiled kernel reproduces ``f`` exactly for that chain.
    """

    dim: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    fbar: Callable[[np.ndarray], np.ndarray] | None = None
    jacobian_f: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    theta_star: np.ndarray | None = None
    astar: np.ndarray | None = None
    kernel_for: Callable[[NoiseChain], "kernels.KernelSpec | None"] | None = None
    name: str = "custom"

    def kernel(self, chain: NoiseChain):
        return None if self.kernel_for is None else self.kernel_for(chain)


@dataclass
class RunRecord:
    N: int
    N0: int
    mse_from: int
    theta_final: np.ndarray
    theta_pr: np.ndarray
    pr_sum: np.ndarray
    fbar_sum: np.ndarray | None
    sq_sum: float | None
    final_state: np.ndarray
    thetas: np.ndarray | None = None
    states: np.ndarray | None = None

    @property
    def target_bias(self) -> np.ndarray | None:
        """Empirical target bias ``N^{-1} sum_{n<N} fbar(theta_n)``."""
        return None if self.fbar_sum is None else self.fbar_sum / self.N

    @property
    def window_mse(self) -> float | None:
        """Mean of ``|theta_n - theta*|^2`` over ``n`` in ``(mse_from, N]``."""
        return None if self.sq_sum is None else self.sq_sum / (self.N - self.mse_from)


def default_burn_in(N: int) -> int:
    return int(math.floor(0.2 * N))


def default_window_start(N: int) -> int:
    return N - max(1, N // 10)


def _check_horizon(N, N0):
    if N0 is None:
        N0 = default_burn_in(N)
    N, N0 = int(N), int(N0)
    if N < 1 or not 0 <= N0 < N:
        raise ArgumentError(f"need N > N0 >= 0, got N={N}, N0={N0}")
    return N, N0


def _kahan(s, c, x):
    y = x - c
    t = s + y
    c = (t - s) - y
    return t, c


def _block_size(R: int, k: int, remaining: int) -> int:
    return int(min(remaining, max(256, (1 << 21) // max(1, R * k))))


# ------------------------------------------------------------- batched run

def run_batch(spec: kernels.KernelSpec, theta0: np.ndarray, state0: np.ndarray, rngs,
              schedule: StepSchedule, N: int, N0: int, mse_from: int | None = None,
              theta_star: np.ndarray | None = None, record: bool = False,
              backend: str | None = None) -> dict[str, np.ndarray]:
    """Run ``len(rngs)`` independent trajectories through a kernel.

    Run ``r`` consumes its per-step draws from ``rngs[r]`` only, so the
    result for a run does not depend on which other runs share the batch.
    Divergence is reported per run in ``status`` (the first bad step, or -1).
    """
    kern = kernels.get_backend(backend)
    R = len(rngs)
    d, ns, k = spec.dim, spec.state_dim, spec.draws_per_step
    theta = np.ascontiguousarray(theta0, dtype=float).reshape(R, d).copy()
    state = np.ascontiguousarray(state0, dtype=float).reshape(R, ns).copy()
    mse_from = default_window_start(N) if mse_from is None else int(mse_from)
    use_star = theta_star is not None
    star = np.ascontiguousarray(theta_star if use_star else np.zeros(d), dtype=float)
    params = spec.param_array
    fbar_sum, fbar_comp = np.zeros((R, d)), np.zeros((R, d))
    pr_sum, pr_comp = np.zeros((R, d)), np.zeros((R, d))
    sq_sum, sq_comp = np.zeros(R), np.zeros(R)
    status = np.full(R, -1, dtype=np.int64)
    rec_theta = np.empty((R, N, d)) if record else np.empty((0, 0, 0))
    rec_state = np.empty((R, N, ns)) if record else np.empty((0, 0, 0))
    done = 0
    with np.errstate(all="ignore"):
        while done < N:
            B = _block_size(R, k, N - done)
            draws = np.stack([rng.standard_normal((B, k)) for rng in rngs])
            alphas = np.ascontiguousarray(schedule.values(done + 1, B), dtype=float)
            if record:
                bt = np.empty((R, B, d))
                bs = np.empty((R, B, ns))
            else:
                bt = bs = rec_theta
            kern.run_block(spec.model, spec.explore, params, theta, state, draws, alphas,
                           done, N0, mse_from, star, use_star, fbar_sum, fbar_comp,
                           pr_sum, pr_comp, sq_sum, sq_comp, status, bt, bs, record)
            if record:
                rec_theta[:, done:done + B] = bt
                rec_state[:, done:done + B] = bs
            done += B
    out = {
        "theta_final": theta,
        "state_final": state,
        "pr_sum": pr_sum,
        "theta_pr": pr_sum / (N - N0),
        "fbar_sum": fbar_sum,
        "sq_sum": sq_sum if use_star else None,
        "status": status,
    }
    if record:
        out["rec_theta"] = rec_theta
        out["rec_state"] = rec_state
    return out


# ---------------------------------------------------------------- single run

def sa_run(problem: SAProblem, chain: NoiseChain, schedule: StepSchedule, theta0, N: int,
           N0: int | None = None, rng: np.random.Generator | None = None,
           record_path: bool = False, state0=None, mse_from: int | None = None,
           use_kernel: bool = True, backend: str | None = None) -> RunRecord:
    """Run the SA recursion for ``N`` steps and average over ``(N0, N]``.

    Parameters
    ----------
    problem, chain, schedule
        Update field, noise chain and step sizes.
    theta0 : array_like
        Initial parameter.
    N, N0 : int
        Horizon and averaging burn-in; ``N0`` defaults to ``floor(0.2 N)``.
    rng : numpy.random.Generator
        Source of all randomness.  When ``state0`` is omitted the initial
        chain state is drawn from the stationary law first.
    record_path : bool
        Store ``theta_0..theta_N`` and ``Phi_0..Phi_N``.
    use_kernel : bool
        Use the compiled/numpy kernel when the (problem, chain) pair has one.
        Both routes give bitwise-identical records.

    Raises
    ------
    DivergenceError
        If ``|theta_n| > 1e12`` or ``theta_n`` is not finite.
    """
    N, N0 = _check_horizon(N, N0)
    rng = np.random.default_rng() if rng is None else rng
    theta0 = np.array(theta0, dtype=float).reshape(-1)
    if theta0.shape != (problem.dim,):
        raise ArgumentError(f"theta0 must have length {problem.dim}")
    if not np.isfinite(theta0).all():
        raise ArgumentError("theta0 must be finite")
    state = stationary_sample(chain, rng) if state0 is None else chain.check_state(state0)
    mse_from = default_window_start(N) if mse_from is None else int(mse_from)
    star = None if problem.theta_star is None else np.asarray(problem.theta_star, dtype=float)

    spec = problem.kernel(chain) if use_kernel else None
    if spec is not None:
        out = run_batch(spec, theta0[None], state[None], [rng], schedule, N, N0, mse_from,
                        star, record_path, backend)
        if out["status"][0] >= 0:
            raise DivergenceError(out["status"][0])
        thetas = states = None
        if record_path:
            thetas = np.vstack([theta0[None], out["rec_theta"][0]])
            states = np.vstack([state[None], out["rec_state"][0]])
        return RunRecord(N, N0, mse_from, out["theta_final"][0], out["theta_pr"][0],
                         out["pr_sum"][0], out["fbar_sum"][0],
                         None if star is None else float(out["sq_sum"][0]),
                         out["state_final"][0], thetas, states)
    return _sa_run_generic(problem, chain, schedule, theta0, state, N, N0, rng, record_path,
                           mse_from, star)


def _sa_run_generic(problem, chain, schedule, theta, state, N, N0, rng, record_path,
                    mse_from, star):
    d = problem.dim
    pr_s, pr_c = np.zeros(d), np.zeros(d)
    fb_s, fb_c = np.zeros(d), np.zeros(d)
    sq_s, sq_c = 0.0, 0.0
    thetas = np.empty((N + 1, d)) if record_path else None
    states = np.empty((N + 1, chain.state_dim)) if record_path else None
    if record_path:
        thetas[0], states[0] = theta, state
    fbar = problem.fbar
    done = 0
    while done < N:
        B = _block_size(1, chain.draws_per_step, N - done)
        draws = chain.draw(rng, B)
        alphas = schedule.values(done + 1, B)
        for j in range(B):
            if fbar is not None:
                fb_s, fb_c = _kahan(fb_s, fb_c, np.asarray(fbar(theta), dtype=float))
            state = chain.advance(state, draws[j])
            theta = theta + alphas[j] * np.asarray(problem.f(theta, state), dtype=float)
            k = done + j + 1
            if k > N0:
                pr_s, pr_c = _kahan(pr_s, pr_c, theta)
            if star is not None and k > mse_from:
                diff = theta - star
                e2 = diff[0] * diff[0]
                for i in range(1, d):
                    e2 = e2 + diff[i] * diff[i]
                sq_s, sq_c = _kahan(sq_s, sq_c, e2)
            ss = theta[0] * theta[0]
            for i in range(1, d):
                ss = ss + theta[i] * theta[i]
            if not ss <= DIVERGENCE_RADIUS ** 2:
                raise DivergenceError(k)
            if record_path:
                thetas[k], states[k] = theta, state
        done += B
    return RunRecord(N, N0, mse_from, theta, pr_s / (N - N0), pr_s,
                     fb_s if fbar is not None else None,
                     None if star is None else float(sq_s), state, thetas, states)


# ----------------------------------------------------------------- averages

def pr_average(path, N0: int) -> np.ndarray:
    """Polyak-Ruppert average of ``path = (theta_1, ..., theta_N)`` over ``(N0, N]``.

    Uses the same compensated summation as :func:`sa_run`, so
    ``pr_average(record.thetas[1:], N0)`` equals ``record.theta_pr`` exactly.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
        squeeze = True
    else:
        squeeze = False
    N = path.shape[0]
    if not 0 <= N0 < N:
        raise ArgumentError(f"need len(path) > N0 >= 0, got N={N}, N0={N0}")
    s = np.zeros(path.shape[1])
    c = np.zeros(path.shape[1])
    for row in path[N0:]:
        s, c = _kahan(s, c, row)
    out = s / (N - N0)
    return out[0] if squeeze else out


def empirical_target_bias(problem: SAProblem, path) -> np.ndarray:
    """``N^{-1} sum_{n=0}^{N-1} fbar(theta_n)`` for ``path = (theta_0, ..., theta_{N-1})``."""
    if problem.fbar is None:
        raise CapabilityError("problem has no mean field")
    path = np.asarray(path, dtype=float).reshape(len(path), -1)
    return np.mean([np.asarray(problem.fbar(th), dtype=float) for th in path], axis=0)


# -------------------------------------------------------------- sensitivity

@dataclass
class SensitivityResult:
    """Sensitivity matrix ``S_N`` stored as ``S * exp(log_scale)``.

    ``lognorm[n-1]`` is ``log |S_n|_F`` for ``n = 1..N``.
    """

    S: np.ndarray
    log_scale: float
    lognorm: np.ndarray

    @property
    def N(self) -> int:
        return self.lognorm.shape[0]

    @property
    def exponent(self) -> float:
        return float(self.lognorm[-1] / self.N)

    def exponent_path(self) -> np.ndarray:
        return self.lognorm / np.arange(1, self.N + 1)

    def increments(self) -> np.ndarray:
        """Per-step growth ``log|S_n| - log|S_{n-1}|``."""
        start = 0.5 * math.log(self.S.shape[0])
        return np.diff(self.lognorm, prepend=start)


def sensitivity_run(problem: SAProblem, chain: NoiseChain, alpha: float, theta0, N: int,
                    rng: np.random.Generator, state0=None,
                    backend: str | None = None) -> SensitivityResult:
    """Co-evolve ``theta_n`` and ``S_{n+1} = S_n + alpha A_{n+1} S_n`` from ``S_0 = I``.

    ``A_{n+1}`` is the Jacobian of ``f`` at ``(theta_n, Phi_{n+1})``.  The
    matrix is rescaled by exact powers of two so ``log|S_n|`` stays
    representable far past the range of a double.
    """
    if problem.jacobian_f is None:
        raise CapabilityError("sensitivity needs problem.jacobian_f")
    schedule = Constant(alpha)
    N = int(N)
    theta = np.array(theta0, dtype=float).reshape(problem.dim)
    state = stationary_sample(chain, rng) if state0 is None else chain.check_state(state0)
    spec = problem.kernel(chain)
    if spec is not None and spec.model == kernels.SCALAR_LINEAR:
        kern = kernels.get_backend(backend)
        beta, cinn, b = spec.params
        st = np.array([theta[0], state[0], 1.0, 0.0])
        mant = np.empty(N)
        expo = np.empty(N, dtype=np.int64)
        done = 0
        while done < N:
            B = _block_size(1, 1, N - done)
            draws = np.ascontiguousarray(rng.standard_normal(B))
            kern.sensitivity_scalar_linear(st, draws, schedule.values(done + 1, B), beta, cinn,
                                           b, mant[done:done + B], expo[done:done + B])
            done += B
        if not np.isfinite(st[0]) or abs(st[0]) > DIVERGENCE_RADIUS:
            raise DivergenceError(N)
        with np.errstate(divide="ignore"):
            lognorm = np.log(np.abs(mant)) + expo * LN2
        return SensitivityResult(np.array([[st[2]]]), float(st[3]) * LN2, lognorm)

    d = problem.dim
    S = np.eye(d)
    E = 0
    lognorm = np.empty(N)
    done = 0
    while done < N:
        B = _block_size(1, chain.draws_per_step, N - done)
        draws = chain.draw(rng, B)
        for j in range(B):
            state = chain.advance(state, draws[j])
            A = np.asarray(problem.jacobian_f(theta, state), dtype=float).reshape(d, d)
            theta = theta + alpha * np.asarray(problem.f(theta, state), dtype=float)
            S = S + alpha * (A @ S)
            if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_RADIUS:
                raise DivergenceError(done + j + 1)
            e = int(np.frexp(np.abs(S).max())[1])
            if e:
                S = np.ldexp(S, -e)
                E += e
            lognorm[done + j] = math.log(np.linalg.norm(S)) + E * LN2
        done += B
    return SensitivityResult(S, E * LN2, lognorm)


# ---------------------------------------------------------------- mean flow

def mean_flow_integrate(fbar: Callable[[np.ndarray], np.ndarray], theta0, T: float,
                        h: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``d/dt theta = fbar(theta)`` on ``[0, T]`` by fixed-step RK4.

    Returns the time grid and the path, one row per grid point.
    """
    if not h > 0 or not T >= h:
        raise ArgumentError(f"need h > 0 and T >= h, got T={T}, h={h}")
    steps = int(round(T / h))
    h = T / steps
    x = np.array(theta0, dtype=float).reshape(-1)
    path = np.empty((steps + 1, x.shape[0]))
    path[0] = x
    for i in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = np.asarray(fbar(x), dtype=float)
            k2 = np.asarray(fbar(x + 0.5 * h * k1), dtype=float)
            k3 = np.asarray(fbar(x + 0.5 * h * k2), dtype=float)
            k4 = np.asarray(fbar(x + h * k3), dtype=float)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(x).all():
            raise DivergenceError(i + 1, f"mean flow left the finite range at step {i + 1}")
        path[i + 1] = x
    return np.linspace(0.0, T, steps + 1), path
