"""Monte Carlo ensembles and the estimators applied to them.

Run ``i`` of an ensemble owns the random stream ``(master_seed, grid_key, i)``
and consumes it in a fixed order: initial parameter (only when the initial
condition is random), stationary chain state, then the per-step draws.
Runs are executed in contiguous chunks, one chunk per worker thread, and
every statistic is folded in run-index order, so a summary does not depend
on the number of threads.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chains import NoiseChain, stationary_sample
from .engine import (Constant, SAProblem, StepSchedule, _check_horizon, _sa_run_generic, default_window_start,
                     run_batch)
from .errors import ArgumentError, CapabilityError, DivergenceError
from .rng import make_rng

# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class InitialCondition:
    """``theta_0 = mean + std * N(0, I)``; ``std = 0`` gives a fixed start."""

    mean: tuple
    std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(v) for v in np.atleast_1d(self.mean)))
        if not self.std >= 0:
            raise ArgumentError("initial-condition std must be >= 0")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        mean = np.array(self.mean)
        if self.std > 0:
            return mean + self.std * rng.standard_normal(mean.shape[0])
        return mean


@dataclass(frozen=True)
class EnsembleConfig:
    """Size and seeding of an ensemble.

    Parameters
    ----------
    M : int
        Number of independent runs (at least 2).
    N, N0 : int
        Horizon and PR burn-in (``N0`` defaults to ``floor(0.2 N)``).
    master_seed : int
        Root of every per-run stream.
    theta0 : InitialCondition
        Initial parameter law.
    grid_key : int
        Extra key separating the seed blocks of sweep grid points.
    threads : int
        Worker threads; results do not depend on it.
    mse_from : int, optional
        Start of the trailing MSE window, default ``N - N // 10``.
    """

    M: int
    N: int
    theta0: InitialCondition
    N0: int | None = None
    master_seed: int = 0
    grid_key: int = 0
    threads: int = 1
    mse_from: int | None = None

    def __post_init__(self):
        if int(self.M) < 2:
            raise ArgumentError(f"an ensemble needs M >= 2 runs, got {self.M}")
        N, N0 = _check_horizon(self.N, self.N0)
        object.__setattr__(self, "N0", N0)
        if self.threads < 1:
            raise ArgumentError("threads must be >= 1")
        mse_from = default_window_start(N) if self.mse_from is None else int(self.mse_from)
        if not 0 <= mse_from < N:
            raise ArgumentError(f"mse_from must lie in [0, N), got {mse_from}")
        object.__setattr__(self, "mse_from", mse_from)


# ---------------------------------------------------------------- summary

@dataclass
class EnsembleSummary:
    """Ensemble statistics plus the per-run arrays they were computed from.

    All statistics use the included (non-diverged) runs only.  ``*_se`` are
    standard errors of the corresponding ensemble means.
    """

    M: int
    N: int
    N0: int
    mse_from: int
    included: np.ndarray
    diverged_at: np.ndarray
    theta_final: np.ndarray
    theta_pr: np.ndarray
    target_bias: np.ndarray
    window_sq: np.ndarray | None
    theta_star: np.ndarray | None
    mean_final: np.ndarray = field(init=False)
    mean_pr: np.ndarray = field(init=False)
    cov_pr: np.ndarray = field(init=False)
    scaled_cov_pr: np.ndarray = field(init=False)
    mean_pr_se: np.ndarray = field(init=False)
    target_bias_norms: np.ndarray = field(init=False)
    histograms: dict = field(default_factory=dict)

    def __post_init__(self):
        ok = self.included
        pr = self.theta_pr[ok]
        self.mean_final = self.theta_final[ok].mean(axis=0)
        self.mean_pr = pr.mean(axis=0)
        self.cov_pr = sample_covariance(pr)
        self.scaled_cov_pr = (self.N - self.N0) * self.cov_pr
        self.mean_pr_se = np.sqrt(np.diag(self.cov_pr) / pr.shape[0])
        self.target_bias_norms = np.sum(self.target_bias ** 2, axis=1)

    @property
    def n_included(self) -> int:
        return int(self.included.sum())

    @property
    def n_diverged(self) -> int:
        return int(self.M - self.n_included)

    def _err(self, theta):
        if self.theta_star is None:
            raise CapabilityError("theta* unknown for this problem")
        return np.sum((theta[self.included] - self.theta_star) ** 2, axis=1)

    @property
    def bias_pr(self) -> np.ndarray:
        if self.theta_star is None:
            raise CapabilityError("theta* unknown for this problem")
        return self.mean_pr - self.theta_star

    @property
    def mse_final(self) -> float:
        return float(self._err(self.theta_final).mean())

    @property
    def mse_pr(self) -> float:
        return float(self._err(self.theta_pr).mean())

    @property
    def window_mse(self) -> float | None:
        if self.window_sq is None:
            return None
        return float(self.window_sq[self.included].mean())

    @property
    def window_mse_se(self) -> float | None:
        if self.window_sq is None:
            return None
        w = self.window_sq[self.included]
        return float(w.std(ddof=1) / math.sqrt(w.shape[0]))

    @property
    def target_bias_mean(self) -> float:
        return float(self.target_bias_norms[self.included].mean())

    @property
    def target_bias_se(self) -> float:
        t = self.target_bias_norms[self.included]
        return float(t.std(ddof=1) / math.sqrt(t.shape[0]))

    def to_dict(self) -> dict:
        out = {
            "M": self.M,
            "N": self.N,
            "N0": self.N0,
            "mse_from": self.mse_from,
            "n_included": self.n_included,
            "n_diverged": self.n_diverged,
            "mean_final": self.mean_final.tolist(),
            "mean_pr": self.mean_pr.tolist(),
            "mean_pr_se": self.mean_pr_se.tolist(),
            "cov_pr": self.cov_pr.tolist(),
            "scaled_cov_pr": self.scaled_cov_pr.tolist(),
            "target_bias_sq_mean": self.target_bias_mean,
            "target_bias_sq_se": self.target_bias_se,
        }
        if self.theta_star is not None:
            out.update(
                theta_star=self.theta_star.tolist(),
                bias_pr=self.bias_pr.tolist(),
                mse_final=self.mse_final,
                mse_pr=self.mse_pr,
                window_mse=self.window_mse,
                window_mse_se=self.window_mse_se,
            )
        if self.histograms:
            out["histograms"] = {k: h.to_dict() for k, h in self.histograms.items()}
        return out

    def run_rows(self) -> tuple[list[str], list[list]]:
        """Header and one row per run for ``runs.csv``."""
        d = self.theta_pr.shape[1]
        header = ["run", "included", "diverged_at"]
        header += [f"theta_final_{i}" for i in range(d)]
        header += [f"theta_pr_{i}" for i in range(d)]
        header += ["target_bias_sq"]
        if self.window_sq is not None:
            header += ["window_mse"]
        rows = []
        for r in range(self.M):
            row = [r, int(self.included[r]), int(self.diverged_at[r])]
            row += list(self.theta_final[r]) + list(self.theta_pr[r])
            row += [self.target_bias_norms[r]]
            if self.window_sq is not None:
                row += [self.window_sq[r]]
            rows.append(row)
        return header, rows

    def write_runs_csv(self, path) -> None:
        header, rows = self.run_rows()
        write_csv(path, header, rows)


def format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with floats at 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def sample_covariance(x) -> np.ndarray:
    """Two-pass unbiased covariance of the rows of ``x``, symmetrized."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        return np.full((x.shape[1], x.shape[1]), np.nan)
    c = x - x.mean(axis=0)
    cov = (c.T @ c) / (n - 1)
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------- ensemble

def _chunks(M: int, k: int) -> list[range]:
    k = max(1, min(k, M))
    bounds = np.linspace(0, M, k + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(k)]


def _starts(problem, chain, config, runs):
    rngs, th0, st0 = [], [], []
    for i in runs:
        rng = make_rng(config.master_seed, config.grid_key, i)
        th = config.theta0.sample(rng)
        if th.shape != (problem.dim,):
            raise ArgumentError(f"initial condition has length {th.shape[0]}, need {problem.dim}")
        th0.append(th)
        st0.append(stationary_sample(chain, rng))
        rngs.append(rng)
    return rngs, np.array(th0), np.array(st0)


def _run_chunk(problem, chain, schedule, config, runs, spec, star, backend):
    rngs, th0, st0 = _starts(problem, chain, config, runs)
    N, N0 = config.N, config.N0
    if spec is not None:
        out = run_batch(spec, th0, st0, rngs, schedule, N, N0, config.mse_from, star,
                        backend=backend)
        wsq = None if star is None else out["sq_sum"] / (N - config.mse_from)
        return (out["theta_final"], out["theta_pr"], out["fbar_sum"] / N, wsq, out["status"])
    d = problem.dim
    R = len(runs)
    fin, pr, tb = np.full((R, d), np.nan), np.full((R, d), np.nan), np.full((R, d), np.nan)
    wsq = None if star is None else np.full(R, np.nan)
    status = np.full(R, -1, dtype=np.int64)
    for r in range(R):
        try:
            rec = _sa_run_generic(problem, chain, schedule, th0[r], st0[r], N, N0, rngs[r],
                                  False, config.mse_from, star)
        except DivergenceError as exc:
            status[r] = exc.step
            continue
        fin[r], pr[r] = rec.theta_final, rec.theta_pr
        if rec.fbar_sum is not None:
            tb[r] = rec.fbar_sum / N
        if wsq is not None:
            wsq[r] = rec.window_mse
    return fin, pr, tb, wsq, status


def ensemble_run(problem: SAProblem, chain: NoiseChain, schedule: StepSchedule,
                 config: EnsembleConfig, backend: str | None = None) -> EnsembleSummary:
    """Run ``config.M`` independent trajectories and summarize them.

    Diverged runs are kept in the per-run arrays (with their divergence
    step) and excluded from every statistic.
    """
    star = None if problem.theta_star is None else np.asarray(problem.theta_star, dtype=float)
    spec = problem.kernel(chain)
    chunks = _chunks(config.M, config.threads)
    args = (problem, chain, schedule, config)
    if len(chunks) == 1:
        parts = [_run_chunk(*args, chunks[0], spec, star, backend)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda rr: _run_chunk(*args, rr, spec, star, backend), chunks))
    fin = np.concatenate([p[0] for p in parts])
    pr = np.concatenate([p[1] for p in parts])
    tb = np.concatenate([p[2] for p in parts])
    wsq = None if star is None else np.concatenate([p[3] for p in parts])
    status = np.concatenate([p[4] for p in parts])
    ok = (status < 0) & np.isfinite(pr).all(axis=1) & np.isfinite(fin).all(axis=1)
    if ok.sum() < 2:
        raise DivergenceError(int(status.max()), f"{int((~ok).sum())} of {config.M} runs diverged")
    return EnsembleSummary(config.M, config.N, config.N0, config.mse_from, ok, status, fin, pr,
                           tb, wsq, star)


# --------------------------------------------------------------- estimators

def clt_variance_batch_means(series, num_batches: int = 50):
    """Batch-means estimate of the asymptotic (CLT) variance.

    The series is cut into ``num_batches`` consecutive batches of equal size
    ``b`` (a trailing remainder is dropped) and the estimate is ``b`` times
    the sample covariance of the batch means.  Returns a scalar for a 1-d
    series and a matrix for an ``(n, k)`` series.
    """
    x = np.asarray(series, dtype=float)
    scalar = x.ndim == 1
    if scalar:
        x = x[:, None]
    if num_batches < 20:
        raise ArgumentError(f"need at least 20 batches, got {num_batches}")
    b = x.shape[0] // num_batches
    if b < 1:
        raise ArgumentError(f"series of length {x.shape[0]} is too short for {num_batches} batches")
    means = x[: b * num_batches].reshape(num_batches, b, -1).mean(axis=1)
    out = b * sample_covariance(means)
    return float(out[0, 0]) if scalar else out


def clt_variance_autocov(series, max_lag: int) -> float:
    """Windowed autocovariance sum ``gamma_0 + 2 sum_{k<=L} (1 - k/(L+1)) gamma_k`` (Bartlett)."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.shape[0]
    if not 0 <= max_lag < n:
        raise ArgumentError("max_lag must lie in [0, len(series))")
    total = x @ x / n
    for k in range(1, max_lag + 1):
        total += 2.0 * (1.0 - k / (max_lag + 1)) * (x[k:] @ x[:-k]) / n
    return float(total)


@dataclass
class TargetBiasRow:
    N: int
    n_scaled: float
    n_scaled_se: float
    n2_scaled: float
    n2_scaled_se: float
    n_diverged: int


def target_bias_decay(model, N_grid, M: int, master_seed: int, alpha: float,
                      theta0=None, threads: int = 1, backend: str | None = None) -> list[TargetBiasRow]:
    """Estimate ``N E|beta_N|^2`` and ``N^2 E|beta_N|^2`` on a grid of horizons.

    ``beta_N = N^{-1} sum_{n<N} fbar(theta_n)`` is the empirical target bias
    of a constant-gain run.  Only additive-noise models (``model.additive``)
    are accepted.
    """

    if not getattr(model, "additive", False):
        raise CapabilityError(f"{type(model).__name__} is not an additive-noise model")
    problem, chain = model.problem(), model.chain()
    if problem.fbar is None:
        raise CapabilityError("model has no mean field")
    ic = InitialCondition(np.zeros(problem.dim) if theta0 is None else theta0)
    rows = []
    for g, N in enumerate(N_grid):
        cfg = EnsembleConfig(M=M, N=int(N), theta0=ic, master_seed=master_seed, grid_key=g,
                             threads=threads)
        s = ensemble_run(problem, chain, Constant(alpha), cfg, backend)
        t = s.target_bias_norms[s.included]
        m, se = t.mean(), t.std(ddof=1) / math.sqrt(t.shape[0])
        rows.append(TargetBiasRow(int(N), N * m, N * se, N * N * m, N * N * se, s.n_diverged))
    return rows


@dataclass
class MseRow:
    alpha: float
    mse: float
    mse_se: float
    mse_over_alpha: float
    n_diverged: int


def mse_alpha_table(model, alphas, N: int, M: int, master_seed: int, theta0=None,
                    threads: int = 1, backend: str | None = None) -> list[MseRow]:
    """Steady-state ``E|theta_n - theta*|^2`` for each constant gain.

    The steady state is read as the average over the trailing 10% window
    of each run, then averaged across runs.
    """

    problem, chain = model.problem(), model.chain()
    if problem.theta_star is None:
        raise CapabilityError("mse_alpha_table needs theta*")
    ic = InitialCondition(problem.theta_star if theta0 is None else theta0)
    rows = []
    for g, a in enumerate(alphas):
        cfg = EnsembleConfig(M=M, N=N, theta0=ic, master_seed=master_seed, grid_key=g,
                             threads=threads)
        s = ensemble_run(problem, chain, Constant(a), cfg, backend)
        rows.append(MseRow(float(a), s.window_mse, s.window_mse_se, s.window_mse / a, s.n_diverged))
    return rows


# ---------------------------------------------------------------- histogram

@dataclass
class HistogramSpec:
    """Bin layout and (after :func:`histogram`) counts.

    ``range`` of ``None`` means data-driven ``[min, max]``.  Values outside
    an explicit range land in the end bins and are tallied in ``clipped``.
    """

    bin_count: int
    range: tuple[float, float] | None = None
    counts: np.ndarray | None = None
    edges: np.ndarray | None = None
    clipped: int = 0

    def to_dict(self) -> dict:
        return {
            "bin_count": self.bin_count,
            "range": None if self.range is None else list(self.range),
            "counts": None if self.counts is None else self.counts.tolist(),
            "edges": None if self.edges is None else self.edges.tolist(),
            "clipped": self.clipped,
        }


def histogram(values, spec: HistogramSpec) -> HistogramSpec:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ArgumentError("cannot histogram an empty sample")
    if spec.bin_count < 1:
        raise ArgumentError("bin_count must be >= 1")
    if spec.range is None:
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = map(float, spec.range)
        if not hi > lo:
            raise ArgumentError("histogram range must be increasing")
    edges = np.linspace(lo, hi, spec.bin_count + 1)
    outside = (v < lo) | (v > hi)
    idx = np.searchsorted(edges, np.clip(v, lo, hi), side="right") - 1
    idx = np.clip(idx, 0, spec.bin_count - 1)
    counts = np.bincount(idx, minlength=spec.bin_count)
    return HistogramSpec(spec.bin_count, (lo, hi), counts, edges, int(outside.sum()))


# ---------------------------------------------------------------- slope fit

def slope_fit(xs, ys, log_log: bool = False) -> tuple[float, float, float]:
    """Least-squares line through ``(xs, ys)``; returns ``(slope, intercept, r2)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError("xs and ys must be 1-d arrays of equal length")
    if log_log:
        if (x <= 0).any() or (y <= 0).any():
            raise ArgumentError("log-log fit needs positive data")
        x, y = np.log(x), np.log(y)
    if np.unique(x).shape[0] < 2:
        raise ArgumentError("need at least two distinct abscissae")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    return float(slope), float(intercept), r2
