import numpy as np
import pytest

from salab.chains import stationary_dist


def random_chain(rng: np.random.Generator, n: int) -> np.ndarray:
    """Dense random transition matrix with strictly positive entries (irreducible, aperiodic)."""
    P = rng.random((n, n)) + 0.05
    return P / P.sum(axis=1, keepdims=True)


def random_hurwitz(rng: np.random.Generator, d: int) -> np.ndarray:
    A = rng.standard_normal((d, d))
    shift = np.linalg.eigvals(A).real.max() + 0.5 + rng.random()
    return A - shift * np.eye(d)


def random_psd(rng: np.random.Generator, d: int) -> np.ndarray:
    B = rng.standard_normal((d, d))
    return B @ B.T


def neumann_oracle(P, g, tol=1e-8):
    pi = np.linalg.matrix_power(P, 4096)[0]
    g_c = g - pi @ g
    slem = sorted(np.abs(np.linalg.eigvals(P)))[-2]
    # geometric tail bound: |P^k g_c| <= C slem^k; take C generously
    K = int(np.ceil(np.log(tol * (1 - slem) / (10 * np.abs(g_c).max() + 1e-300)) / np.log(slem))) + 1
    out = np.zeros_like(g_c)
    term = g_c.copy()
    for _ in range(max(K, 1)):
        out += term
        term = P @ term
    return out - pi @ out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["neumann_oracle", "random_chain", "random_hurwitz", "random_psd", "stationary_dist"]
