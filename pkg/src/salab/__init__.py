"""Stochastic approximation with Markovian noise: simulation, oracles and ensembles."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

from .errors import SALabError  # noqa: E402

__all__ = ["__version__", "SALabError"]
