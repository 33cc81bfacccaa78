"""Hot loops of the SA recursion.

Two interchangeable backends implement the same functions:

``compiled``
    Cython extension ``salab.kernels._core`` (built by ``setup.py``).
``python``
    numpy code in ``salab.kernels._fallback``, vectorized across runs.

The compiled backend is chosen at import when it is importable, unless
``SALAB_PURE_PYTHON=1`` is set in the environment.  Both backends return
bitwise-identical results for identical inputs.
"""
import os
from dataclasses import dataclass

import numpy as np

from . import _fallback

SCALAR_LINEAR, TD, STYBLINSKI, CAMEL = 0, 1, 2, 3

try:
    from . import _core
except ImportError:  # pragma: no cover - exercised only without a compiler
    _core = None

_BACKENDS = {"python": _fallback}
if _core is not None:
    _BACKENDS["compiled"] = _core

if os.environ.get("SALAB_PURE_PYTHON", "") not in ("", "0") or _core is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (default: the import-time choice)."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


@dataclass(frozen=True)
class KernelSpec:
    """Identifies a (model, chain) pair that has a dedicated kernel."""

    model: int
    explore: int
    params: tuple
    dim: int
    state_dim: int
    draws_per_step: int

    @property
    def param_array(self) -> np.ndarray:
        return np.array(self.params, dtype=float)
