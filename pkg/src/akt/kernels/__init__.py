"""Attention kernel backends.

Two interchangeable implementations of the hot attention kernels live
here: a plain numpy one (``reference``) and a compiled Cython one
(``_native``).  The native module is built as an optional extension, so
importing it can fail on installs without a C compiler; in that case we
silently fall back to numpy.  The ``AKT_KERNELS`` environment variable
("numpy" or "native") pins the choice at import time, and
:func:`use_backend` switches it at runtime (the benchmark and the parity
tests rely on that).

All three kernels share the same contracts, documented in
``reference.py``.  Masks must be causal for ``context_distance`` to be
meaningful.
"""

import os

import numpy as np

from ..errors import ConfigError
from . import reference

_BACKENDS = {"numpy": reference}

try:
    from . import _native
except ImportError:
    _native = None
else:
    _BACKENDS["native"] = _native

_active_name = "numpy"
_active = reference


def available_backends():
    """Names of the importable backends, always including "numpy"."""
    return sorted(_BACKENDS)


def backend_name():
    """Name of the backend currently in use."""
    return _active_name


def use_backend(name):
    """Select a kernel backend by name.

    Raises ConfigError for unknown names or when the native extension
    was not built.
    """
    global _active_name, _active
    if name not in ("numpy", "native"):
        raise ConfigError(f"unknown kernel backend {name!r}")
    if name not in _BACKENDS:
        raise ConfigError("native kernels are not available in this install")
    _active_name = name
    _active = _BACKENDS[name]
    return name


def _as_mask(mask):
    return np.ascontiguousarray(mask != 0, dtype=np.uint8)


def context_distance(raw, mask):
    """Context-aware distance d(t, tau) for every batch, head and pair.

    See reference.context_distance for the full contract.
    """
    raw = np.ascontiguousarray(raw)
    return _active.context_distance(raw, _as_mask(mask))


def monotonic_weights_forward(raw, dist, theta, mask, additive=False):
    """Attention weights from raw scores, distances and per-head decay."""
    raw = np.ascontiguousarray(raw)
    dist = np.ascontiguousarray(dist, dtype=raw.dtype)
    theta = np.ascontiguousarray(theta, dtype=raw.dtype)
    return _active.monotonic_weights_forward(
        raw, dist, theta, _as_mask(mask), bool(additive)
    )


def monotonic_weights_backward(raw, dist, theta, alpha, grad_alpha, additive=False):
    """Adjoints of the raw scores and the decay rates.

    Distances are treated as constants, matching the frozen-distance
    training rule.  Returns (grad_raw, grad_theta).
    """
    raw = np.ascontiguousarray(raw)
    dist = np.ascontiguousarray(dist, dtype=raw.dtype)
    theta = np.ascontiguousarray(theta, dtype=raw.dtype)
    alpha = np.ascontiguousarray(alpha, dtype=raw.dtype)
    grad_alpha = np.ascontiguousarray(grad_alpha, dtype=raw.dtype)
    return _active.monotonic_weights_backward(
        raw, dist, theta, alpha, grad_alpha, bool(additive)
    )


_env_choice = os.environ.get("AKT_KERNELS", "").strip().lower()
if _env_choice:
    use_backend(_env_choice)
elif "native" in _BACKENDS:
    use_backend("native")
