"""Kernel backend selection.

The compiled extension is preferred when importable; ``FORGETLAB_BACKEND``
overrides the choice (``cython`` or ``python``).  Both backends implement
identical signatures, so everything above this module is backend-agnostic.
"""

import os

from . import _kernels_py

_BACKENDS = {"python": _kernels_py}
try:
    from . import _kernels as _kernels_cy

    _BACKENDS["cython"] = _kernels_cy
except ImportError:  # extension not built; NumPy fallback
    _kernels_cy = None

_forced = os.environ.get("FORGETLAB_BACKEND", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"FORGETLAB_BACKEND={_forced!r} unavailable; "
            f"built backends: {sorted(_BACKENDS)}"
        )
    _active = _BACKENDS[_forced]
else:
    _active = _BACKENDS.get("cython", _kernels_py)


def backend_name():
    """Name of the active kernel backend (``cython`` or ``python``)."""
    return "cython" if _active is _kernels_cy and _kernels_cy is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _active
    return _BACKENDS[name]


def component_logpdfs(points, means):
    return _active.component_logpdfs(points, means)


def mixture_logpdf(points, means, log_weights):
    return _active.mixture_logpdf(points, means, log_weights)


def responsibilities(points, means, log_weights):
    return _active.responsibilities(points, means, log_weights)
