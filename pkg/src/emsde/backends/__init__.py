"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: the compiled
Cython extension ``emsde._emcore`` and the pure-Python/numpy fallback in
``numpy_backend``. The compiled one is picked at import when present; the
environment variable ``EMSDE_BACKEND`` (``compiled`` or ``numpy``) forces a
choice and fails loudly if the requested backend is unavailable.

Both expose::

    em_paths(a1, a2, a3, b, bias, x0, tau, dbeta) -> (states, status)
    nll_terms(a1, a2, a3, b, bias, eps, tau, x, dx, identity_cov, want_grad)

Within one build the selection is fixed, which is what the package's
bitwise-reproducibility guarantees are scoped to; across backends results
agree only to reassociation level (~1e-12 relative).
"""

from __future__ import annotations

import os

from emsde.backends import numpy_backend

try:
    from emsde import _emcore as compiled_backend
except ImportError:
    compiled_backend = None

_BACKENDS = {"numpy": numpy_backend}
if compiled_backend is not None:
    _BACKENDS["compiled"] = compiled_backend


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"backend {name!r} not available; choose from {available_backends()}"
        ) from None


_env = os.environ.get("EMSDE_BACKEND")
_active = get_backend(_env) if _env else _BACKENDS.get("compiled", numpy_backend)


def active_backend():
    return _active


def active_backend_name() -> str:
    return _active.name


def set_active_backend(name: str):
    """Switch the process-wide backend (test and benchmark hook)."""
    global _active
    _active = get_backend(name)
    return _active
