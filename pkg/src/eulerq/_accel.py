"""Backend selection for the hot kernels.

Kernels are written in the subset of Python that numba compiles.  With numba
available (and not disabled by ``EULERQ_DISABLE_NUMBA=1``) they are compiled
with ``@njit``; otherwise the same functions run interpreted.  The Euler
engines additionally carry a vectorized numpy path, chosen per call with
``backend="numpy"`` or globally with ``EULERQ_BACKEND=numpy``.
"""

import os

_TRUTHY = {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_DISABLED = os.environ.get("EULERQ_DISABLE_NUMBA", "").lower() in _TRUTHY
HAVE_NUMBA = _numba is not None and not NUMBA_DISABLED

BACKENDS = ("numba", "numpy")


def default_backend():
    env = os.environ.get("EULERQ_BACKEND", "").lower()
    if env:
        if env not in BACKENDS:
            raise ValueError(f"EULERQ_BACKEND must be one of {BACKENDS}, got {env!r}")
        if env == "numba" and not HAVE_NUMBA:
            return "numpy"
        return env
    return "numba" if HAVE_NUMBA else "numpy"


def resolve_backend(backend=None):
    if backend is None:
        return default_backend()
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        return "numpy"
    return backend


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged.

    The returned object always exposes ``py_func`` so callers can force the
    interpreted path.
    """
    if not HAVE_NUMBA:
        func.py_func = func
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def kernel_for(func, backend):
    """Pick the compiled or interpreted variant of a kernel."""
    if resolve_backend(backend) == "numba":
        return func
    return func.py_func
