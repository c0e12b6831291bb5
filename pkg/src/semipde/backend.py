"""Numerical backend selection.

The time-stepping and adjoint kernels exist twice: a numba-compiled version
(kernels_numba) and a vectorized pure-numpy version (kernels_numpy) with
identical signatures.  The environment variable ``SEMIPDE_BACKEND`` picks one:

* ``numba`` (default when numba imports) - jit-compiled hot loops
* ``numpy`` - pure numpy fallback, no compilation

``semipde.cli bench-backends`` times both on the same workload.
"""

import os

_VALID = ("numba", "numpy")


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except Exception:
        return False
    return True


def backend_name() -> str:
    """Resolve the active backend name from SEMIPDE_BACKEND."""
    raw = os.environ.get("SEMIPDE_BACKEND", "").strip().lower()
    if raw in _VALID:
        if raw == "numba" and not _numba_available():
            raise RuntimeError("SEMIPDE_BACKEND=numba but numba is not importable")
        return raw
    if raw not in ("", "auto"):
        raise ValueError(f"SEMIPDE_BACKEND must be one of {_VALID}, got {raw!r}")
    return "numba" if _numba_available() else "numpy"


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` (default: resolved backend)."""
    name = backend_name() if name is None else name
    if name == "numba":
        from . import kernels_numba
        return kernels_numba
    if name == "numpy":
        from . import kernels_numpy
        return kernels_numpy
    raise ValueError(f"unknown backend {name!r}")
