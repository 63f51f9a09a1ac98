"""Backend selection for the interior-point kernels.

The compiled extension ``sdiqrng._ckernels`` is used when it was built;
otherwise, or when ``SDIQRNG_PURE_PYTHON=1`` is set, the numpy fallback is
used. ``BACKEND`` names the active implementation.
"""

import os
from contextlib import contextmanager

from . import _kernels_py

_force_python = os.environ.get("SDIQRNG_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

schur = _impl.schur
apply_ops = _impl.apply_ops
adjoint = _impl.adjoint


def backends():
    """Map of every importable backend name to its module."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found


@contextmanager
def use_backend(name: str):
    """Temporarily route the solver through backend ``name``."""
    global schur, apply_ops, adjoint, BACKEND
    impl = backends()[name]
    saved = schur, apply_ops, adjoint, BACKEND
    schur, apply_ops, adjoint, BACKEND = impl.schur, impl.apply_ops, impl.adjoint, name
    try:
        yield impl
    finally:
        schur, apply_ops, adjoint, BACKEND = saved
