"""Kernel backend selection.

The compiled extension ``_ckernels`` is used when importable; otherwise (or
when ``ROIMPC_PURE_PYTHON=1``) the pure-Python reference ``_pykernels`` is
used. Both expose ``objective``, ``objective_hessian``, ``constraint_values``, ``solve_al`` and
``prey_scan`` with identical signatures.
"""
from __future__ import annotations

import os

from . import _pykernels as python_backend

if os.environ.get("ROIMPC_PURE_PYTHON", "") not in ("", "0"):
    backend = python_backend
    BACKEND = "python"
else:
    try:
        from . import _ckernels as backend  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        backend = python_backend
        BACKEND = "python"


def get_backend(name: str | None = None):
    """Return a kernel module by name (``"cython"``/``"python"``) or the active one."""
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
