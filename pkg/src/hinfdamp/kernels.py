"""Kernel selection: compiled extension when built, numpy otherwise.

Set ``HINFDAMP_PURE_PYTHON=1`` to force the numpy path.
"""
import os

from . import _kernels_py

BACKEND = "python"
sigma_max_modal = _kernels_py.sigma_max_modal

if os.environ.get("HINFDAMP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        sigma_max_modal = _compiled.sigma_max_modal
        BACKEND = "cython"

__all__ = ["BACKEND", "sigma_max_modal"]
