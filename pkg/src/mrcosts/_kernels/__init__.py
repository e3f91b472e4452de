"""Fit-kernel backend selection.

The hot per-window solver has two interchangeable implementations: a
compiled Cython extension and a pure NumPy fallback. The compiled one is
used when importable; set ``MRCOSTS_KERNEL=python`` or ``=cython`` to force
a backend (forcing ``cython`` raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import reference
from .reference import (
    STATUS_BREAKDOWN,
    STATUS_GRAD,
    STATUS_MAX_ITERS,
    STATUS_STALLED,
    STATUS_STEP,
    exp_basis,
    linear_coeffs,
    varpro_jacobian,
)

_forced = os.environ.get("MRCOSTS_KERNEL", "").strip().lower()

if _forced == "python":
    _impl = None
elif _forced in ("", "cython"):
    try:
        from . import _varpro_cy as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = None
else:
    raise RuntimeError(
        f"MRCOSTS_KERNEL must be 'cython' or 'python', got {_forced!r}"
    )

if _impl is not None:
    BACKEND = "cython"
    varpro_lm = _impl.varpro_lm
else:
    BACKEND = "python"
    varpro_lm = reference.varpro_lm

__all__ = [
    "BACKEND",
    "STATUS_BREAKDOWN",
    "STATUS_GRAD",
    "STATUS_MAX_ITERS",
    "STATUS_STALLED",
    "STATUS_STEP",
    "exp_basis",
    "linear_coeffs",
    "varpro_jacobian",
    "varpro_lm",
    "reference",
]
