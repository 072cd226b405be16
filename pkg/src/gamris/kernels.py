"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise (or when the
environment variable ``GAMRIS_PURE_PYTHON`` is set to a non-empty value other
than ``0``) the NumPy fallbacks are used.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

python = _pykernels

try:
    from . import _ckernels as compiled
except ImportError:  # pragma: no cover - depends on the build
    compiled = None

if compiled is not None and os.environ.get("GAMRIS_PURE_PYTHON", "0") in ("", "0"):
    _impl = compiled
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

best_pair = _impl.best_pair
hex_points = _impl.hex_points
hex_nearest = _impl.hex_nearest

__all__ = ["BACKEND", "best_pair", "hex_points", "hex_nearest", "python", "compiled"]
