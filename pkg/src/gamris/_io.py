"""Helpers for the JSON/CSV wire formats (complex numbers as ``[re, im]``)."""
from __future__ import annotations

import numpy as np

from .errors import InputError


def complex_to_pairs(values) -> list:
    """Flatten a complex array row-major into a list of ``[re, im]`` pairs."""
    arr = np.asarray(values, dtype=complex).ravel()
    return [[float(z.real), float(z.imag)] for z in arr]


def pairs_to_complex(pairs, shape=None) -> np.ndarray:
    """Inverse of :func:`complex_to_pairs`.

    Accepts either a flat list of pairs (reshaped to ``shape`` when given) or a
    nested list of rows, each a list of pairs.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim < 2 or arr.shape[-1] != 2:
        raise InputError("complex values must be encoded as [re, im] pairs")
    out = arr[..., 0] + 1j * arr[..., 1]
    if shape is not None:
        if out.size != int(np.prod(shape)):
            raise InputError(f"expected {int(np.prod(shape))} entries for shape {tuple(shape)}, got {out.size}")
        out = out.reshape(shape)
    return out


def fmt(value) -> str:
    """Format a CSV cell so that repeated runs produce identical bytes."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)
