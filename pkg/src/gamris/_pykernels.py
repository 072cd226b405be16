"""Pure NumPy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one-to-one and are used when the compiled
extension is unavailable (or ``GAMRIS_PURE_PYTHON=1`` is set).
"""
from __future__ import annotations

import numpy as np

_SQRT3_2 = np.sqrt(3.0) / 2.0
TIE_REL = 1e-12


def pair_errors(A: np.ndarray) -> np.ndarray:
    """Rank-one projection error of every column pair of ``A``.

    Entry ``(i, j)`` is the smaller eigenvalue of the 2x2 Gram matrix of
    columns ``i`` and ``j``, computed as ``det / lambda_max`` with the
    determinant expanded by Cauchy-Binet so it never goes negative.
    """
    A = np.asarray(A, dtype=complex)
    tau, m = A.shape
    norms = np.einsum("ij,ij->j", A.conj(), A).real
    gram = A.conj().T @ A
    det = np.zeros((m, m))
    for k in range(tau):
        for l in range(k + 1, tau):
            outer = np.multiply.outer(A[k], A[l])
            minor = outer - outer.T
            det += minor.real**2 + minor.imag**2
    half = 0.5 * (norms[:, None] + norms[None, :])
    diff = 0.5 * (norms[:, None] - norms[None, :])
    lam = half + np.sqrt(diff * diff + np.abs(gram) ** 2)
    err = np.divide(det, lam, out=np.zeros_like(det), where=lam > 0)
    # rounding-level errors are snapped to zero so ties resolve by index
    err[err <= TIE_REL * lam] = 0.0
    return err


def best_pair(A: np.ndarray) -> tuple[int, int, float]:
    """Column pair ``(i, j)``, ``i < j``, with the least projection error.

    Ties resolve to the lexicographically smallest ``(i, j)``.
    """
    m = A.shape[1]
    if m < 2:
        raise ValueError("need at least two columns")
    err = pair_errors(A)
    err[np.tril_indices(m)] = np.inf
    flat = int(np.argmin(err))
    i, j = divmod(flat, m)
    return i, j, float(err[i, j])


def hex_points(ks: np.ndarray, counts=None) -> tuple[np.ndarray, np.ndarray]:
    """All integer solutions of ``z1^2 + z1 z2 + z2^2 = k`` for each ``k`` in ``ks``.

    ``counts`` is accepted for signature parity with the compiled kernel,
    which uses it to size its output; here memory is bounded by chunking.

    Solutions are emitted grouped by ``k`` (in input order), then by ascending
    ``z1``, the ``+sqrt`` root before the ``-sqrt`` root.
    """
    ks = np.asarray(ks, dtype=np.int64)
    out1, out2 = [], []
    if ks.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    chunk = max(1, 4_000_000 // (2 * int(np.ceil(2 * np.sqrt(ks.max() / 3.0))) + 3))
    for start in range(0, ks.size, chunk):
        kk = ks[start:start + chunk]
        bound = int(np.ceil(2.0 * np.sqrt(kk.max() / 3.0))) + 1
        z1 = np.arange(-bound, bound + 1, dtype=np.int64)
        disc = 4 * kk[:, None] - 3 * z1[None, :] ** 2
        ok = disc >= 0
        s = np.zeros_like(disc)
        s[ok] = np.rint(np.sqrt(disc[ok].astype(float))).astype(np.int64)
        ok &= s * s == disc
        kidx, zidx = np.nonzero(ok)
        zz = z1[zidx]
        ss = s[kidx, zidx]
        plus = (-zz + ss) // 2
        minus = (-zz - ss) // 2
        # interleave (+, -) per solution, dropping the duplicate when s == 0
        p1 = np.stack([zz, zz], axis=1).ravel()
        p2 = np.stack([plus, minus], axis=1).ravel()
        keep = np.stack([np.ones_like(ss, bool), ss != 0], axis=1).ravel()
        out1.append(p1[keep])
        out2.append(p2[keep])
    return np.concatenate(out1), np.concatenate(out2)


def hex_nearest(y: np.ndarray, index_grid: np.ndarray, z1_min: int, z2_min: int) -> np.ndarray:
    """Map lattice-unit samples to constellation indices via the nearest lattice point.

    ``index_grid[z1 - z1_min, z2 - z2_min]`` holds the constellation index of
    lattice point ``(z1, z2)`` or ``-1``.  Returns ``-1`` where the nearest
    lattice point is not a constellation member.
    """
    y = np.asarray(y, dtype=complex)
    v = y.imag / _SQRT3_2
    u = y.real - 0.5 * v
    u0 = np.floor(u)
    v0 = np.floor(v)
    best_d = np.full(y.shape, np.inf)
    best1 = np.zeros(y.shape, np.int64)
    best2 = np.zeros(y.shape, np.int64)
    for du in (0, 1):
        for dv in (0, 1):
            c1 = u0 + du
            c2 = v0 + dv
            dx = y.real - (c1 + 0.5 * c2)
            dy = y.imag - _SQRT3_2 * c2
            d = dx * dx + dy * dy
            better = d < best_d
            best_d = np.where(better, d, best_d)
            best1 = np.where(better, c1.astype(np.int64), best1)
            best2 = np.where(better, c2.astype(np.int64), best2)
    i1 = best1 - z1_min
    i2 = best2 - z2_min
    inside = (i1 >= 0) & (i1 < index_grid.shape[0]) & (i2 >= 0) & (i2 < index_grid.shape[1])
    out = np.full(y.shape, -1, np.int64)
    out[inside] = index_grid[i1[inside], i2[inside]]
    return out
