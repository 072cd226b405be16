# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, INFINITY

cnp.import_array()

cdef double SQRT3_2 = 0.8660254037844386
# errors this small relative to lambda_max are rounding noise; snap them so ties resolve by index
cdef double TIE_REL = 1e-12


def best_pair(A):
    """Column pair ``(i, j)``, ``i < j``, with the least rank-one projection error."""
    cdef double complex[:, ::1] At = np.ascontiguousarray(np.asarray(A, dtype=complex).T)
    cdef Py_ssize_t m = At.shape[0], tau = At.shape[1]
    cdef double[::1] norms = np.empty(m)
    cdef Py_ssize_t i, j, k, l, bi = 0, bj = 1
    cdef double br, bim, det, mr, mi, half, diff, lam, err, best = INFINITY, acc
    cdef double xr_k, xi_k, xr_l, xi_l, yr_k, yi_k, yr_l, yi_l
    if m < 2:
        raise ValueError("need at least two columns")
    for i in range(m):
        acc = 0.0
        for k in range(tau):
            acc += At[i, k].real * At[i, k].real + At[i, k].imag * At[i, k].imag
        norms[i] = acc
    for i in range(m):
        for j in range(i + 1, m):
            br = 0.0
            bim = 0.0
            det = 0.0
            for k in range(tau):
                xr_k = At[i, k].real
                xi_k = At[i, k].imag
                yr_k = At[j, k].real
                yi_k = At[j, k].imag
                # conj(x_k) * y_k
                br += xr_k * yr_k + xi_k * yi_k
                bim += xr_k * yi_k - xi_k * yr_k
                for l in range(k + 1, tau):
                    xr_l = At[i, l].real
                    xi_l = At[i, l].imag
                    yr_l = At[j, l].real
                    yi_l = At[j, l].imag
                    # x_k y_l - x_l y_k
                    mr = (xr_k * yr_l - xi_k * yi_l) - (xr_l * yr_k - xi_l * yi_k)
                    mi = (xr_k * yi_l + xi_k * yr_l) - (xr_l * yi_k + xi_l * yr_k)
                    det += mr * mr + mi * mi
            half = 0.5 * (norms[i] + norms[j])
            diff = 0.5 * (norms[i] - norms[j])
            lam = half + sqrt(diff * diff + br * br + bim * bim)
            err = det / lam if lam > 0.0 else 0.0
            if err <= TIE_REL * lam:
                err = 0.0
            if err < best:
                best = err
                bi = i
                bj = j
    return int(bi), int(bj), float(best)


cdef inline long long _isqrt(long long n):
    cdef long long s = <long long>sqrt(<double>n)
    while s * s > n:
        s -= 1
    while (s + 1) * (s + 1) <= n:
        s += 1
    return s


def hex_points(ks, counts=None):
    """All integer solutions of ``z1^2 + z1 z2 + z2^2 = k`` for each ``k`` in ``ks``.

    ``counts`` (solutions per ``k``, e.g. from the theta series) sizes the
    output exactly; without it a loose per-shell bound is used.
    """
    cdef cnp.int64_t[::1] kv = np.ascontiguousarray(ks, dtype=np.int64)
    cdef Py_ssize_t nk = kv.shape[0], t, cap = 0, pos = 0
    cdef long long k, z1, disc, s, bound
    if counts is not None:
        cap = int(np.sum(counts))
    else:
        for t in range(nk):
            # at most two roots per z1
            cap += 2 * (2 * (<long long>(2.0 * sqrt(kv[t] / 3.0)) + 2) + 1)
    out1_arr = np.empty(cap, np.int64)
    out2_arr = np.empty(cap, np.int64)
    cdef cnp.int64_t[::1] out1 = out1_arr
    cdef cnp.int64_t[::1] out2 = out2_arr
    for t in range(nk):
        k = kv[t]
        bound = <long long>(2.0 * sqrt(k / 3.0)) + 2
        for z1 in range(-bound, bound + 1):
            disc = 4 * k - 3 * z1 * z1
            if disc < 0:
                continue
            s = _isqrt(disc)
            if s * s != disc:
                continue
            if pos + (2 if s != 0 else 1) > cap:
                raise ValueError("more solutions than the supplied counts allow")
            out1[pos] = z1
            out2[pos] = (-z1 + s) // 2
            pos += 1
            if s != 0:
                out1[pos] = z1
                out2[pos] = (-z1 - s) // 2
                pos += 1
    return out1_arr[:pos].copy(), out2_arr[:pos].copy()


def hex_nearest(y, index_grid, long long z1_min, long long z2_min):
    """Constellation index of the nearest lattice point, ``-1`` if it is not a member."""
    cdef double complex[::1] yv = np.ascontiguousarray(y, dtype=complex).ravel()
    cdef cnp.int64_t[:, ::1] grid = np.ascontiguousarray(index_grid, dtype=np.int64)
    cdef Py_ssize_t n = yv.shape[0], t
    cdef Py_ssize_t g1 = grid.shape[0], g2 = grid.shape[1]
    out_arr = np.empty(n, np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef double yr, yi, u, v, u0, v0, dx, dy, d, best
    cdef long long c1, c2, b1 = 0, b2 = 0, i1, i2
    cdef int du, dv
    for t in range(n):
        yr = yv[t].real
        yi = yv[t].imag
        v = yi / SQRT3_2
        u = yr - 0.5 * v
        u0 = floor(u)
        v0 = floor(v)
        best = INFINITY
        for du in range(2):
            for dv in range(2):
                c1 = <long long>u0 + du
                c2 = <long long>v0 + dv
                dx = yr - (c1 + 0.5 * c2)
                dy = yi - SQRT3_2 * c2
                d = dx * dx + dy * dy
                if d < best:
                    best = d
                    b1 = c1
                    b2 = c2
        i1 = b1 - z1_min
        i2 = b2 - z2_min
        if 0 <= i1 < g1 and 0 <= i2 < g2:
            out[t] = grid[i1, i2]
        else:
            out[t] = -1
    return out_arr.reshape(np.shape(y))
