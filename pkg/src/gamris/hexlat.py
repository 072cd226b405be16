"""Hexagonal-lattice annular constellations.

Two phase-modulated terms ``c1 exp(j t1) + c2 exp(j t2)`` reach exactly the
closed annulus ``||c1| - |c2|| <= |s| <= |c1| + |c2|``.  Constellations are the
points of the scaled hexagonal lattice ``eta * {z1 + z2 exp(j pi/3)}`` inside
that annulus, enumerated shell by shell: the number of lattice points of squared
norm ``k`` follows from the factorization of ``k``, and each nonempty shell is
solved as the Diophantine equation ``z1^2 + z1 z2 + z2^2 = k``.

A point is mapped back to its two phases with the law of cosines; the
nonnegative arccos branch is always used so transmitter and receiver agree.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from ._io import fmt
from .errors import GeometryError, InputError, SizeError

__all__ = [
    "Annulus",
    "AnnularConstellation",
    "PskConstellation",
    "PhasePair",
    "signed_min_magnitude",
    "modulus_range",
    "annulus_from_pair",
    "hex_count",
    "hex_count_range",
    "hex_count_oracle",
    "constellation_cardinality",
    "enumerate_annulus",
    "decompose_point",
    "decompose_points",
    "build_psk",
    "scale_for_cardinality",
    "write_constellation_csv",
]

OMEGA = complex(0.5, math.sqrt(3.0) / 2.0)  # exp(j pi / 3)
TWO_PI = 2.0 * math.pi
BOUNDARY_EPS = 1e-12
DECOMPOSE_TOL = 1e-9
_MAX_SIGNS = 30
# unit vectors of the lattice in (z1, z2) coordinates, one of each +/- pair
_NEIGHBOURS = ((1, 0), (0, 1), (-1, 1))


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float
    c1: complex = 0j
    c2: complex = 0j

    def contains(self, s, tol: float = BOUNDARY_EPS):
        rho = np.abs(s)
        slack = tol * max(self.r_out, 1.0)
        return (rho >= self.r_in - slack) & (rho <= self.r_out + slack)

    @property
    def area(self) -> float:
        return math.pi * (self.r_out**2 - self.r_in**2)


@dataclass(frozen=True)
class PhasePair:
    theta1: float
    theta2: float


def _wrap(theta):
    out = np.mod(theta, TWO_PI)
    return np.where(out >= TWO_PI, 0.0, out)


@dataclass(eq=False)
class AnnularConstellation:
    """Scaled hexagonal-lattice points inside an annulus.

    ``points`` are sorted by squared lattice norm ``k``, then by angle in
    ``[0, 2 pi)``; ``z`` holds the integer lattice coordinates of each point.
    """

    annulus: Annulus
    eta: float
    z: np.ndarray
    points: np.ndarray
    med: float

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def cardinality(self) -> int:
        return len(self)

    @property
    def k(self) -> np.ndarray:
        z1, z2 = self.z[:, 0], self.z[:, 1]
        return z1 * z1 + z1 * z2 + z2 * z2

    @property
    def bits(self) -> float:
        return math.log2(len(self)) if len(self) > 0 else 0.0

    @cached_property
    def phase_table(self) -> np.ndarray:
        """``(N, 2)`` canonical phase pairs for every point."""
        t1, t2 = decompose_points(self.points, self.annulus.c1, self.annulus.c2)
        return np.column_stack([t1, t2])

    @cached_property
    def _lookup(self):
        if len(self) == 0:
            return np.full((1, 1), -1, np.int64), 0, 0
        z1_min, z2_min = self.z.min(axis=0)
        z1_max, z2_max = self.z.max(axis=0)
        grid = np.full((z1_max - z1_min + 1, z2_max - z2_min + 1), -1, np.int64)
        grid[self.z[:, 0] - z1_min, self.z[:, 1] - z2_min] = np.arange(len(self))
        return grid, int(z1_min), int(z2_min)

    @cached_property
    def _tree(self):
        return cKDTree(np.column_stack([self.points.real, self.points.imag]))

    def demap(self, samples) -> np.ndarray:
        """Nearest-point (ML under AWGN) decisions for samples in the constellation's own scale."""
        samples = np.asarray(samples, dtype=complex)
        if len(self) <= 1:
            return np.zeros(samples.shape, np.int64)
        grid, z1_min, z2_min = self._lookup
        idx = kernels.hex_nearest(samples / self.eta, grid, z1_min, z2_min)
        miss = idx < 0
        if np.any(miss):
            ys = samples[miss]
            _, found = self._tree.query(np.column_stack([ys.real, ys.imag]))
            idx[miss] = found
        return idx


@dataclass(eq=False)
class PskConstellation:
    radius: float
    order: int
    med_deficient: bool = False
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.points = self.radius * np.exp(1j * TWO_PI * np.arange(self.order) / self.order)

    def __len__(self) -> int:
        return int(self.order)

    @property
    def cardinality(self) -> int:
        return int(self.order)

    @property
    def med(self) -> float:
        return 2.0 * self.radius * math.sin(math.pi / self.order)

    @property
    def bits(self) -> float:
        return math.log2(self.order)

    def demap(self, samples) -> np.ndarray:
        """Nearest-phase decisions (ML for equal-energy points)."""
        ang = np.angle(np.asarray(samples, dtype=complex))
        return np.mod(np.rint(ang * self.order / TWO_PI).astype(np.int64), self.order)


def modulus_range(p) -> tuple[float, float]:
    """``(r_min, r_max)``: the best signed cancellation and the full sum of ``|p_i|``.

    ``r_min`` is found by exhaustive search over sign patterns with the first
    sign fixed (global sign symmetry); at most 30 terms are accepted.
    """
    mags = np.abs(np.atleast_1d(np.asarray(p, dtype=complex)))
    m = mags.size
    if m < 1:
        raise InputError("need at least one coefficient")
    if m > _MAX_SIGNS:
        raise SizeError(f"exhaustive sign search limited to {_MAX_SIGNS} terms, got {m}")
    r_max = float(mags.sum())
    if m == 1:
        return float(mags[0]), r_max
    rest = mags[1:]
    best = math.inf
    n_patterns = 1 << (m - 1)
    chunk = 1 << 18
    bits = np.arange(m - 1, dtype=np.int64)
    for start in range(0, n_patterns, chunk):
        codes = np.arange(start, min(start + chunk, n_patterns), dtype=np.int64)
        signs = 1.0 - 2.0 * ((codes[:, None] >> bits[None, :]) & 1)
        vals = np.abs(mags[0] + signs @ rest)
        best = min(best, float(vals.min()))
    return best, r_max


def signed_min_magnitude(p) -> float:
    """Smallest ``|sum eps_i |p_i||`` over signs ``eps_i in {-1, +1}``."""
    return modulus_range(p)[0]


def annulus_from_pair(c1: complex, c2: complex) -> Annulus:
    a1, a2 = abs(complex(c1)), abs(complex(c2))
    if a1 == 0.0 and a2 == 0.0:
        raise InputError("both coefficients are zero")
    return Annulus(r_in=abs(a1 - a2), r_out=a1 + a2, c1=complex(c1), c2=complex(c2))


def _chi(p: int, nu: int) -> int:
    if p == 3:
        return 1
    if p % 3 == 1:
        return nu + 1
    return 0 if nu % 2 else 1


def hex_count(k: int) -> int:
    """Number of hexagonal lattice points with squared norm ``k`` (theta-series coefficient)."""
    k = int(k)
    if k < 0:
        raise InputError(f"k must be nonnegative, got {k}")
    if k == 0:
        return 1
    prod = 1
    rem = k
    p = 2
    while p * p <= rem:
        if rem % p == 0:
            nu = 0
            while rem % p == 0:
                rem //= p
                nu += 1
            prod *= _chi(p, nu)
            if prod == 0:
                return 0
        p += 1 if p == 2 else 2
    if rem > 1:
        prod *= _chi(rem, 1)
    return 6 * prod


_SPF = np.zeros(2, np.int64)


def _spf_table(n: int) -> np.ndarray:
    """Smallest-prime-factor sieve up to ``n`` (cached, grown on demand)."""
    global _SPF
    if _SPF.size > n:
        return _SPF
    size = max(n + 1, 2 * _SPF.size)
    spf = np.arange(size, dtype=np.int64)
    for p in range(2, math.isqrt(size - 1) + 1):
        if spf[p] == p:
            block = spf[p * p::p]
            mask = block == np.arange(p * p, size, p)
            block[mask] = p
    _SPF = spf
    return spf


def hex_count_range(k_lo: int, k_hi: int) -> np.ndarray:
    """``hex_count(k)`` for every ``k`` in ``[k_lo, k_hi]`` using a shared factor sieve."""
    k_lo, k_hi = max(int(k_lo), 0), int(k_hi)
    if k_hi < k_lo:
        return np.zeros(0, np.int64)
    spf = _spf_table(k_hi).tolist()
    out = []
    for k in range(k_lo, k_hi + 1):
        if k == 0:
            out.append(1)
            continue
        prod = 1
        rem = k
        while rem > 1 and prod:
            p = spf[rem]
            nu = 0
            while rem % p == 0:
                rem //= p
                nu += 1
            prod *= _chi(p, nu)
        out.append(6 * prod)
    return np.asarray(out, dtype=np.int64)


def hex_count_oracle(k: int) -> int:
    """Brute-force count of integer pairs with ``z1^2 + z1 z2 + z2^2 = k``.

    Independent of the factorization formula; used to check it.
    """
    k = int(k)
    if k < 0:
        raise InputError(f"k must be nonnegative, got {k}")
    # |z1|, |z2| <= 2 sqrt(k / 3) for any solution
    b = math.isqrt(4 * k // 3) + 1
    z = np.arange(-b, b + 1, dtype=np.int64)
    q = z[:, None] ** 2 + z[:, None] * z[None, :] + z[None, :] ** 2
    return int(np.count_nonzero(q == k))


def _k_range(annulus: Annulus, eta: float) -> tuple[int, int]:
    x_in = (annulus.r_in / eta) ** 2
    x_out = (annulus.r_out / eta) ** 2
    k_lo = math.ceil(x_in - BOUNDARY_EPS * max(1.0, x_in))
    k_hi = math.floor(x_out + BOUNDARY_EPS * max(1.0, x_out))
    return max(k_lo, 0), k_hi


def constellation_cardinality(annulus: Annulus, eta: float) -> int:
    """Size of ``annulus  intersect  eta * H`` without enumerating the points."""
    if eta <= 0:
        raise InputError(f"eta must be positive, got {eta}")
    k_lo, k_hi = _k_range(annulus, eta)
    return int(hex_count_range(k_lo, k_hi).sum())


def _min_distance(z: np.ndarray, points: np.ndarray, eta: float) -> float:
    if points.size < 2:
        return math.inf
    members = set(map(tuple, z.tolist()))
    for z1, z2 in z.tolist():
        for d1, d2 in _NEIGHBOURS:
            if (z1 + d1, z2 + d2) in members:
                return float(eta)
    tree = cKDTree(np.column_stack([points.real, points.imag]))
    dist, _ = tree.query(np.column_stack([points.real, points.imag]), k=2)
    return float(dist[:, 1].min())


def enumerate_annulus(annulus: Annulus, eta: float) -> AnnularConstellation:
    """All points of ``eta * H`` in the closed annulus.

    Squared lattice norms ``k`` run from ``ceil((r_in/eta)^2)`` to
    ``floor((r_out/eta)^2)`` (with a ``1e-12`` relative boundary allowance);
    shells with ``hex_count(k) == 0`` are skipped and the rest are solved as
    Diophantine equations.
    """
    if not eta > 0:
        raise InputError(f"eta must be positive, got {eta}")
    k_lo, k_hi = _k_range(annulus, eta)
    counts = hex_count_range(k_lo, k_hi)
    nonzero = counts > 0
    ks = np.arange(k_lo, k_hi + 1, dtype=np.int64)[nonzero]
    z1, z2 = kernels.hex_points(ks, counts[nonzero])
    if z1.size != int(counts.sum()):
        raise RuntimeError(f"enumerated {z1.size} points but the theta series predicts {int(counts.sum())}")
    pts = eta * (z1 + z2 * OMEGA)
    kk = z1 * z1 + z1 * z2 + z2 * z2
    order = np.lexsort((_wrap(np.angle(pts)), kk))
    z = np.column_stack([z1[order], z2[order]]).astype(np.int64)
    pts = pts[order]
    return AnnularConstellation(annulus=annulus, eta=float(eta), z=z, points=pts, med=_min_distance(z, pts, eta))


def decompose_points(s, c1: complex, c2: complex, tol: float = DECOMPOSE_TOL):
    """Vectorized :func:`decompose_point`; returns ``(theta1, theta2)`` arrays."""
    s = np.asarray(s, dtype=complex)
    c1, c2 = complex(c1), complex(c2)
    a1, a2 = abs(c1), abs(c2)
    if a1 == 0.0 or a2 == 0.0:
        raise InputError("both coefficients must be nonzero")
    rho = np.abs(s)
    r_in, r_out = abs(a1 - a2), a1 + a2
    slack = tol * np.maximum(rho, r_out)
    bad = (rho < r_in - slack) | (rho > r_out + slack)
    if np.any(bad):
        worst = float(np.max(rho[bad]))
        raise GeometryError(f"|s| = {worst:.6g} outside annulus [{r_in:.6g}, {r_out:.6g}]")
    cos_delta = np.clip((rho**2 - a1**2 - a2**2) / (2.0 * a1 * a2), -1.0, 1.0)
    delta = np.arccos(cos_delta)
    phi = math.atan2(c2.imag, c2.real) - math.atan2(c1.imag, c1.real)
    combo = c1 + c2 * np.exp(1j * (delta - phi))
    theta1 = np.angle(s * np.conj(combo))
    theta2 = delta + theta1 - phi
    return _wrap(theta1), _wrap(theta2)


def decompose_point(s: complex, c1: complex, c2: complex) -> PhasePair:
    """Split a constellation point into the two phases that synthesize it.

    Returns phases with ``c1 exp(j theta1) + c2 exp(j theta2) == s``.  The
    phase difference is the nonnegative arccos branch of the law of cosines;
    rounding at the annulus boundary is absorbed by clamping its argument.
    """
    t1, t2 = decompose_points(np.array([s]), c1, c2)
    return PhasePair(float(t1[0]), float(t2[0]))


def build_psk(radius: float, target_med: float) -> PskConstellation:
    """Largest PSK order on a circle of ``radius`` whose MED is at least ``target_med``.

    When even BPSK is too dense the result is BPSK flagged ``med_deficient``.
    """
    if not radius > 0 or not target_med > 0:
        raise InputError(f"radius and target_med must be positive, got {radius}, {target_med}")

    def ok(m):
        return 2.0 * radius * math.sin(math.pi / m) >= target_med * (1.0 - 1e-12)

    if not ok(2):
        return PskConstellation(radius=float(radius), order=2, med_deficient=True)
    m = max(2, int(math.pi / math.asin(min(1.0, target_med / (2.0 * radius)))))
    while ok(m + 1):
        m += 1
    while m > 2 and not ok(m):
        m -= 1
    return PskConstellation(radius=float(radius), order=m)


def scale_for_cardinality(annulus: Annulus, target_points: int, max_k: int = 10**7) -> float:
    """Largest lattice scale whose annular constellation holds at least ``target_points``.

    The count only grows when a new shell ``k`` crosses the outer radius, i.e.
    at ``eta = r_out / sqrt(k)``; those breakpoints are scanned in order of
    decreasing ``eta``, so the first that meets the target is the answer.
    """
    target_points = int(target_points)
    if target_points < 1:
        raise InputError(f"target must be at least 1, got {target_points}")
    if not annulus.r_out > 0:
        raise InputError("annulus has zero outer radius")
    ratio2 = (annulus.r_in / annulus.r_out) ** 2
    chunk = 1024
    table = np.zeros(0, np.int64)
    cum = np.zeros(1, np.int64)  # cum[i] = sum of counts for k < i
    for k in range(0, max_k + 1):
        if k >= table.size:
            table = np.concatenate([table, hex_count_range(table.size, table.size + chunk - 1)])
            cum = np.concatenate([[0], np.cumsum(table)])
            chunk *= 2
        if k == 0:
            # the origin is the only point for eta > r_out
            if annulus.r_in == 0.0 and target_points == 1:
                return 2.0 * annulus.r_out
            continue
        if table[k] == 0:
            continue
        x_in = k * ratio2
        k_lo = max(math.ceil(x_in - BOUNDARY_EPS * max(1.0, x_in)), 0)
        if k_lo > k:
            continue
        if cum[k + 1] - cum[k_lo] >= target_points:
            return annulus.r_out / math.sqrt(k)
    raise InputError(f"no lattice scale reaches {target_points} points within {max_k} shells")


def write_constellation_csv(path, constellation) -> None:
    """Write a constellation dump (annular: ``k, z1, z2, re, im, modulus``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(constellation, AnnularConstellation):
            w.writerow(["k", "z1", "z2", "re", "im", "modulus"])
            for (z1, z2), s in zip(constellation.z.tolist(), constellation.points):
                k = z1 * z1 + z1 * z2 + z2 * z2
                w.writerow([k, z1, z2, fmt(s.real), fmt(s.imag), fmt(abs(s))])
        else:
            w.writerow(["index", "re", "im", "modulus", "phase"])
            for i, s in enumerate(constellation.points):
                w.writerow([i, fmt(s.real), fmt(s.imag), fmt(abs(s)), fmt(float(_wrap(np.angle(s))))])
