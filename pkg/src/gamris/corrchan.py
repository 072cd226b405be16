"""Spatially correlated RIS channels and their equivalent reduced model.

A planar RIS with ``n = n_x * n_y`` elements on a square grid sees isotropic
scattering, so the element correlation is ``sinc(2 * distance / wavelength)``.
Channels are drawn as ``mu * F @ w`` with ``F @ F.T ~= R`` and ``w`` standard
circularly-symmetric complex Gaussian.  :func:`reduce_to_equivalent` folds the
reflected and direct paths into the augmented matrix ``[H diag(g), d]`` and
keeps the scaled right singular subspace, which is the ``tau x (n + 1)``
full-row-rank model everything downstream works with.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ._io import complex_to_pairs, pairs_to_complex
from .errors import DegenerateChannelError, InputError

__all__ = [
    "RisGrid",
    "AttenuationSpec",
    "CorrelationMatrix",
    "ChannelRealization",
    "EquivalentChannel",
    "build_correlation_matrix",
    "sample_channel",
    "reduce_to_equivalent",
    "channel_to_json",
    "channel_from_json",
    "DEFAULT_RANK_TOLERANCE",
]

DEFAULT_RANK_TOLERANCE = 1e-10
EIGEN_CLAMP = 1e-12
_ZERO_FLOOR = 1e-300


@dataclass(frozen=True)
class RisGrid:
    """Rectangular RIS layout; lengths are in wavelengths.

    Element ``k`` sits at column ``k % n_x`` and row ``k // n_x`` (row-major).
    """

    n_x: int
    n_y: int
    spacing: float

    def __post_init__(self):
        if int(self.n_x) < 1 or int(self.n_y) < 1:
            raise InputError(f"grid needs at least one row and column, got {self.n_x}x{self.n_y}")
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise InputError(f"spacing must be a positive finite length, got {self.spacing}")

    @property
    def n(self) -> int:
        return int(self.n_x) * int(self.n_y)

    @property
    def positions(self) -> np.ndarray:
        """``(n, 2)`` array of ``(x, y)`` coordinates in wavelengths."""
        iy, ix = np.divmod(np.arange(self.n), int(self.n_x))
        return np.column_stack([ix * self.spacing, iy * self.spacing]).astype(float)

    @classmethod
    def square_ish(cls, n: int, spacing: float) -> "RisGrid":
        """Most nearly square grid with exactly ``n`` elements."""
        if n < 1:
            raise InputError(f"element count must be positive, got {n}")
        n_x = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
        return cls(n_x=n // n_x, n_y=n_x, spacing=spacing)

    def to_dict(self) -> dict:
        return {"n_x": int(self.n_x), "n_y": int(self.n_y), "spacing": float(self.spacing)}


@dataclass(frozen=True)
class AttenuationSpec:
    """Amplitude attenuation coefficients in dB (``20 log10(mu)``)."""

    mu_los_db: float = -60.0
    mu_rr_db: float = -5.0
    mu_tr_db: float = -5.0

    def __post_init__(self):
        for name in ("mu_los_db", "mu_rr_db", "mu_tr_db"):
            if not np.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")

    @staticmethod
    def linear(db: float) -> float:
        return float(10.0 ** (db / 20.0))

    @property
    def mu_los(self) -> float:
        return self.linear(self.mu_los_db)

    @property
    def mu_rr(self) -> float:
        return self.linear(self.mu_rr_db)

    @property
    def mu_tr(self) -> float:
        return self.linear(self.mu_tr_db)

    def to_dict(self) -> dict:
        return {"mu_los_db": self.mu_los_db, "mu_rr_db": self.mu_rr_db, "mu_tr_db": self.mu_tr_db}


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    R: np.ndarray
    sqrt_factor: np.ndarray
    eigen_floor: float
    grid: RisGrid | None = None

    @property
    def n(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One drop of RIS-receiver gains ``H``, transmitter-RIS gains ``g`` and direct path ``d``."""

    H: np.ndarray
    g: np.ndarray
    d: np.ndarray
    seed: int
    grid: RisGrid
    attenuation: AttenuationSpec

    @property
    def n_r(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    def augmented(self) -> np.ndarray:
        """``[H diag(g), d]`` with the direct path as the last column."""
        return np.column_stack([self.H * self.g[None, :], self.d])


@dataclass(frozen=True, eq=False)
class EquivalentChannel:
    """Reduced channel ``Hcheck = diag(rho) V^H`` of shape ``(tau, n + 1)``."""

    Hcheck: np.ndarray
    singular_values: np.ndarray
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE
    left: np.ndarray | None = field(default=None, repr=False)

    @property
    def tau(self) -> int:
        return self.Hcheck.shape[0]

    @property
    def n_check(self) -> int:
        return self.Hcheck.shape[1]

    @classmethod
    def from_matrix(cls, matrix, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> "EquivalentChannel":
        """Wrap an already-reduced matrix, checking that its rows are independent."""
        M = np.atleast_2d(np.asarray(matrix, dtype=complex))
        if not np.all(np.isfinite(M)):
            raise InputError("matrix has non-finite entries")
        s = np.linalg.svd(M, compute_uv=False)
        if s.size == 0 or s[0] <= _ZERO_FLOOR:
            raise DegenerateChannelError("matrix is numerically zero")
        if s[-1] <= rank_tolerance * s[0] or M.shape[0] > M.shape[1]:
            raise InputError(
                f"matrix rows are not linearly independent (smallest/largest singular value {s[-1] / s[0]:.3e})"
            )
        return cls(Hcheck=M, singular_values=s, rank_tolerance=rank_tolerance)


def build_correlation_matrix(grid: RisGrid) -> CorrelationMatrix:
    """Sinc spatial correlation of a planar array and its clamped square root.

    Parameters
    ----------
    grid : RisGrid
        Element layout; spacing in wavelengths.

    Returns
    -------
    CorrelationMatrix
        ``R`` with ``r_ij = sinc(2 * dist_ij)`` (normalized sinc) and a factor
        ``F`` from the symmetric eigendecomposition with eigenvalues below
        ``1e-12 * lambda_max`` set to zero.
    """
    pos = grid.positions
    if not np.all(np.isfinite(pos)):
        raise InputError("element positions must be finite")
    dist = cdist(pos, pos)
    R = np.sinc(2.0 * dist)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    w, V = np.linalg.eigh(R)
    floor = EIGEN_CLAMP * w[-1]
    w = np.where(w < floor, 0.0, w)
    F = V * np.sqrt(w)[None, :]
    return CorrelationMatrix(R=R, sqrt_factor=F, eigen_floor=float(floor), grid=grid)


def _cn(rng: np.random.Generator, size: int) -> np.ndarray:
    # real parts first, then imaginary parts; each with variance 1/2
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return (re + 1j * im) / np.sqrt(2.0)


def sample_channel(
    grid: RisGrid,
    attenuation: AttenuationSpec,
    n_r: int,
    corr: CorrelationMatrix,
    seed: int,
) -> ChannelRealization:
    """Draw one correlated channel realization.

    Draw order from ``numpy.random.default_rng(seed)`` is fixed: ``h_1, ...,
    h_{n_r}`` (rows of ``H``), then ``g``, then ``d``; each complex vector
    consumes its real parts before its imaginary parts.
    """
    if int(n_r) < 1:
        raise InputError(f"n_R must be at least 1, got {n_r}")
    if corr.n != grid.n:
        raise InputError(f"correlation matrix is {corr.n}x{corr.n} but the grid has {grid.n} elements")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InputError("seed must be an unsigned 64-bit integer")
    rng = np.random.default_rng(seed)
    F = corr.sqrt_factor
    n = grid.n
    H = np.empty((n_r, n), dtype=complex)
    for k in range(n_r):
        H[k] = attenuation.mu_rr * (F @ _cn(rng, n))
    g = attenuation.mu_tr * (F @ _cn(rng, n))
    d = attenuation.mu_los * _cn(rng, n_r)
    return ChannelRealization(H=H, g=g, d=d, seed=seed, grid=grid, attenuation=attenuation)


def reduce_to_equivalent(
    ch: ChannelRealization | np.ndarray,
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE,
) -> EquivalentChannel:
    """Reduce a channel to its full-row-rank equivalent ``diag(rho) V_tau^H``.

    ``ch`` may also be an augmented ``n_R x (n + 1)`` matrix directly.  The
    numerical rank counts singular values above ``rank_tolerance * sigma_1``.
    The left factor ``U_tau`` is kept on the result (``left``) so callers can
    check ``G = U_tau @ Hcheck``.
    """
    G = ch.augmented() if isinstance(ch, ChannelRealization) else np.atleast_2d(np.asarray(ch, dtype=complex))
    if not np.all(np.isfinite(G)):
        raise InputError("channel has non-finite entries")
    U, s, Vh = np.linalg.svd(G, full_matrices=False)
    if s.size == 0 or s[0] <= _ZERO_FLOOR:
        raise DegenerateChannelError("augmented channel matrix is numerically zero")
    tau = int(np.count_nonzero(s > rank_tolerance * s[0]))
    Hcheck = s[:tau, None] * Vh[:tau]
    return EquivalentChannel(
        Hcheck=Hcheck,
        singular_values=s[:tau].copy(),
        rank_tolerance=rank_tolerance,
        left=U[:, :tau],
    )


def channel_to_json(ch: ChannelRealization) -> dict:
    return {
        "n_R": ch.n_r,
        "n": ch.n,
        "grid": ch.grid.to_dict(),
        "attenuation": ch.attenuation.to_dict(),
        "H": complex_to_pairs(ch.H),
        "g": complex_to_pairs(ch.g),
        "d": complex_to_pairs(ch.d),
        "seed": ch.seed,
    }


def channel_from_json(obj: dict | str) -> ChannelRealization:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        n_r, n = int(obj["n_R"]), int(obj["n"])
        grid = RisGrid(**obj["grid"])
        att = AttenuationSpec(**obj.get("attenuation", {}))
        return ChannelRealization(
            H=pairs_to_complex(obj["H"], (n_r, n)),
            g=pairs_to_complex(obj["g"], (n,)),
            d=pairs_to_complex(obj["d"], (n_r,)),
            seed=int(obj["seed"]),
            grid=grid,
            attenuation=att,
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed channel dump: {exc}") from exc
