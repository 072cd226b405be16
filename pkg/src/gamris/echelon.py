"""Stepped row-echelon factorizations ``Hcheck = B @ C @ P^H``.

``B`` is unitary, ``P`` permutes columns and ``C`` should have two leading
coefficients per row: row ``i`` (0-based) starts at column ``2 i``.  Whatever
``C`` carries left of that pivot is residual; :func:`relative_residual_error`
measures its energy relative to ``||Hcheck||_F^2``.

The combinatorial-pairing (CP) factorization picks, at every step, the pair of
residual columns best approximated by one unit direction (the dominant left
singular vector of the pair), takes that direction as the next column of ``B``
and deflates the residual.  QR, best-of-k Haar rotations and Gram-Schmidt on
consecutive columns are provided as baselines.

Indices (pivots, permutations) are 0-based throughout.  ``perm[p]`` is the
original column of ``Hcheck`` that lands at position ``p``, so
``Hcheck @ P == Hcheck[:, perm]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from ._io import complex_to_pairs, pairs_to_complex
from .corrchan import EquivalentChannel
from .errors import DegeneratePairError, InputError

__all__ = [
    "Method",
    "EchelonDecomposition",
    "PairChoice",
    "target_pivots",
    "pair_residual",
    "cp_decompose",
    "qr_decompose",
    "random_rotation_decompose",
    "gram_schmidt_decompose",
    "relative_residual_error",
    "haar_unitary",
    "decompose",
    "decomposition_to_json",
    "decomposition_from_json",
    "pair_invocation_count",
]

ZERO_COLUMN_REL = 1e-14
COMPLETION_SEED = 0x5EED


class Method(str, Enum):
    CP = "cp"
    QR = "qr"
    RANDOM_ROTATION = "random_rotation"
    GRAM_SCHMIDT = "gram_schmidt"


@dataclass(eq=False)
class EchelonDecomposition:
    B: np.ndarray
    perm: np.ndarray
    C: np.ndarray
    pivots: tuple
    method: Method
    rre: float
    Hcheck: np.ndarray | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def tau(self) -> int:
        return self.C.shape[0]

    @property
    def n_check(self) -> int:
        return self.C.shape[1]

    @property
    def P(self) -> np.ndarray:
        """Permutation matrix with ``Hcheck @ P == Hcheck[:, perm]``."""
        P = np.zeros((self.n_check, self.n_check))
        P[self.perm, np.arange(self.n_check)] = 1.0
        return P

    def reconstruct(self) -> np.ndarray:
        """``B @ C @ P^H`` in the original column order."""
        out = np.empty_like(self.C)
        out[:, self.perm] = self.B @ self.C
        return out

    @classmethod
    def from_factors(cls, B, C, perm=None, pivots=None, method=Method.CP, meta=None) -> "EchelonDecomposition":
        """Assemble a decomposition from known factors (e.g. a synthetic stepped channel)."""
        B = np.asarray(B, dtype=complex)
        C = np.asarray(C, dtype=complex)
        tau, n = C.shape
        perm = np.arange(n) if perm is None else np.asarray(perm, dtype=np.int64)
        pivots = target_pivots(n, tau) if pivots is None else tuple(int(p) for p in pivots)
        dec = cls(B=B, perm=perm, C=C, pivots=pivots, method=Method(method), rre=0.0, meta=dict(meta or {}))
        dec.Hcheck = dec.reconstruct()
        dec.rre = relative_residual_error(dec)
        return dec


@dataclass(frozen=True, eq=False)
class PairChoice:
    i: int
    j: int
    basis: np.ndarray
    error: float


def target_pivots(n_check: int, tau: int) -> tuple:
    """First-coefficient column of every row of the stepped target form.

    With ``n_check >= 2 tau - 1`` every row starts two columns after the one
    above (``0, 2, 4, ...``).  With fewer columns only the first
    ``n_check - tau`` rows get two coefficients and the rest get one, which is
    the split that keeps the last row nonempty.
    """
    if not 1 <= tau <= n_check:
        raise InputError(f"need 1 <= tau <= n_check, got tau={tau}, n_check={n_check}")
    paired = min(tau - 1, n_check - tau)
    return tuple(2 * i if i < paired else paired + i for i in range(tau))


def pair_invocation_count(n_check: int, tau: int) -> int:
    """Pair evaluations CP performs when two columns leave per step."""
    return sum(math.comb(n_check - 2 * t, 2) for t in range(tau) if n_check - 2 * t >= 2)


def _as_matrix(H) -> np.ndarray:
    if isinstance(H, EquivalentChannel):
        H = H.Hcheck
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise InputError(f"expected a nonempty 2-D matrix, got shape {H.shape}")
    if H.shape[0] > H.shape[1]:
        raise InputError(f"tau={H.shape[0]} exceeds n_check={H.shape[1]}")
    if not np.all(np.isfinite(H)):
        raise InputError("matrix has non-finite entries")
    return H


def _gram_2x2(a1, a2):
    a = float(np.vdot(a1, a1).real)
    d = float(np.vdot(a2, a2).real)
    b = complex(np.vdot(a1, a2))
    outer = np.multiply.outer(a1, a2)
    det = float(np.sum(np.abs(np.triu(outer - outer.T, 1)) ** 2))
    return a, d, b, det


def pair_residual(a1, a2) -> PairChoice:
    """Best single direction for two vectors and the energy it leaves behind.

    The direction is the dominant eigenvector of the 2x2 Gram matrix of
    ``[a1, a2]`` mapped back through ``[a1, a2]`` and normalized; the error is
    the other eigenvalue, i.e. ``||a1||^2 + ||a2||^2 - lambda_max``.
    """
    a1 = np.asarray(a1, dtype=complex).ravel()
    a2 = np.asarray(a2, dtype=complex).ravel()
    if a1.shape != a2.shape:
        raise InputError("vectors must have the same length")
    a, d, b, det = _gram_2x2(a1, a2)
    if a == 0.0 and d == 0.0:
        raise DegeneratePairError("both vectors are zero")
    half, diff = 0.5 * (a + d), 0.5 * (a - d)
    lam = half + math.sqrt(diff * diff + abs(b) ** 2)
    v1 = np.array([b, lam - a])
    v2 = np.array([lam - d, b.conjugate()])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    if np.linalg.norm(v) == 0.0:
        # repeated eigenvalue: every direction in the span is optimal
        v = np.array([1.0, 0.0]) if a > 0 else np.array([0.0, 1.0])
    w = v[0] * a1 + v[1] * a2
    if not np.linalg.norm(w) > 0:
        # Gram entries underflowed; fall back to the longer input direction
        w = a1 if np.linalg.norm(a1) >= np.linalg.norm(a2) else a2
    basis = w / np.linalg.norm(w)
    return PairChoice(i=0, j=1, basis=basis, error=max(det / lam, 0.0))


def _orthonormalize(b, basis):
    for _ in range(2):
        for q in basis:
            b = b - q * np.vdot(q, b)
    return b / np.linalg.norm(b)


def _deflate(R, basis):
    Bm = np.column_stack(basis)
    R = R - Bm @ (Bm.conj().T @ R)
    return R - Bm @ (Bm.conj().T @ R)


def _complete_basis(basis, tau):
    if len(basis) == tau:
        return np.column_stack(basis)
    rng = np.random.default_rng(COMPLETION_SEED)
    k = len(basis)
    X = (rng.standard_normal((tau, tau - k)) + 1j * rng.standard_normal((tau, tau - k))) / math.sqrt(2)
    if k:
        Bm = np.column_stack(basis)
        for _ in range(2):
            X = X - Bm @ (Bm.conj().T @ X)
    Q, _ = np.linalg.qr(X)
    return np.column_stack(basis + [Q[:, i] for i in range(tau - k)])


def _finish(H, B, order, remaining, step_starts, method, meta):
    tau, n = H.shape
    perm = np.asarray(list(order) + list(remaining), dtype=np.int64)
    pivots = list(step_starts) + [min(len(order), n - 1)] * (tau - len(step_starts))
    C = B.conj().T @ H[:, perm]
    dec = EchelonDecomposition(B=B, perm=perm, C=C, pivots=tuple(pivots), method=method, rre=0.0, Hcheck=H, meta=meta)
    dec.rre = relative_residual_error(dec)
    return dec


def _wants_pair(t, tau, n):
    paired = min(tau - 1, n - tau)
    return t < paired or (t == tau - 1 and paired == tau - 1)


def cp_decompose(Hcheck, *, kernel=None) -> EchelonDecomposition:
    """Combinatorial-pairing factorization of an equivalent channel.

    At step ``t`` every unordered pair of remaining residual columns is scored
    by its rank-one projection error; the least-error pair (ties to the
    lexicographically smallest original indices) supplies basis vector ``t``,
    moves to positions ``2t, 2t+1`` (larger ``|c_t|`` first) and leaves the
    pool, and the residual is deflated along the new direction.  Each new row
    is phased so its first coefficient is real and positive.

    Parameters
    ----------
    Hcheck : EquivalentChannel or array_like
        ``tau x n_check`` matrix with independent rows.
    kernel : module, optional
        Backend providing ``best_pair``; defaults to :mod:`gamris.kernels`.

    Returns
    -------
    EchelonDecomposition
        ``meta["pair_evaluations"]`` counts scored pairs and
        ``meta["step_errors"]`` the per-step projection errors.
    """
    H = _as_matrix(Hcheck)
    best_pair = (kernel or kernels).best_pair
    tau, n = H.shape
    zero_tol = ZERO_COLUMN_REL * np.linalg.norm(H)
    R = H.copy()
    remaining = list(range(n))
    basis, order, step_starts, step_errors = [], [], [], []
    evaluations = 0
    excluded = set()
    for t in range(tau):
        norms = np.linalg.norm(R[:, remaining], axis=0) if remaining else np.zeros(0)
        active = [c for c, nv in zip(remaining, norms) if nv >= zero_tol]
        excluded.update(c for c, nv in zip(remaining, norms) if nv < zero_tol)
        if not active:
            break
        if _wants_pair(t, tau, n) and len(active) >= 2:
            sub = R[:, active]
            i, j, _ = best_pair(sub)
            evaluations += len(active) * (len(active) - 1) // 2
            choice = pair_residual(sub[:, i], sub[:, j])
            cols = [active[i], active[j]]
            b, err = choice.basis, choice.error
        else:
            # single column: take the strongest residual direction
            c = max(active, key=lambda col: (np.linalg.norm(R[:, col]), -col))
            cols = [c]
            b, err = R[:, c], 0.0
        b = _orthonormalize(b, basis)
        coeff = np.array([np.vdot(b, H[:, c]) for c in cols])
        if len(cols) == 2 and abs(coeff[1]) > abs(coeff[0]):
            cols.reverse()
            coeff = coeff[::-1]
        if coeff[0] != 0:
            b = b * (coeff[0] / abs(coeff[0]))
        basis.append(b)
        step_starts.append(len(order))
        step_errors.append(float(err))
        order.extend(cols)
        for c in cols:
            remaining.remove(c)
        R = _deflate(R, basis)
    B = _complete_basis(basis, tau)
    meta = {
        "pair_evaluations": evaluations,
        "step_errors": step_errors,
        "excluded_columns": sorted(excluded),
        "backend": getattr(kernel or kernels, "BACKEND", getattr(kernel, "__name__", "custom")),
    }
    return _finish(H, B, order, remaining, step_starts, Method.CP, meta)


def qr_decompose(Hcheck) -> EchelonDecomposition:
    """QR factorization with the diagonal of ``C`` made real and positive."""
    H = _as_matrix(Hcheck)
    tau, n = H.shape
    Q, R = np.linalg.qr(H)
    diag = np.diagonal(R)
    mag = np.abs(diag)
    phase = np.where(mag > 0, diag / np.where(mag > 0, mag, 1.0), 1.0)
    B = Q * phase[None, :]
    C = phase.conj()[:, None] * R
    C[np.arange(tau), np.arange(tau)] = np.abs(C[np.arange(tau), np.arange(tau)])
    pivots = tuple(range(tau))
    dec = EchelonDecomposition(B=B, perm=np.arange(n), C=C, pivots=pivots, method=Method.QR, rre=0.0, Hcheck=H)
    dec.rre = relative_residual_error(dec)
    return dec


def haar_unitary(dim: int, rng=None, size=None) -> np.ndarray:
    """Haar-distributed unitary matrices (QR of complex Gaussians, R-diagonal phase fixed).

    Each matrix consumes ``2 * dim^2`` normals: real block, then imaginary block.
    """
    rng = np.random.default_rng(rng)
    shape = (1 if size is None else int(size), 2, dim, dim)
    X = rng.standard_normal(shape)
    Z = (X[:, 0] + 1j * X[:, 1]) / math.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    Q = Q * (d / np.abs(d))[:, None, :]
    return Q[0] if size is None else Q


def _place_columns(C_batch, pivots, placement):
    """Greedy column placement for a batch of coefficient matrices.

    Returns the chosen column index arrays per row and the residual energy.
    """
    K, tau, n = C_batch.shape
    E = np.abs(C_batch) ** 2
    # below[:, t, :] = energy of rows t+1.. in each column
    below = np.cumsum(E[:, ::-1, :], axis=1)[:, ::-1, :]
    below = np.concatenate([below[:, 1:, :], np.zeros((K, 1, n))], axis=1)
    used = np.zeros((K, n), dtype=bool)
    residual = np.zeros(K)
    rows = np.arange(K)[:, None]
    chosen = []
    for t in range(tau - 1):
        width = pivots[t + 1] - pivots[t]
        score = below[:, t, :].copy() if placement == "energy" else -E[:, t, :]
        score[used] = np.inf
        idx = np.argpartition(score, width - 1, axis=1)[:, :width] if width < n else np.argsort(score, axis=1)
        # larger |c_t| first inside the row
        mag = np.take_along_axis(E[:, t, :], idx, axis=1)
        idx = np.take_along_axis(idx, np.argsort(-mag, axis=1, kind="stable"), axis=1)
        residual += np.take_along_axis(below[:, t, :], idx, axis=1).sum(axis=1)
        used[rows, idx] = True
        chosen.append(idx)
    return chosen, residual


def random_rotation_decompose(Hcheck, trials: int = 10000, seed=None, *, placement: str = "magnitude",
                              chunk: int = 512) -> EchelonDecomposition:
    """Best of ``trials`` Haar-random rotations, scored by the stepped residual.

    For each candidate ``B`` the columns of ``B^H Hcheck`` are placed greedily
    row by row: ``placement="magnitude"`` puts the largest-magnitude unused
    entries of a row at its pivot slots, ``placement="energy"`` instead picks
    the unused columns with the least energy in the rows below.
    """
    H = _as_matrix(Hcheck)
    trials = int(trials)
    if trials < 1:
        raise InputError(f"trials must be at least 1, got {trials}")
    if placement not in ("magnitude", "energy"):
        raise InputError(f"unknown placement {placement!r}")
    tau, n = H.shape
    pivots = target_pivots(n, tau)
    rng = np.random.default_rng(seed)
    best_val, best_B, best_cols = math.inf, None, None
    for start in range(0, trials, chunk):
        K = min(chunk, trials - start)
        Bs = haar_unitary(tau, rng, size=K)
        Cs = np.conj(np.swapaxes(Bs, 1, 2)) @ H
        chosen, residual = _place_columns(Cs, pivots, placement)
        k = int(np.argmin(residual))
        if residual[k] < best_val:
            best_val = float(residual[k])
            best_B = Bs[k]
            best_cols = [int(c) for idx in chosen for c in idx[k]]
    lead = set(best_cols)
    rest = [c for c in range(n) if c not in lead]
    meta = {"trials": trials, "placement": placement}
    dec = EchelonDecomposition(B=best_B, perm=np.asarray(best_cols + rest, dtype=np.int64),
                               C=best_B.conj().T @ H[:, best_cols + rest], pivots=pivots,
                               method=Method.RANDOM_ROTATION, rre=0.0, Hcheck=H, meta=meta)
    dec.rre = relative_residual_error(dec)
    return dec


def gram_schmidt_decompose(Hcheck) -> EchelonDecomposition:
    """Gram-Schmidt on the columns in their original order, two columns per step.

    Step ``t`` normalizes the first remaining residual column into basis
    vector ``t`` and pairs it with the next remaining column; residual columns
    that have vanished are skipped and moved to the end (``meta["skipped"]``).
    """
    H = _as_matrix(Hcheck)
    tau, n = H.shape
    zero_tol = ZERO_COLUMN_REL * np.linalg.norm(H)
    R = H.copy()
    remaining = list(range(n))
    basis, order, step_starts, skipped = [], [], [], []
    for t in range(tau):
        while remaining and np.linalg.norm(R[:, remaining[0]]) < zero_tol:
            skipped.append(remaining.pop(0))
        if not remaining:
            break
        c = remaining.pop(0)
        cols = [c]
        if _wants_pair(t, tau, n) and remaining:
            cols.append(remaining.pop(0))
        b = _orthonormalize(R[:, c], basis)
        coeff = np.vdot(b, H[:, c])
        if coeff != 0:
            b = b * (coeff / abs(coeff))
        basis.append(b)
        step_starts.append(len(order))
        order.extend(cols)
        R = _deflate(R, basis)
    B = _complete_basis(basis, tau)
    return _finish(H, B, order, remaining + skipped, step_starts, Method.GRAM_SCHMIDT, {"skipped": skipped})


def relative_residual_error(dec, pivots=None) -> float:
    """Energy left of the pivots, divided by the total energy.

    ``dec`` is an :class:`EchelonDecomposition` (its own pivots are used) or a
    raw coefficient matrix, for which row ``i`` defaults to pivot ``2 i``.
    Squared moduli are used for complex entries.
    """
    if isinstance(dec, EchelonDecomposition):
        C = dec.C
        pivots = dec.pivots if pivots is None else pivots
    else:
        C = np.atleast_2d(np.asarray(dec, dtype=complex))
    tau, n = C.shape
    if pivots is None:
        pivots = [2 * i for i in range(tau)]
    total = float(np.sum(np.abs(C) ** 2))
    if total == 0.0:
        raise InputError("coefficient matrix has zero Frobenius norm")
    resid = sum(float(np.sum(np.abs(C[i, : min(int(p), n)]) ** 2)) for i, p in enumerate(pivots))
    return min(max(resid / total, 0.0), 1.0)


def decompose(Hcheck, method, **kwargs) -> EchelonDecomposition:
    method = Method(method)
    if method is Method.CP:
        return cp_decompose(Hcheck, **kwargs)
    if method is Method.QR:
        return qr_decompose(Hcheck)
    if method is Method.RANDOM_ROTATION:
        return random_rotation_decompose(Hcheck, **kwargs)
    return gram_schmidt_decompose(Hcheck)


def decomposition_to_json(dec: EchelonDecomposition) -> dict:
    return {
        "method": dec.method.value,
        "tau": dec.tau,
        "n_check": dec.n_check,
        "B": complex_to_pairs(dec.B),
        "P": [int(p) for p in dec.perm],
        "C": complex_to_pairs(dec.C),
        "pivots": [int(p) for p in dec.pivots],
        "rre": dec.rre,
    }


def decomposition_from_json(obj) -> EchelonDecomposition:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        tau, n = int(obj["tau"]), int(obj["n_check"])
        B = pairs_to_complex(obj["B"], (tau, tau))
        C = pairs_to_complex(obj["C"], (tau, n))
        return EchelonDecomposition.from_factors(B, C, perm=obj["P"], pivots=obj["pivots"], method=obj["method"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed decomposition dump: {exc}") from exc
