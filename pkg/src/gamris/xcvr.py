"""GAM and QR-SIC transceivers over the equivalent channel.

A decomposition ``Hcheck = B C P^H`` turns the channel into ``tau`` rows.
Rows ``0 .. tau-2`` carry RIS data: a row whose pivot spans two columns
drives an annular constellation through its coefficient pair, a row with a
single pivot column drives PSK on a circle of radius ``|c|``.  The last row
phase-aligns every remaining column and is used only for beamforming.

The receiver rotates by ``B^H`` and decodes rows bottom to top, cancelling
the contribution of already-decided columns.  Entries left of each pivot
(the decomposition residual) cannot be cancelled and act as interference.

Conventions
-----------
* ``snr`` is linear, ``10 ** (snr_db / 10)``; the active input is ``x = 1``.
* Noise is unit-variance circularly-symmetric complex Gaussian drawn directly
  in the ``tau``-dimensional reduced domain.
* ``med_target`` is a received-domain distance: constellations are built at
  lattice scale ``eta = med_target / sqrt(snr_design)``.
* Monte Carlo batch seeds are ``SeedSequence(seed, spawn_key=(snr_index,
  realization, batch))``; each batch draws symbol indices subchannel by
  subchannel, then the real and the imaginary noise blocks.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, special

from ._io import fmt
from .echelon import EchelonDecomposition, Method
from .errors import InputError
from .hexlat import (
    AnnularConstellation,
    PskConstellation,
    annulus_from_pair,
    build_psk,
    enumerate_annulus,
)

__all__ = [
    "Subchannel",
    "SubchannelPlan",
    "SymbolFrame",
    "SubchannelStats",
    "SerReport",
    "SerConfig",
    "DofSummary",
    "plan_subchannels",
    "modulate",
    "transmit_and_receive",
    "sic_demodulate",
    "monte_carlo_ser",
    "dof_summary",
    "ser_union_bound_annular",
    "ser_psk_reference",
    "med_for_target_ser",
    "db_to_linear",
    "write_ser_csv",
    "DEFAULT_BATCH",
]

TWO_PI = 2.0 * math.pi
DEFAULT_BATCH = 1 << 16
SER_COLUMNS = (
    "snr_db", "subchannel", "mode", "cardinality", "mod_order_bits",
    "trials", "errors", "ser_empirical", "ser_theory", "med_received",
)
# coefficient magnitudes below this fraction of the pair's larger one make the annulus degenerate
_PAIR_DEGENERATE = 1e-12


def db_to_linear(snr_db: float) -> float:
    return float(10.0 ** (float(snr_db) / 10.0))


def _q(x):
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def ser_union_bound_annular(med_received: float) -> float:
    """Nearest-neighbour union bound ``6 Q(med / sqrt(2))``, clamped to ``[0, 1]``."""
    if med_received < 0 or not np.isfinite(med_received):
        raise InputError(f"MED must be a nonnegative finite distance, got {med_received}")
    return float(min(1.0, 6.0 * _q(med_received / math.sqrt(2.0))))


def med_for_target_ser(target: float = 1e-3) -> float:
    """Received MED at which :func:`ser_union_bound_annular` equals ``target``."""
    if not 0.0 < target < 1.0:
        raise InputError(f"target SER must lie in (0, 1), got {target}")
    # 6 Q(m / sqrt 2) = 3 erfc(m / 2)
    return float(2.0 * special.erfcinv(target / 3.0))


def ser_psk_reference(M: int, radius: float, snr_linear: float) -> float:
    """Exact M-PSK symbol error probability via the single finite integral.

    ``P_e = (1/pi) * int_0^{pi - pi/M} exp(-gamma sin^2(pi/M) / sin^2(t)) dt``
    with ``gamma = snr_linear * radius^2`` and unit-variance complex noise.
    """
    M = int(M)
    if M < 2:
        raise InputError(f"PSK order must be at least 2, got {M}")
    if radius < 0 or snr_linear < 0:
        raise InputError("radius and snr must be nonnegative")
    gamma = float(snr_linear) * float(radius) ** 2
    s2 = math.sin(math.pi / M) ** 2
    if gamma == 0.0:
        return (M - 1) / M

    def f(t):
        st = math.sin(t)
        return 0.0 if st == 0.0 else math.exp(-gamma * s2 / (st * st))

    upper = math.pi - math.pi / M
    # the integrand peaks at pi/2; splitting there keeps quad on the mass
    points = [math.pi / 2] if upper > math.pi / 2 else None
    val, _ = integrate.quad(f, 0.0, upper, epsabs=1e-13, epsrel=1e-10, limit=200, points=points)
    return float(min(max(val / math.pi, 0.0), 1.0))


class DofSummary(NamedTuple):
    dof_gam: float
    dof_qr_sic: float
    dof_max: float


def dof_summary(n_check: int, tau: int) -> DofSummary:
    """Degrees of freedom of GAM, QR-SIC and the upper bound.

    GAM reaches ``tau`` when ``n_check >= 2 tau - 1`` and ``(n_check + 1)/2``
    otherwise; QR-SIC gets ``1 + (tau - 1)/2``.
    """
    n_check, tau = int(n_check), int(tau)
    if not 1 <= tau <= n_check:
        raise InputError(f"need 1 <= tau <= n_check, got tau={tau}, n_check={n_check}")
    dmax = min(float(tau), (n_check + 1) / 2.0)
    gam = float(tau) if n_check >= 2 * tau - 1 else (n_check + 1) / 2.0
    return DofSummary(dof_gam=gam, dof_qr_sic=1.0 + (tau - 1) / 2.0, dof_max=dmax)


@dataclass(eq=False)
class Subchannel:
    """One phase-modulated row of the decomposition.

    ``columns`` are positions in the permuted order (columns of ``C``).
    ``mode`` is ``"annular"``, ``"circle"`` or ``"rate_zero"`` (one fixed
    symbol because the required MED leaves fewer than two points).
    """

    index: int
    mode: str
    columns: tuple
    coefficients: tuple
    constellation: AnnularConstellation | PskConstellation | None = None

    @property
    def cardinality(self) -> int:
        return 1 if self.constellation is None else len(self.constellation)

    @property
    def bits(self) -> float:
        return 0.0 if self.cardinality <= 1 else math.log2(self.cardinality)

    @cached_property
    def phase_table(self) -> np.ndarray:
        """``(cardinality, len(columns))`` phases realizing every symbol."""
        if self.mode == "annular":
            return self.constellation.phase_table
        if self.mode == "circle":
            M = self.constellation.order
            base = TWO_PI * np.arange(M) / M - np.angle(self.coefficients[0])
            return np.mod(base, TWO_PI)[:, None]
        return np.zeros((1, len(self.columns)))

    @cached_property
    def points(self) -> np.ndarray:
        """Noise-free transmit-domain value of this row for every symbol."""
        c = np.asarray(self.coefficients, dtype=complex)
        return np.exp(1j * self.phase_table) @ c

    @property
    def med(self) -> float:
        return math.nan if self.mode == "rate_zero" else float(self.constellation.med)

    def demap(self, samples) -> np.ndarray:
        samples = np.asarray(samples, dtype=complex)
        if self.mode == "rate_zero":
            return np.zeros(samples.shape, np.int64)
        return self.constellation.demap(samples)

    def ser_theory(self, snr_linear: float) -> float:
        if self.mode == "annular":
            return ser_union_bound_annular(math.sqrt(snr_linear) * self.med)
        if self.mode == "circle":
            return ser_psk_reference(self.constellation.order, self.constellation.radius, snr_linear)
        return 0.0


@dataclass(eq=False)
class SubchannelPlan:
    decomposition: EchelonDecomposition
    snr_db: float
    med_target: float
    subchannels: list
    beam_columns: tuple
    beam_phases: np.ndarray

    @property
    def eta(self) -> float:
        return self.med_target / math.sqrt(db_to_linear(self.snr_db))

    @property
    def scheme(self) -> str:
        return "qr_sic" if self.decomposition.method is Method.QR else "gam"

    @property
    def tau(self) -> int:
        return self.decomposition.tau

    @property
    def beam_gain(self) -> float:
        C = self.decomposition.C
        return float(np.sum(np.abs(C[-1, list(self.beam_columns)])))

    @property
    def total_bits(self) -> float:
        return float(sum(s.bits for s in self.subchannels))

    @property
    def n_annular(self) -> int:
        return sum(1 for s in self.subchannels if s.mode == "annular")

    @cached_property
    def beam_vector(self) -> np.ndarray:
        """Per-row contribution of the beamforming columns, ``(tau,)``."""
        C = self.decomposition.C
        cols = list(self.beam_columns)
        return C[:, cols] @ np.exp(1j * self.beam_phases)

    @cached_property
    def row_tables(self) -> list:
        """For subchannel ``s``: ``(cardinality, tau)`` contribution of each symbol to every row."""
        C = self.decomposition.C
        out = []
        for sub in self.subchannels:
            out.append(np.exp(1j * sub.phase_table) @ C[:, list(sub.columns)].T)
        return out


@dataclass(eq=False)
class SymbolFrame:
    """One channel use: symbol per subchannel and the resulting RIS phases.

    ``phases`` are in the permuted column order (``Hcheck @ P``);
    :meth:`original_phases` maps them back to RIS element order.
    """

    indices: tuple
    phases: np.ndarray
    perm: np.ndarray = field(repr=False)
    x: complex = 1.0 + 0.0j

    def original_phases(self) -> np.ndarray:
        out = np.empty_like(self.phases)
        out[self.perm] = self.phases
        return out


def _make_subchannel(index, cols, coeffs, eta, med_target_tx):
    if len(cols) == 2:
        c1, c2 = coeffs
        big = max(abs(c1), abs(c2))
        if big == 0.0 or min(abs(c1), abs(c2)) <= _PAIR_DEGENERATE * big:
            return Subchannel(index, "rate_zero", cols, coeffs)
        const = enumerate_annulus(annulus_from_pair(c1, c2), eta)
        if len(const) < 2:
            return Subchannel(index, "rate_zero", cols, coeffs)
        return Subchannel(index, "annular", cols, coeffs, const)
    r = abs(coeffs[0])
    if r == 0.0:
        return Subchannel(index, "rate_zero", cols, coeffs)
    psk = build_psk(r, med_target_tx)
    if psk.med_deficient:
        return Subchannel(index, "rate_zero", cols, coeffs)
    return Subchannel(index, "circle", cols, coeffs, psk)


def plan_subchannels(dec: EchelonDecomposition, snr_db: float, med_target: float) -> SubchannelPlan:
    """Build constellations for every data row and fix the beamforming phases.

    Parameters
    ----------
    dec : EchelonDecomposition
        Any method; a row whose pivot spans two columns becomes annular,
        a row with one pivot column becomes PSK.
    snr_db : float
        Design SNR.
    med_target : float
        Minimum distance wanted at the receiver; every constellation uses
        the transmit-domain distance ``med_target / sqrt(snr)``.
    """
    if not med_target > 0:
        raise InputError(f"med_target must be positive, got {med_target}")
    snr = db_to_linear(snr_db)
    eta = med_target / math.sqrt(snr)
    C = dec.C
    tau, n = C.shape
    piv = list(dec.pivots)
    if piv[0] != 0:
        raise InputError(f"first pivot must be column 0, got {piv[0]}")
    subs = []
    for i in range(tau - 1):
        cols = tuple(range(piv[i], piv[i + 1]))
        if not 1 <= len(cols) <= 2:
            raise InputError(f"row {i} spans {len(cols)} pivot columns; expected 1 or 2")
        subs.append(_make_subchannel(i, cols, tuple(complex(C[i, k]) for k in cols), eta, eta))
    beam_cols = tuple(range(piv[-1], n))
    beam_phases = np.mod(-np.angle(C[-1, list(beam_cols)]), TWO_PI)
    return SubchannelPlan(dec, float(snr_db), float(med_target), subs, beam_cols, beam_phases)


def modulate(plan: SubchannelPlan, symbol_indices: Sequence[int]) -> SymbolFrame:
    """Assemble the RIS phase vector for one set of subchannel symbols."""
    idx = tuple(int(v) for v in symbol_indices)
    if len(idx) != len(plan.subchannels):
        raise InputError(f"expected {len(plan.subchannels)} symbol indices, got {len(idx)}")
    phases = np.zeros(plan.decomposition.n_check)
    for sub, m in zip(plan.subchannels, idx):
        if not 0 <= m < sub.cardinality:
            raise InputError(f"symbol {m} out of range for subchannel {sub.index} (cardinality {sub.cardinality})")
        phases[list(sub.columns)] = sub.phase_table[m]
    phases[list(plan.beam_columns)] = plan.beam_phases
    return SymbolFrame(indices=idx, phases=phases, perm=plan.decomposition.perm)


def _complex_noise(rng, shape):
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / math.sqrt(2.0)


def transmit_and_receive(plan: SubchannelPlan, frame: SymbolFrame, snr_db: float, seed=None,
                         noise: bool = True) -> np.ndarray:
    """Rotated channel output ``B^H (sqrt(snr) Hcheck exp(j theta) x + z)``."""
    dec = plan.decomposition
    H = dec.Hcheck if dec.Hcheck is not None else dec.reconstruct()
    y = math.sqrt(db_to_linear(snr_db)) * (H @ np.exp(1j * frame.original_phases())) * frame.x
    if noise:
        y = y + _complex_noise(np.random.default_rng(seed), dec.tau)
    return dec.B.conj().T @ y


def _sic_batch(plan: SubchannelPlan, Y: np.ndarray, snr_db: float) -> np.ndarray:
    """Bottom-to-top decisions for received rows ``Y`` of shape ``(K, tau)``."""
    amp = math.sqrt(db_to_linear(snr_db))
    K = Y.shape[0]
    S = len(plan.subchannels)
    known = np.broadcast_to(plan.beam_vector, (K, plan.tau)).copy()
    out = np.zeros((K, S), np.int64)
    for s in range(S - 1, -1, -1):
        sub = plan.subchannels[s]
        residue = Y[:, s] / amp - known[:, s]
        dec = sub.demap(residue)
        out[:, s] = dec
        known += plan.row_tables[s][dec]
    return out


def sic_demodulate(plan: SubchannelPlan, received, snr_db: float) -> tuple:
    """Decode every data subchannel of one received vector, last row first."""
    Y = np.asarray(received, dtype=complex).reshape(1, -1)
    if Y.shape[1] != plan.tau:
        raise InputError(f"received vector has length {Y.shape[1]}, expected {plan.tau}")
    return tuple(int(v) for v in _sic_batch(plan, Y, snr_db)[0])


@dataclass
class SubchannelStats:
    subchannel: int
    mode: str
    cardinality: int | float
    mod_order_bits: float
    trials: int
    errors: int
    ser_theory: float
    med_received: float

    @property
    def ser_empirical(self) -> float:
        return self.errors / self.trials if self.trials else math.nan


@dataclass
class SerReport:
    snr_db: float
    scheme: str
    seed: int
    frames: int
    realizations: int
    subchannels: list

    @property
    def total_bits(self) -> float:
        return float(sum(s.mod_order_bits for s in self.subchannels))

    @property
    def trials(self) -> int:
        return int(sum(s.trials for s in self.subchannels))

    @property
    def errors(self) -> int:
        return int(sum(s.errors for s in self.subchannels))

    def rows(self) -> list:
        rows = []
        for st in self.subchannels:
            rows.append([self.snr_db, st.subchannel, st.mode, st.cardinality, st.mod_order_bits, st.trials,
                         st.errors, st.ser_empirical, st.ser_theory, st.med_received])
        cards = [s.cardinality for s in self.subchannels]
        card = math.prod(cards) if all(isinstance(c, int) for c in cards) else float(np.prod(cards))
        theory = float(np.mean([s.ser_theory for s in self.subchannels])) if self.subchannels else math.nan
        rows.append([self.snr_db, "aggregate", "", card, self.total_bits, self.trials, self.errors,
                     self.errors / self.trials if self.trials else math.nan, theory, None])
        return rows


@dataclass
class SerConfig:
    snr_db: Sequence[float]
    frames: int
    seed: int = 0
    batch_size: int = DEFAULT_BATCH
    threads: int = 1
    noise: bool = True


def _mean_or_int(values):
    return int(values[0]) if len(set(values)) == 1 else float(np.mean(values))


def _batch_errors(plan, snr_db, n_frames, seed_seq, noise):
    rng = np.random.default_rng(seed_seq)
    amp = math.sqrt(db_to_linear(snr_db))
    idx = np.column_stack([rng.integers(0, sub.cardinality, n_frames) for sub in plan.subchannels]) \
        if plan.subchannels else np.zeros((n_frames, 0), np.int64)
    clean = np.broadcast_to(plan.beam_vector, (n_frames, plan.tau)).copy()
    for s, table in enumerate(plan.row_tables):
        clean += table[idx[:, s]]
    Y = amp * clean
    if noise:
        Y += _complex_noise(rng, (n_frames, plan.tau)) @ plan.decomposition.B.conj()
    dec = _sic_batch(plan, Y, snr_db)
    return np.count_nonzero(dec != idx, axis=0)


def monte_carlo_ser(plans, config: SerConfig) -> list:
    """Symbol error rates over an SNR grid.

    ``plans`` is one plan (single-channel mode) or a sequence of plans, one
    per channel realization (averaged mode); counts are pooled per
    subchannel index across realizations.  Returns one :class:`SerReport`
    per SNR point.
    """
    if isinstance(plans, SubchannelPlan):
        plans = [plans]
    plans = list(plans)
    if not plans:
        raise InputError("need at least one plan")
    frames = int(config.frames)
    if frames < 0:
        raise InputError(f"frame count must be nonnegative, got {frames}")
    batch = max(1, int(config.batch_size))
    reports = []
    n_sub = max(len(p.subchannels) for p in plans)
    for si, snr_db in enumerate(config.snr_db):
        snr = db_to_linear(snr_db)
        jobs = []
        for r, plan in enumerate(plans):
            for b, start in enumerate(range(0, frames, batch)):
                ss = np.random.SeedSequence(int(config.seed), spawn_key=(si, r, b))
                jobs.append((r, plan, min(batch, frames - start), ss))

        def run(job):
            r, plan, k, ss = job
            return r, _batch_errors(plan, snr_db, k, ss, config.noise)

        if int(config.threads) > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=int(config.threads)) as pool:
                results = list(pool.map(run, jobs))
        else:
            results = [run(j) for j in jobs]
        errors = np.zeros((len(plans), n_sub), np.int64)
        for r, errs in results:
            errors[r, : errs.size] += errs
        stats = []
        for s in range(n_sub):
            owners = [(r, p.subchannels[s]) for r, p in enumerate(plans) if s < len(p.subchannels)]
            subs = [sub for _, sub in owners]
            modes = {sub.mode for sub in subs}
            meds = [math.sqrt(snr) * sub.med for sub in subs if sub.mode != "rate_zero"]
            stats.append(SubchannelStats(
                subchannel=s,
                mode=modes.pop() if len(modes) == 1 else "mixed",
                cardinality=_mean_or_int([sub.cardinality for sub in subs]),
                mod_order_bits=float(np.mean([sub.bits for sub in subs])),
                trials=frames * len(subs),
                errors=int(sum(errors[r, s] for r, _ in owners)),
                ser_theory=float(np.mean([sub.ser_theory(snr) for sub in subs])),
                med_received=float(np.mean(meds)) if meds else math.nan,
            ))
        reports.append(SerReport(snr_db=float(snr_db), scheme=plans[0].scheme, seed=int(config.seed),
                                 frames=frames, realizations=len(plans), subchannels=stats))
    return reports


def write_ser_csv(path, reports: Sequence[SerReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SER_COLUMNS)
        for rep in reports:
            for row in rep.rows():
                w.writerow([fmt(v) for v in row])
