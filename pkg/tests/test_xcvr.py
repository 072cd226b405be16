import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from gamris import xcvr
from gamris.corrchan import AttenuationSpec, RisGrid, build_correlation_matrix, reduce_to_equivalent, sample_channel
from gamris.echelon import EchelonDecomposition, cp_decompose, haar_unitary, qr_decompose
from gamris.errors import InputError
from gamris.xcvr import (
    SerConfig,
    db_to_linear,
    dof_summary,
    med_for_target_ser,
    modulate,
    monte_carlo_ser,
    plan_subchannels,
    ser_psk_reference,
    ser_union_bound_annular,
    sic_demodulate,
    transmit_and_receive,
)
from conftest import crandn, stepped_decomposition

Q = norm.sf


# degrees of freedom

@pytest.mark.parametrize("n,tau,expect", [(7, 3, (3, 2, 3)), (4, 4, (2.5, 2.5, 2.5)), (5, 1, (1, 1, 1)),
                                          (1, 1, (1, 1, 1)), (5, 4, (3, 2.5, 3))])
def test_dof_examples(n, tau, expect):
    assert tuple(dof_summary(n, tau)) == expect


def test_dof_invalid():
    with pytest.raises(InputError):
        dof_summary(3, 4)
    with pytest.raises(InputError):
        dof_summary(3, 0)


@settings(max_examples=200)
@given(st.integers(1, 60), st.integers(1, 60))
def test_dof_ordering(n, tau):
    if tau > n:
        return
    d = dof_summary(n, tau)
    assert d.dof_qr_sic <= d.dof_gam == d.dof_max
    # equal only when every row is square-case or there is nothing to modulate
    assert (d.dof_gam == d.dof_qr_sic) == (tau == n or tau == 1)


# theoretical references

def test_union_bound_values():
    assert ser_union_bound_annular(0.0) == 1.0
    assert ser_union_bound_annular(10.0) < 1e-11
    assert math.isclose(ser_union_bound_annular(3 * math.sqrt(2)), 6 * 1.3498980316301e-3, rel_tol=1e-9)
    with pytest.raises(InputError):
        ser_union_bound_annular(-1)


def test_med_for_target_inverts_bound():
    for t in (1e-2, 1e-3, 1e-6):
        assert math.isclose(ser_union_bound_annular(med_for_target_ser(t)), t, rel_tol=1e-9)


def test_psk_bpsk_closed_form():
    for g in (0.1, 1.0, 4.0, 12.0):
        assert abs(ser_psk_reference(2, 1.0, g) - Q(math.sqrt(2 * g))) < 1e-9


def test_psk_qpsk_closed_form():
    # exact QPSK: 2Q(sqrt(gamma)) - Q(sqrt(gamma))^2; at gamma = 10 this is about 1.565e-3
    for g in (1.0, 10.0, 30.0):
        q = Q(math.sqrt(g))
        assert math.isclose(ser_psk_reference(4, 1.0, g), 2 * q - q * q, rel_tol=1e-8)
    assert math.isclose(ser_psk_reference(4, 1.0, 10.0), 1.5649e-3, rel_tol=1e-3)


def test_psk_zero_snr():
    for M in (2, 3, 8, 64):
        assert math.isclose(ser_psk_reference(M, 1.0, 0.0), (M - 1) / M)


def test_psk_invalid_order():
    with pytest.raises(InputError):
        ser_psk_reference(1, 1.0, 1.0)


@pytest.mark.parametrize("M", [4, 8, 16, 64, 256])
def test_psk_two_q_approximation(M):
    # find gamma where the exact value is around 1e-3 and compare with 2Q(sqrt(2 gamma) sin(pi/M))
    for target in (1e-2, 1e-3, 1e-5):
        lo, hi = 0.0, 1e7
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ser_psk_reference(M, 1.0, mid) > target else (lo, mid)
        approx = 2 * Q(math.sqrt(2 * hi) * math.sin(math.pi / M))
        assert abs(approx / ser_psk_reference(M, 1.0, hi) - 1) < 0.1


def test_psk_reference_monte_carlo(rng):
    M, r, snr = 8, 1.0, 30.0
    sym = rng.integers(0, M, 800000)
    pts = r * np.exp(2j * np.pi * sym / M)
    y = np.sqrt(snr) * pts + crandn(rng, sym.size)
    dec = np.mod(np.rint(np.angle(y) * M / (2 * np.pi)).astype(int), M)
    emp = np.mean(dec != sym)
    # about 2400 errors: 3 sigma is roughly 6 %
    assert abs(emp / ser_psk_reference(M, r, snr) - 1) < 0.065


# planning and modulation

def _channel(n_side=8, n_r=4, seed=0):
    grid = RisGrid(n_side, n_side, 0.125)
    return reduce_to_equivalent(sample_channel(grid, AttenuationSpec(), n_r, build_correlation_matrix(grid), seed))


def test_plan_case_one_all_annular():
    eq = _channel()
    plan = plan_subchannels(cp_decompose(eq), 60.0, 4.0)
    assert len(plan.subchannels) == 3
    assert [s.mode for s in plan.subchannels] == ["annular"] * 3
    assert plan.beam_gain > 0
    assert plan.scheme == "gam"


def test_plan_square_case_all_circle(rng):
    dec = cp_decompose(crandn(rng, 4, 4))
    plan = plan_subchannels(dec, 50.0, 4.0)
    assert plan.n_annular == 0 and [s.mode for s in plan.subchannels] == ["circle"] * 3


def test_plan_case_two_split(rng):
    for tau, n in ((4, 6), (5, 7), (3, 4)):
        plan = plan_subchannels(cp_decompose(crandn(rng, tau, n)), 40.0, 3.0)
        assert plan.n_annular == n - tau
        assert sum(s.mode == "circle" for s in plan.subchannels) == tau - 1 - (n - tau)


def test_plan_qr_is_psk():
    plan = plan_subchannels(qr_decompose(_channel()), 49.0, 5.0)
    assert plan.scheme == "qr_sic"
    assert all(s.mode in ("circle", "rate_zero") for s in plan.subchannels)


def test_plan_rate_zero_when_too_coarse(rng):
    dec = stepped_decomposition(rng, 3, scale=1e-3)
    plan = plan_subchannels(dec, 10.0, 5.0)
    assert all(s.mode == "rate_zero" and s.cardinality == 1 and s.bits == 0 for s in plan.subchannels)
    assert sic_demodulate(plan, transmit_and_receive(plan, modulate(plan, [0, 0]), 10.0, seed=1), 10.0) == (0, 0)


def test_plan_matches_med():
    plan = plan_subchannels(cp_decompose(_channel()), 49.0, 5.0)
    snr = db_to_linear(49.0)
    for s in plan.subchannels:
        if s.mode == "annular":
            # lattice scale is the target; a ring thinner than one lattice step can only spread points further
            assert math.isclose(math.sqrt(snr) * s.constellation.eta, 5.0, rel_tol=1e-9)
        if s.mode != "rate_zero":
            assert math.sqrt(snr) * s.med >= 5.0 * (1 - 1e-9)


def test_plan_rejects_bad_med(rng):
    with pytest.raises(InputError):
        plan_subchannels(stepped_decomposition(rng), 20.0, 0.0)


def test_modulate_frame(rng):
    plan = plan_subchannels(stepped_decomposition(rng, 3), 30.0, 3.0)
    f0 = modulate(plan, [0, 0])
    f1 = modulate(plan, [0, 0])
    np.testing.assert_array_equal(f0.phases, f1.phases)
    assert abs(abs(f0.x) - 1) < 1e-12
    assert np.all((f0.phases >= 0) & (f0.phases < 2 * np.pi))
    with pytest.raises(InputError):
        modulate(plan, [plan.subchannels[0].cardinality, 0])
    with pytest.raises(InputError):
        modulate(plan, [0])


def test_zero_noise_rows_are_points_plus_leakage():
    eq = _channel(seed=3)
    dec = cp_decompose(eq)
    plan = plan_subchannels(dec, 49.0, 5.0)
    rng = np.random.default_rng(0)
    idx = [int(rng.integers(0, s.cardinality)) for s in plan.subchannels]
    frame = modulate(plan, idx)
    y = transmit_and_receive(plan, frame, 49.0, noise=False) / math.sqrt(db_to_linear(49.0))
    e = np.exp(1j * frame.phases)
    for i, sub in enumerate(plan.subchannels):
        p = dec.pivots[i]
        leak = dec.C[i, :p] @ e[:p]
        later = dec.C[i, dec.pivots[i + 1]:] @ e[dec.pivots[i + 1]:]
        assert abs(y[i] - (sub.points[idx[i]] + leak + later)) < 1e-10
    # beamforming row: all remaining columns add coherently
    last = dec.pivots[-1]
    coherent = np.sum(np.abs(dec.C[-1, last:]))
    assert abs(dec.C[-1, last:] @ e[last:] - coherent) < 1e-10
    assert math.isclose(plan.beam_gain, coherent, rel_tol=1e-12)


def test_zero_phase_frame_definition(rng):
    dec = stepped_decomposition(rng, 3)
    plan = plan_subchannels(dec, 20.0, 2.0)
    frame = modulate(plan, [0, 0])
    frame.phases[:] = 0.0
    y = transmit_and_receive(plan, frame, 20.0, noise=False)
    np.testing.assert_allclose(y, math.sqrt(100.0) * dec.C.sum(axis=1), atol=1e-12)


def test_rotation_isometry(rng):
    dec = stepped_decomposition(rng, 4)
    plan = plan_subchannels(dec, 25.0, 2.0)
    frame = modulate(plan, [0, 0, 0])
    for seed in range(5):
        ytilde = transmit_and_receive(plan, frame, 25.0, seed=seed)
        H = dec.Hcheck
        z = np.random.default_rng(seed)
        noise = (z.standard_normal(4) + 1j * z.standard_normal(4)) / np.sqrt(2)
        y = math.sqrt(db_to_linear(25.0)) * H @ np.exp(1j * frame.original_phases()) + noise
        assert abs(np.linalg.norm(ytilde) - np.linalg.norm(y)) < 1e-10


def test_noise_statistics(rng):
    dec = stepped_decomposition(rng, 2, n=3)
    plan = plan_subchannels(dec, 10.0, 1.0)
    frame = modulate(plan, [0])
    clean = transmit_and_receive(plan, frame, 10.0, noise=False)
    samples = np.array([transmit_and_receive(plan, frame, 10.0, seed=s) for s in range(100000)]) - clean
    var = np.mean(np.abs(samples) ** 2, axis=0)
    np.testing.assert_allclose(var, 1.0, rtol=0.02)
    np.testing.assert_allclose(np.var(samples.real, axis=0), 0.5, rtol=0.02)


# detection

def test_perfect_sic_single_frames(rng):
    dec = stepped_decomposition(rng, 4, n=9)
    plan = plan_subchannels(dec, 40.0, 3.0)
    for _ in range(300):
        idx = tuple(int(rng.integers(0, s.cardinality)) for s in plan.subchannels)
        y = transmit_and_receive(plan, modulate(plan, idx), 40.0, noise=False)
        assert sic_demodulate(plan, y, 40.0) == idx


def test_perfect_sic_batch(rng):
    for tau, n in ((3, 6), (4, 6), (4, 4)):
        dec = stepped_decomposition(rng, tau, n=n)
        plan = plan_subchannels(dec, 40.0, 3.0)
        rep = monte_carlo_ser(plan, SerConfig([40.0], 10000, seed=3, noise=False))[0]
        assert rep.errors == 0 and rep.trials == 10000 * (tau - 1)


def test_qr_sic_perfect_without_noise():
    plan = plan_subchannels(qr_decompose(_channel(seed=5)), 49.0, 5.0)
    rep = monte_carlo_ser(plan, SerConfig([49.0], 5000, seed=1, noise=False))[0]
    assert rep.errors == 0


def _single_annular(rng):
    """tau = 2, n = 3 with one annular row."""
    C = np.array([[1.0, 0.7 * np.exp(0.3j), 0.2], [0, 0, 0.9]], complex)
    return EchelonDecomposition.from_factors(haar_unitary(2, rng), C)


def _leaky(rng, leak):
    """tau = 3, n = 6; row 1 picks up ``leak`` from each of row 0's pair columns."""
    C = np.array([[1.0, 0.8j, 0.3, 0.2, 0.1, 0.1],
                  [leak, leak * 1j, 1.0, 0.7 * np.exp(1j), 0.2, 0.3],
                  [0, 0, 0, 0, 0.9, 0.5]], complex)
    return EchelonDecomposition.from_factors(haar_unitary(3, rng), C)


def test_leakage_below_half_med_is_harmless(rng):
    med_rx, snr_db = 4.0, 40.0
    eta = med_rx / math.sqrt(db_to_linear(snr_db))
    # worst-case leakage 2 * leak stays below eta / 2
    plan = plan_subchannels(_leaky(rng, 0.2 * eta), snr_db, med_rx)
    assert plan.decomposition.rre > 0
    rep = monte_carlo_ser(plan, SerConfig([snr_db], 20000, seed=2, noise=False))[0]
    assert rep.errors == 0
    # leakage comparable to the lattice step breaks detection of row 1
    plan = plan_subchannels(_leaky(rng, 0.8 * eta), snr_db, med_rx)
    rep = monte_carlo_ser(plan, SerConfig([snr_db], 20000, seed=2, noise=False))[0]
    # row 0 then inherits wrong cancellations from row 1
    assert rep.subchannels[1].errors > 0


def test_batch_matches_single_frame_path(rng):
    dec = stepped_decomposition(rng, 3)
    plan = plan_subchannels(dec, 30.0, 3.0)
    idx = [1, 2]
    frame = modulate(plan, idx)
    y_single = transmit_and_receive(plan, frame, 30.0, noise=False)
    clean = plan.beam_vector + sum(plan.row_tables[s][idx[s]] for s in range(2))
    np.testing.assert_allclose(y_single, math.sqrt(1000.0) * clean, atol=1e-9)


def test_ser_tracks_union_bound(rng):
    dec = _single_annular(rng)
    med = med_for_target_ser(1e-2)
    plan = plan_subchannels(dec, 35.0, med)
    rep = monte_carlo_ser(plan, SerConfig([35.0], 200000, seed=5))[0]
    st_ = rep.subchannels[0]
    assert st_.errors >= 100
    assert 1 / 3 <= st_.ser_empirical / st_.ser_theory <= 3


def test_psk_subchannel_tracks_exact_reference():
    # the bottom data row sees no error propagation (only the known beamforming columns lie to its right)
    plan = plan_subchannels(qr_decompose(_channel(seed=2)), 45.0, 5.0)
    rep = monte_carlo_ser(plan, SerConfig([43.0], 100000, seed=8))[0]
    st_ = rep.subchannels[-1]
    assert st_.mode == "circle" and st_.errors >= 100
    assert 0.8 <= st_.ser_empirical / st_.ser_theory <= 1.25


def test_monte_carlo_empty(rng):
    plan = plan_subchannels(stepped_decomposition(rng), 20.0, 2.0)
    rep = monte_carlo_ser(plan, SerConfig([20.0, 25.0], 0))
    assert len(rep) == 2 and rep[0].trials == 0 and rep[0].errors == 0


def test_monte_carlo_deterministic_and_thread_independent(rng):
    plan = plan_subchannels(stepped_decomposition(rng, 3), 25.0, 2.0)
    cfg = dict(snr_db=[20.0, 25.0], frames=5000, seed=11, batch_size=1000)
    a = monte_carlo_ser(plan, SerConfig(**cfg))
    b = monte_carlo_ser(plan, SerConfig(**cfg, threads=3))
    assert [r.rows() for r in a] == [r.rows() for r in b]
    assert a[0].errors > a[1].errors  # more noise, more errors


def test_monte_carlo_averaged_mode(rng):
    plans = [plan_subchannels(stepped_decomposition(rng, 3), 25.0, 2.0) for _ in range(3)]
    rep = monte_carlo_ser(plans, SerConfig([25.0], 1000, seed=1))[0]
    assert rep.realizations == 3
    assert all(s.trials == 3000 for s in rep.subchannels)
    assert 0 <= rep.errors <= rep.trials


def test_ser_csv(tmp_path, rng):
    plan = plan_subchannels(stepped_decomposition(rng, 3), 25.0, 2.0)
    reps = monte_carlo_ser(plan, SerConfig([20.0, 25.0], 500, seed=1))
    path = tmp_path / "ser.csv"
    xcvr.write_ser_csv(path, reps)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == list(xcvr.SER_COLUMNS)
    assert len(rows) == 2 * 3
    agg = [r for r in rows if r["subchannel"] == "aggregate"]
    assert len(agg) == 2
    for r in rows:
        assert 0 <= int(r["errors"]) <= int(r["trials"])


def test_table_one_arithmetic():
    gam, psk = [90, 102, 278], [107, 40, 8]
    assert math.prod(gam) == 2552040 and math.prod(psk) == 34240
    assert round(sum(math.log2(c) for c in gam), 2) == 21.28
    assert round(sum(math.log2(c) for c in psk), 2) == 15.06
    assert [round(math.log2(c), 2) for c in gam] == [6.49, 6.67, 8.12]
    assert abs(21.28 / 15.06 - 1.413) < 1e-3
