import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamris.corrchan import (
    AttenuationSpec,
    EquivalentChannel,
    RisGrid,
    build_correlation_matrix,
    channel_from_json,
    channel_to_json,
    reduce_to_equivalent,
    sample_channel,
)
from gamris.errors import DegenerateChannelError, InputError


def test_grid_positions_row_major():
    g = RisGrid(3, 2, 0.5)
    pos = g.positions
    assert g.n == 6
    np.testing.assert_allclose(pos[4], [0.5, 0.5])
    np.testing.assert_allclose(pos[2], [1.0, 0.0])


@pytest.mark.parametrize("n,shape", [(64, (8, 8)), (1024, (32, 32)), (12, (4, 3)), (7, (7, 1))])
def test_square_ish(n, shape):
    g = RisGrid.square_ish(n, 0.25)
    assert (g.n_x, g.n_y) == shape


@pytest.mark.parametrize("bad", [dict(n_x=0, n_y=1, spacing=1.0), dict(n_x=2, n_y=2, spacing=0.0),
                                 dict(n_x=2, n_y=2, spacing=float("nan"))])
def test_grid_rejects_bad_input(bad):
    with pytest.raises(InputError):
        RisGrid(**bad)


def test_attenuation_linear():
    a = AttenuationSpec()
    assert math.isclose(a.mu_los, 1e-3)
    assert math.isclose(a.mu_rr, 10 ** (-0.25))


def test_correlation_values_against_direct_formula():
    g = RisGrid(4, 4, 0.125)
    corr = build_correlation_matrix(g)
    pos = g.positions
    i, j = 1, 14
    dist = math.dist(pos[i], pos[j])
    expect = math.sin(math.pi * 2 * dist) / (math.pi * 2 * dist)
    assert math.isclose(corr.R[i, j], expect, rel_tol=1e-12)
    # adjacent elements at lambda/8
    assert math.isclose(corr.R[0, 1], math.sin(math.pi / 4) / (math.pi / 4), rel_tol=1e-12)
    np.testing.assert_allclose(np.diag(corr.R), 1.0)
    np.testing.assert_allclose(corr.R, corr.R.T)


def test_half_wavelength_neighbours_uncorrelated():
    corr = build_correlation_matrix(RisGrid(5, 1, 0.5))
    assert abs(corr.R[0, 1]) < 1e-15


def test_sqrt_factor_reproduces_R():
    corr = build_correlation_matrix(RisGrid(8, 8, 0.125))
    F = corr.sqrt_factor
    err = np.linalg.norm(F @ F.T - corr.R) / np.linalg.norm(corr.R)
    assert err < 1e-10
    w = np.linalg.eigvalsh(F @ F.T)
    assert w.min() > -1e-10


def test_sample_channel_deterministic_and_draw_order():
    g = RisGrid(4, 4, 0.25)
    corr = build_correlation_matrix(g)
    att = AttenuationSpec()
    a = sample_channel(g, att, 3, corr, 11)
    b = sample_channel(g, att, 3, corr, 11)
    np.testing.assert_array_equal(a.H, b.H)
    # reproduce from the documented stream: rows of H, then g, then d; real before imaginary
    rng = np.random.default_rng(11)
    w = [(rng.standard_normal(16) + 1j * rng.standard_normal(16)) / np.sqrt(2) for _ in range(4)]
    d = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) / np.sqrt(2)
    np.testing.assert_allclose(a.H[2], att.mu_rr * corr.sqrt_factor @ w[2])
    np.testing.assert_allclose(a.g, att.mu_tr * corr.sqrt_factor @ w[3])
    np.testing.assert_allclose(a.d, att.mu_los * d)


def test_channel_second_moment(rng):
    g = RisGrid(3, 3, 0.125)
    corr = build_correlation_matrix(g)
    att = AttenuationSpec(mu_rr_db=0.0)
    acc = np.zeros((9, 9), complex)
    trials = 4000
    for s in range(trials):
        h = sample_channel(g, att, 1, corr, s).H[0]
        acc += np.outer(h, h.conj())
    assert np.abs(acc / trials - corr.R).max() < 0.1


@pytest.mark.parametrize("n_r", [1, 2, 4])
def test_reduction_recovers_augmented_channel(n_r):
    g = RisGrid(8, 8, 0.125)
    ch = sample_channel(g, AttenuationSpec(), n_r, build_correlation_matrix(g), 3)
    eq = reduce_to_equivalent(ch)
    G = ch.augmented()
    assert eq.tau == n_r and eq.n_check == 65
    np.testing.assert_allclose(eq.left @ eq.Hcheck, G, atol=1e-12 * np.linalg.norm(G))
    # rows orthogonal with squared norms equal to the singular values squared
    gram = eq.Hcheck @ eq.Hcheck.conj().T
    np.testing.assert_allclose(gram, np.diag(eq.singular_values**2), atol=1e-10 * gram[0, 0].real)


def test_reduction_rank_deficient():
    G = np.array([[1, 2, 3], [2, 4, 6]], dtype=complex)
    eq = reduce_to_equivalent(G)
    assert eq.tau == 1


def test_reduction_zero_channel():
    with pytest.raises(DegenerateChannelError):
        reduce_to_equivalent(np.zeros((2, 4)))


def test_equivalent_from_matrix_rejects_dependent_rows():
    with pytest.raises(InputError):
        EquivalentChannel.from_matrix([[1, 1], [2, 2]])


def test_json_round_trip():
    g = RisGrid(2, 3, 0.25)
    ch = sample_channel(g, AttenuationSpec(), 2, build_correlation_matrix(g), 5)
    text = json.dumps(channel_to_json(ch))
    back = channel_from_json(text)
    np.testing.assert_array_equal(back.H, ch.H)
    np.testing.assert_array_equal(back.g, ch.g)
    np.testing.assert_array_equal(back.d, ch.d)
    assert back.grid == ch.grid and back.seed == 5


def test_json_rejects_missing_key():
    with pytest.raises(InputError):
        channel_from_json({"n_R": 1})


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.sampled_from([0.125, 0.25, 0.5]), st.integers(0, 2**32))
def test_reduction_rank_never_exceeds_receivers(n_r, side, spacing, seed):
    g = RisGrid(side, side, spacing)
    ch = sample_channel(g, AttenuationSpec(), n_r, build_correlation_matrix(g), seed)
    eq = reduce_to_equivalent(ch)
    assert 1 <= eq.tau <= min(n_r, g.n + 1)
    assert np.all(np.diff(eq.singular_values) <= 0)
