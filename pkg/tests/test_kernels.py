import os
import subprocess
import sys

import numpy as np
import pytest

from gamris import _pykernels, kernels
from conftest import crandn


def brute_pair(A):
    best = (np.inf, None)
    m = A.shape[1]
    for i in range(m):
        for j in range(i + 1, m):
            s = np.linalg.svd(A[:, [i, j]], compute_uv=False)
            err = np.sum(s**2) - s[0] ** 2
            if err < best[0] - 1e-12:
                best = (err, (i, j))
    return best


def test_best_pair_matches_svd_oracle(backend, rng):
    for _ in range(5):
        A = crandn(rng, 4, 12)
        i, j, err = backend.best_pair(A)
        ref_err, ref = brute_pair(A)
        assert (i, j) == ref
        assert abs(err - ref_err) < 1e-10


def test_best_pair_tie_is_lexicographic(backend):
    A = np.array([[1, 0, 1, 0], [0, 1, 0, 1]], dtype=complex)
    assert backend.best_pair(A)[:2] == (0, 2)


def test_best_pair_needs_two_columns(backend):
    with pytest.raises(ValueError):
        backend.best_pair(np.ones((2, 1), complex))


def test_backends_agree_on_large_input(rng):
    if kernels.compiled is None:
        pytest.skip("compiled extension not built")
    A = crandn(rng, 4, 300)
    a = kernels.python.best_pair(A)
    b = kernels.compiled.best_pair(A)
    assert a[:2] == b[:2] and abs(a[2] - b[2]) < 1e-12


def test_pair_error_matrix_symmetric(rng):
    E = _pykernels.pair_errors(crandn(rng, 3, 9))
    np.testing.assert_allclose(E, E.T)
    assert E.min() >= 0


def test_hex_points_solve_the_form(backend):
    ks = np.arange(0, 400)
    z1, z2 = backend.hex_points(ks)
    k = z1 * z1 + z1 * z2 + z2 * z2
    assert np.all(np.diff(k) >= 0)
    pairs = set(zip(z1.tolist(), z2.tolist()))
    assert len(pairs) == z1.size
    brute = {(a, b) for a in range(-30, 31) for b in range(-30, 31) if a * a + a * b + b * b < 400}
    assert pairs == brute


def test_hex_points_backends_identical():
    if kernels.compiled is None:
        pytest.skip("compiled extension not built")
    ks = np.arange(0, 3000)
    for a, b in zip(kernels.python.hex_points(ks), kernels.compiled.hex_points(ks)):
        np.testing.assert_array_equal(a, b)


def test_hex_nearest_is_nearest_lattice_point(backend, rng):
    z1, z2 = np.meshgrid(np.arange(-6, 7), np.arange(-6, 7), indexing="ij")
    grid = np.arange(z1.size).reshape(z1.shape)
    lattice = (z1 + z2 * np.exp(1j * np.pi / 3)).ravel()
    y = rng.uniform(-2.5, 2.5, 500) + 1j * rng.uniform(-2.5, 2.5, 500)
    got = backend.hex_nearest(y, grid, -6, -6)
    expect = np.argmin(np.abs(y[:, None] - lattice[None, :]), axis=1)
    np.testing.assert_array_equal(got, expect)


def test_hex_nearest_outside_grid(backend):
    grid = np.zeros((1, 1), np.int64)
    assert backend.hex_nearest(np.array([10 + 10j]), grid, 0, 0)[0] == -1


def test_env_var_forces_fallback():
    code = "from gamris import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, GAMRIS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
