import numpy as np
import pytest

from gamris import kernels

BACKENDS = [kernels.python] + ([kernels.compiled] if kernels.compiled is not None else [])

# Displayed 3x7 equivalent channel example (n = 6 elements, three receivers), one decimal.
EXAMPLE_H1 = np.array([
    [-2.0 + 1.6j, -3.6 + 0.1j, -3.4 - 2.8j, -1.3 + 2.1j, -2.6 + 0.7j, -2.0 - 2.0j, -0.2 - 0.1j],
    [-0.4 + 0.6j, 0.1 + 0.0j, 0.9 + 0.1j, -0.2 + 1.0j, -0.1 + 0.3j, 0.3 + 0.2j, -0.6 - 0.0j],
    [-0.1 + 0.1j, 0.1j, 0.0j, 0.2 + 0.2j, 0.1 + 0.0j, 0.2 - 0.1j, 0.4 - 0.4j],
])


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def backend(request):
    return request.param


@pytest.fixture
def use_backend(backend, monkeypatch):
    """Route the package-level kernel entry points through ``backend``."""
    for name in ("best_pair", "hex_points", "hex_nearest"):
        monkeypatch.setattr(kernels, name, getattr(backend, name))
    return backend


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def stepped_decomposition(rng, tau=3, n=None, scale=1.0, method="cp"):
    """Exactly stepped ``C`` (zero residual) behind a Haar rotation."""
    from gamris.echelon import EchelonDecomposition, haar_unitary, target_pivots

    n = 2 * tau if n is None else n
    piv = target_pivots(n, tau)
    C = scale * (0.6 + 0.4 * rng.random((tau, n))) * np.exp(2j * np.pi * rng.random((tau, n)))
    for i, p in enumerate(piv):
        C[i, :p] = 0
    return EchelonDecomposition.from_factors(haar_unitary(tau, rng), C, method=method)
