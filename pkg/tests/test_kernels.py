import numpy as np
import pytest

from oneill import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def _spd(rng, P, N):
    M = rng.standard_normal((P, N, N))
    return np.einsum("pab,pcb->pac", M, M) + N * np.eye(N)


def test_scatter_backends_agree():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((7, 40))
    dst = rng.integers(0, 12, size=40)
    np.testing.assert_allclose(K.scatter_nb(X, dst, 12), K.scatter_np(X, dst, 12), rtol=0, atol=1e-13)


def test_nullspace_backends_agree():
    rng = np.random.default_rng(1)
    D = rng.standard_normal((20, 2, 5))
    D[3, 1] = D[3, 0]  # a rank-deficient Jacobian
    a, ra = K.nullspace_nb(D, 1e-12)
    b, rb = K.nullspace_np(D, 1e-12)
    np.testing.assert_array_equal(ra, rb)
    assert ra[3] == 1 and ra[0] == 2
    np.testing.assert_allclose(a, b, atol=1e-12)
    full = ra == 2
    assert np.abs(np.einsum("pij,pjk->pik", D[full], a[full])).max() < 1e-12


def test_gram_schmidt_backends_agree():
    rng = np.random.default_rng(2)
    G = _spd(rng, 10, 4)
    V = rng.standard_normal((10, 4, 3))
    V[0, :, 2] = V[0, :, 0] + V[0, :, 1]  # dependent column is dropped
    a, ka = K.gram_schmidt_nb(V, G, 1e-8)
    b, kb = K.gram_schmidt_np(V, G, 1e-8)
    np.testing.assert_array_equal(ka, kb)
    assert ka[0] == 2 and ka[1] == 3
    np.testing.assert_allclose(a, b, atol=1e-12)
    gram = np.einsum("pai,pab,pbj->pij", a[1:], G[1:], a[1:])
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(3), gram.shape), atol=1e-12)


def test_backend_name():
    assert K.backend() in ("numba", "numpy")
