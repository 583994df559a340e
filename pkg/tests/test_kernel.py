import math

import numpy as np
import pytest

from dynapolk.kernel import KernelSpec, gram, kernel_bound, kernel_diag, kernel_value


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec.gaussian(0.0)
    with pytest.raises(ValueError):
        KernelSpec.polynomial(0.0, 0)
    with pytest.raises(ValueError):
        KernelSpec("laplace", 1.0)


def test_gaussian_self_similarity_is_one(rng):
    spec = KernelSpec.gaussian(0.252)
    for x in rng.normal(size=(20, 3)):
        assert kernel_value(spec, x, x) == 1.0


def test_gaussian_at_one_bandwidth():
    spec = KernelSpec.gaussian(0.252)
    assert kernel_value(spec, [0.0], [0.252]) == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_polynomial_unit_vector():
    spec = KernelSpec.polynomial(0.0, 2)
    assert kernel_value(spec, [1.0, 0.0], [1.0, 0.0]) == 1.0


def test_polynomial_closed_form():
    spec = KernelSpec.polynomial(0.5, 3)
    x, y = np.array([1.0, 2.0]), np.array([-0.5, 0.25])
    assert kernel_value(spec, x, y) == pytest.approx((x @ y + 0.5) ** 3)


def test_dimension_mismatch():
    spec = KernelSpec.gaussian(1.0)
    with pytest.raises(ValueError):
        kernel_value(spec, [1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        gram(spec, np.zeros((2, 2)), np.zeros((3, 1)))


def test_gram_small_cases():
    spec = KernelSpec.gaussian(0.3)
    x = np.array([[0.4, -1.0]])
    assert gram(spec, x).tolist() == [[1.0]]
    dup = np.vstack([x, x])
    assert np.array_equal(gram(spec, dup), np.ones((2, 2)))


def test_gram_matches_elementwise(rng):
    for spec in (KernelSpec.gaussian(0.8), KernelSpec.polynomial(1.0, 2)):
        A, B = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
        G = gram(spec, A, B)
        ref = np.array([[kernel_value(spec, a, b) for b in B] for a in A])
        np.testing.assert_allclose(G, ref, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("spec", [KernelSpec.gaussian(0.5), KernelSpec.polynomial(0.5, 3)])
def test_gram_symmetric_psd(rng, spec):
    for _ in range(200):
        A = rng.normal(size=(int(rng.integers(1, 21)), 2))
        G = gram(spec, A)
        assert np.array_equal(G, G.T)
        ev = np.linalg.eigvalsh(G)
        assert ev.min() >= -1e-10 * max(ev.max(), 1.0)


def test_symmetry_bitwise(rng):
    spec = KernelSpec.gaussian(0.252)
    for _ in range(100):
        x, y = rng.normal(size=2), rng.normal(size=2)
        assert kernel_value(spec, x, y) == kernel_value(spec, y, x)


def test_gaussian_bound(rng):
    spec = KernelSpec.gaussian(0.252)
    A = rng.uniform(-3, 3, size=(500, 1))
    assert kernel_bound(spec, A) == 1.0
    assert np.all(kernel_diag(spec, A) == 1.0)


def test_high_dimension_extended_precision(rng):
    spec = KernelSpec.gaussian(100.0)
    A = rng.normal(size=(3, 20001))
    G = gram(spec, A)
    d2 = ((A[:, None, :] - A[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(G, np.exp(-d2 / (2 * 100.0 ** 2)), rtol=1e-10)
