import numpy as np
import pytest
from scipy.optimize import lsq_linear

from dynapolk.kernel import KernelSpec, gram
from dynapolk.rkhs import (DictionaryFunction, FunctionDelta, NumericalError, _clamped_sqrt,
                           combine, delta_norm, dumps, evaluate, evaluate_many, load, loads,
                           norm, norm_sq, project, project_weights, save, solve_gram,
                           subspace_distance)

from conftest import random_function

GAUSS = KernelSpec.gaussian(0.7)


def test_zero_function():
    f = DictionaryFunction.zero(GAUSS, 2, 3)
    assert f.model_order == 0
    assert np.array_equal(evaluate(f, [0.1, 0.2]), np.zeros(3))
    assert norm_sq(f) == 0.0


def test_shape_invariants():
    with pytest.raises(ValueError):
        DictionaryFunction(GAUSS, np.zeros((3, 2)), np.zeros((2, 1)))


def test_immutable_arrays(rng):
    f = random_function(rng)
    with pytest.raises(ValueError):
        f.weights[0, 0] = 1.0
    with pytest.raises(ValueError):
        f.dictionary[0, 0] = 1.0


def test_cached_gram_is_exact_copy(rng):
    f = random_function(rng, M=7)
    assert np.array_equal(f.gram(), gram(f.kernel, f.dictionary))


def test_single_atom_at_query():
    f = DictionaryFunction(GAUSS, [[0.3, 0.3]], [[2.0]])
    assert evaluate(f, [0.3, 0.3])[0] == 2.0
    g = DictionaryFunction(GAUSS, [[0.3, 0.3]], [[3.0]])
    assert norm_sq(g) == 9.0


def test_evaluate_matches_naive_sum(rng):
    f = random_function(rng, M=3, C=2)
    x = rng.normal(size=2)
    ref = sum(f.weights[u] * np.exp(-np.sum((f.dictionary[u] - x) ** 2) / (2 * 0.7 ** 2))
              for u in range(3))
    np.testing.assert_allclose(evaluate(f, x), ref, rtol=1e-13)
    np.testing.assert_allclose(evaluate_many(f, x[None, :])[0], ref, rtol=1e-13)


def test_norm_sq_independent(rng):
    for _ in range(20):
        f = random_function(rng, M=6, C=2)
        K = np.array([[np.exp(-np.sum((a - b) ** 2) / (2 * 0.49)) for b in f.dictionary]
                      for a in f.dictionary])
        ref = sum(f.weights[:, c] @ K @ f.weights[:, c] for c in range(2))
        assert norm_sq(f) == pytest.approx(ref, rel=1e-10)
        assert norm_sq(f) >= 0


def test_reproducing_property(rng):
    f = random_function(rng, M=8)
    for _ in range(10):
        x = rng.normal(size=2)
        k = gram(GAUSS, f.dictionary, x[None, :])[:, 0]
        assert abs(float(f.weights[:, 0] @ k) - evaluate(f, x)[0]) <= 1e-12


def test_delta_norm_trivial():
    f = DictionaryFunction(GAUSS, [[1.0, 0.0]], [[1.0]])
    assert delta_norm(f, f) == 0.0
    z = DictionaryFunction.zero(GAUSS, 2)
    assert delta_norm(z, f) == pytest.approx(1.0)
    assert FunctionDelta(z, f).norm() == pytest.approx(1.0)


def test_delta_norm_concatenation_oracle(rng):
    for _ in range(50):
        f, g = random_function(rng, M=4), random_function(rng, M=5)
        diff = DictionaryFunction(GAUSS, np.vstack([f.dictionary, g.dictionary]),
                                  np.vstack([f.weights, -g.weights]))
        assert delta_norm(f, g) == pytest.approx(np.sqrt(norm_sq(diff)), rel=1e-8, abs=1e-9)


def test_delta_norm_shared_atoms_exact(rng):
    f = random_function(rng, M=5)
    g = f.with_weights(f.weights + 1e-9)
    assert delta_norm(f, g) == pytest.approx(1e-9 * np.sqrt(np.sum(f.gram())), rel=1e-4)


def test_delta_norm_kernel_mismatch(rng):
    f = random_function(rng)
    g = random_function(rng, kernel=KernelSpec.gaussian(1.0))
    with pytest.raises(ValueError):
        delta_norm(f, g)


def test_radicand_clamp():
    assert _clamped_sqrt(-5e-11) == 0.0
    with pytest.raises(NumericalError):
        _clamped_sqrt(-1e-3)


def test_subspace_distance_cases(rng):
    D = rng.normal(size=(4, 2))
    assert subspace_distance(GAUSS, D[2], D) <= 1e-6
    far = KernelSpec.gaussian(0.1)
    assert subspace_distance(far, [0.0, 0.0], [[50.0, 50.0]]) == pytest.approx(1.0, abs=1e-3)


def _ls_distance(spec, x, D):
    # dense least squares in feature space coordinates given by a Cholesky of the joint Gram
    P = np.vstack([D, np.asarray(x)[None, :]])
    G = gram(spec, P) + 1e-13 * np.eye(len(P))
    Lc = np.linalg.cholesky(G)  # columns of Lc.T are feature vectors
    Phi = Lc.T
    A, b = Phi[:, :-1], Phi[:, -1]
    v = lsq_linear(A, b).x
    return np.linalg.norm(A @ v - b)


def test_subspace_distance_least_squares_oracle(rng):
    for _ in range(30):
        D = rng.uniform(-1.5, 1.5, size=(4, 2))
        x = rng.uniform(-1.5, 1.5, size=2)
        assert subspace_distance(GAUSS, x, D) == pytest.approx(_ls_distance(GAUSS, x, D), rel=1e-6,
                                                                abs=1e-9)


def test_subspace_distance_monotone(rng):
    for _ in range(100):
        D = rng.uniform(-2, 2, size=(5, 2))
        x = rng.uniform(-2, 2, size=2)
        assert subspace_distance(GAUSS, x, D) <= subspace_distance(GAUSS, x, D[:4]) + 1e-8


def test_project_own_span_identity(rng):
    f = random_function(rng, M=6, C=2)
    np.testing.assert_allclose(project_weights(f, f.dictionary), f.weights, atol=1e-8)


def test_project_zero_target(rng):
    z = DictionaryFunction.zero(GAUSS, 2)
    assert np.array_equal(project_weights(z, rng.normal(size=(3, 2))), np.zeros((3, 1)))


def test_projection_perturbation_optimal(rng):
    for _ in range(20):
        f = random_function(rng, M=8)
        D_new = f.dictionary[rng.permutation(8)[:4]]
        w = project_weights(f, D_new)
        base = delta_norm(f, DictionaryFunction(GAUSS, D_new, w))
        for _ in range(20):
            w2 = w + 1e-3 * rng.normal(size=w.shape)
            assert delta_norm(f, DictionaryFunction(GAUSS, D_new, w2)) >= base - 1e-12


def test_projection_idempotent_and_pythagoras(rng):
    for _ in range(100):
        f = random_function(rng, M=7)
        D_new = f.dictionary[:3]
        p = project(f, D_new)
        p2 = project(p, D_new)
        np.testing.assert_allclose(p2.weights, p.weights, atol=1e-10)
        lhs = norm_sq(f)
        rhs = norm_sq(p) + delta_norm(f, p) ** 2
        assert rhs == pytest.approx(lhs, rel=1e-6)


def test_combine(rng):
    f, g = random_function(rng, M=3), random_function(rng, M=2)
    h = combine(f, g, 2.0, -1.0)
    x = rng.normal(size=2)
    np.testing.assert_allclose(evaluate(h, x), 2 * evaluate(f, x) - evaluate(g, x), atol=1e-13)


def test_solve_gram_singular_is_finite():
    K = np.ones((3, 3))
    w = solve_gram(K, np.ones((3, 1)))
    assert np.all(np.isfinite(w))
    np.testing.assert_allclose(K @ w, np.ones((3, 1)), atol=1e-6)


@pytest.mark.parametrize("kernel", [GAUSS, KernelSpec.polynomial(0.5, 3)])
def test_serialization_roundtrip(rng, tmp_path, kernel):
    f = random_function(rng, kernel=kernel, M=4, p=3, C=2)
    text = dumps(f)
    assert text.startswith("dynapolk-model v1; kernel=")
    g = loads(text)
    assert g.kernel == f.kernel
    assert np.array_equal(g.dictionary, f.dictionary)
    assert np.array_equal(g.weights, f.weights)
    save(f, tmp_path / "m.txt")
    assert dumps(load(tmp_path / "m.txt")) == text


def test_serialization_empty_model():
    z = DictionaryFunction.zero(GAUSS, 2, 1)
    g = loads(dumps(z))
    assert g.model_order == 0 and g.dim == 2


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        loads("not a model\n")
