import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynapolk.kernel import KernelSpec, gram
from dynapolk.komp import compress
from dynapolk.loss import WindowBuffer
from dynapolk.rkhs import DictionaryFunction, delta_norm, dumps, loads, norm

coords = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
weights = st.floats(-2, 2, allow_nan=False, allow_infinity=False)
kernels = st.one_of(st.floats(0.2, 2.0).map(KernelSpec.gaussian),
                    st.tuples(st.floats(0.0, 1.0), st.integers(1, 3)).map(
                        lambda a: KernelSpec.polynomial(*a)))


@st.composite
def functions(draw, kernel=None, max_m=12):
    k = kernel if kernel is not None else draw(kernels)
    m = draw(st.integers(0, max_m))
    D = draw(arrays(float, (m, 2), elements=coords))
    W = draw(arrays(float, (m, 1), elements=weights))
    return DictionaryFunction(k, D, W)


@settings(max_examples=150, deadline=None)
@given(functions(), st.floats(0.0, 1.0))
def test_compress_budget(f, eps):
    g, rep = compress(f, eps)
    assert delta_norm(f, g) <= eps + 1e-8
    assert rep.achieved_error <= eps + 1e-12
    assert rep.atoms_out <= rep.atoms_in


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_delta_norm_metric(data):
    k = data.draw(kernels)
    f, g, h = (data.draw(functions(kernel=k, max_m=6)) for _ in range(3))
    assert abs(delta_norm(f, g) - delta_norm(g, f)) <= 1e-9 * (1 + delta_norm(f, g))
    assert delta_norm(f, h) <= delta_norm(f, g) + delta_norm(g, h) + 1e-7
    assert delta_norm(f, DictionaryFunction.zero(k, 2)) == norm(f) or \
        abs(delta_norm(f, DictionaryFunction.zero(k, 2)) - norm(f)) <= 1e-9 * (1 + norm(f))


@settings(max_examples=100, deadline=None)
@given(functions())
def test_serialization_exact(f):
    g = loads(dumps(f))
    assert np.array_equal(g.dictionary, f.dictionary) and np.array_equal(g.weights, f.weights)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (8, 2), elements=coords), st.floats(0.2, 2.0))
def test_gram_psd(A, bw):
    G = gram(KernelSpec.gaussian(bw), A)
    assert np.array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-10 * max(1.0, np.abs(G).max() * 8)


@given(st.integers(1, 6), st.integers(0, 20))
def test_window_buffer_keeps_latest(cap, n):
    buf = WindowBuffer(cap)
    for t in range(1, n + 1):
        buf.push([float(t)], float(t), t)
    assert len(buf) == min(cap, n)
    assert [e.t for e in buf] == list(range(max(1, n - cap + 1), n + 1))
