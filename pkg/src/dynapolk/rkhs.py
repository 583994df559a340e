"""Sparse RKHS functions ``f(x) = sum_u w_u kappa(d_u, x)`` and operations on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernel import GAUSSIAN, KernelSpec, gram, kernel_diag

JITTER = 1e-10
MAX_JITTER = 1e-6
RADICAND_TOL = 1e-10
_REFINE_STEPS = 2


class NumericalError(ArithmeticError):
    """Raised when a Hilbert-norm computation leaves its roundoff envelope."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class DictionaryFunction:
    """Immutable kernel expansion over an ``(M, p)`` dictionary with ``(M, C)`` weights.

    ``M = 0`` is the zero function.  The Gram matrix of the dictionary is cached
    on first use (or supplied by the constructor when the caller already has it).
    """

    __slots__ = ("kernel", "dictionary", "weights", "_gram")

    def __init__(self, kernel: KernelSpec, dictionary, weights, gram_cache=None):
        D = np.asarray(dictionary, dtype=float)
        W = np.asarray(weights, dtype=float)
        if D.ndim == 1:
            D = D[:, None]
        if W.ndim == 1:
            W = W[:, None]
        if D.ndim != 2 or W.ndim != 2:
            raise ValueError("dictionary and weights must be 2-D")
        if D.shape[0] != W.shape[0]:
            raise ValueError(f"dictionary has {D.shape[0]} atoms but weights have {W.shape[0]} rows")
        if D.shape[1] < 1 or W.shape[1] < 1:
            raise ValueError("feature dimension and output count must be >= 1")
        self.kernel = kernel
        self.dictionary = _frozen(D)
        self.weights = _frozen(W)
        if gram_cache is not None:
            gram_cache = _frozen(gram_cache)
            if gram_cache.shape != (D.shape[0], D.shape[0]):
                raise ValueError("cached Gram has the wrong shape")
        self._gram = gram_cache

    @classmethod
    def zero(cls, kernel: KernelSpec, dim: int, n_outputs: int = 1) -> "DictionaryFunction":
        return cls(kernel, np.zeros((0, dim)), np.zeros((0, n_outputs)), np.zeros((0, 0)))

    @property
    def model_order(self) -> int:
        return self.dictionary.shape[0]

    @property
    def dim(self) -> int:
        return self.dictionary.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[1]

    @property
    def gram_cached(self) -> bool:
        return self._gram is not None

    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = _frozen(gram(self.kernel, self.dictionary))
        return self._gram

    def with_weights(self, weights) -> "DictionaryFunction":
        return DictionaryFunction(self.kernel, self.dictionary, weights, self._gram)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)

    def __repr__(self):
        return (f"DictionaryFunction(kernel={self.kernel}, M={self.model_order}, "
                f"p={self.dim}, C={self.n_outputs})")


@dataclass(frozen=True)
class FunctionDelta:
    """Pair of functions in one RKHS whose difference norm is wanted."""

    left: DictionaryFunction
    right: DictionaryFunction

    def __post_init__(self):
        if self.left.kernel != self.right.kernel:
            raise ValueError("functions live in different RKHSs (kernels differ)")
        if self.left.dim != self.right.dim or self.left.n_outputs != self.right.n_outputs:
            raise ValueError("functions differ in feature dimension or output count")

    def norm(self) -> float:
        return delta_norm(self.left, self.right)


def _check_dim(f: DictionaryFunction, X: np.ndarray):
    if X.shape[1] != f.dim:
        raise ValueError(f"dimension mismatch: function has p={f.dim}, got {X.shape[1]}")


def evaluate(f: DictionaryFunction, x) -> np.ndarray:
    """Output vector ``w^T kappa_D(x)`` (length C)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return evaluate_many(f, x)[0]


def evaluate_many(f: DictionaryFunction, X) -> np.ndarray:
    """Outputs for every row of ``X``, shape ``(n, C)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, f.dim) if f.dim > 1 else X[:, None]
    _check_dim(f, X)
    if f.model_order == 0:
        return np.zeros((X.shape[0], f.n_outputs))
    return gram(f.kernel, X, f.dictionary) @ f.weights


def _clamped_sqrt(radicand: float, scale: float = 1.0) -> float:
    if radicand >= 0:
        return float(np.sqrt(radicand))
    if radicand >= -RADICAND_TOL * max(1.0, scale):
        return 0.0
    raise NumericalError(f"negative squared Hilbert norm {radicand:.3e}")


def norm_sq(f: DictionaryFunction) -> float:
    """``sum_c w_c^T K w_c`` (squared RKHS norm, summed over output channels)."""
    if f.model_order == 0:
        return 0.0
    W = f.weights
    val = float(np.sum(W * (f.gram() @ W)))
    if val < 0:
        _clamped_sqrt(val, float(np.sum(W * W)))
        return 0.0
    return val


def norm(f: DictionaryFunction) -> float:
    return float(np.sqrt(norm_sq(f)))


def _merge_union(left: DictionaryFunction, right: DictionaryFunction):
    """Deduplicated union dictionary and the coefficient vector of ``left - right``."""
    pts = np.vstack([left.dictionary, right.dictionary])
    coef = np.vstack([left.weights, -right.weights])
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    merged = np.zeros((uniq.shape[0], coef.shape[1]))
    np.add.at(merged, np.ravel(inverse), coef)
    return uniq, merged


def delta_norm(left: DictionaryFunction, right: DictionaryFunction) -> float:
    """``||left - right||_H`` evaluated on the union of both dictionaries.

    Atoms sitting at bitwise-identical points are merged before the quadratic
    form is taken, so shared atoms cancel exactly instead of through roundoff.
    """
    if left is right:
        return 0.0
    FunctionDelta(left, right)
    if left.model_order == 0:
        return norm(right)
    if right.model_order == 0:
        return norm(left)
    if (left.model_order == right.model_order
            and np.array_equal(left.dictionary, right.dictionary)):
        diff = left.weights - right.weights
        K = left.gram() if left.gram_cached or not right.gram_cached else right.gram()
        rad = float(np.sum(diff * (K @ diff)))
        return _clamped_sqrt(rad, float(np.sum(diff * diff)))
    pts, coef = _merge_union(left, right)
    K = gram(left.kernel, pts)
    rad = float(np.sum(coef * (K @ coef)))
    return _clamped_sqrt(rad, float(np.sum(coef * coef)))


def _factor(K: np.ndarray):
    M = K.shape[0]
    base = max(np.trace(K) / M, np.finfo(float).tiny)
    tau = JITTER
    while True:
        try:
            return cho_factor(K + (tau * base) * np.eye(M), lower=True, check_finite=False), tau
        except LinAlgError:
            if tau >= MAX_JITTER:
                raise NumericalError("Gram matrix not factorizable at maximum jitter")
            tau = min(tau * 10.0, MAX_JITTER)


def solve_gram(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``K x = rhs`` for a symmetric PSD Gram matrix.

    Cholesky on ``K + tau * trace(K)/M * I`` (``tau`` from 1e-10, escalating
    x10 up to 1e-6 on failure), followed by iterative refinement against the
    unjittered ``K`` so that well-conditioned systems are solved without bias.
    """
    K = np.asarray(K, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if K.shape[0] == 0:
        return np.zeros_like(rhs)
    cf, _ = _factor(K)
    x = cho_solve(cf, rhs, check_finite=False)
    for _ in range(_REFINE_STEPS):
        x = x + cho_solve(cf, rhs - K @ x, check_finite=False)
    return x


def gram_inverse(K: np.ndarray) -> np.ndarray:
    """Jittered inverse of a Gram matrix (same factorization policy as ``solve_gram``)."""
    M = K.shape[0]
    cf, _ = _factor(K)
    return cho_solve(cf, np.eye(M), check_finite=False)


def subspace_distance(spec: KernelSpec, x, D) -> float:
    """Distance from ``kappa(x, .)`` to ``span{kappa(d, .) : d in D}``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, x.shape[1])
    if D.shape[0] == 0:
        raise ValueError("dictionary must be nonempty")
    if D.shape[1] != x.shape[1]:
        raise ValueError("dimension mismatch")
    k = gram(spec, D, x)[:, 0]
    v = solve_gram(gram(spec, D), k)
    kxx = float(kernel_diag(spec, x)[0])
    return float(np.sqrt(max(0.0, kxx - float(k @ v))))


def project_weights(f_target: DictionaryFunction, D_new, K_new: Optional[np.ndarray] = None,
                    K_cross: Optional[np.ndarray] = None) -> np.ndarray:
    """Least-squares weights of the projection of ``f_target`` onto ``span(D_new)``.

    Solves ``K(D_new, D_new) w = K(D_new, D_target) w_target`` channel-wise.
    Precomputed Gram blocks may be passed to skip kernel evaluations.
    """
    D_new = np.asarray(D_new, dtype=float)
    if D_new.ndim == 1:
        D_new = D_new.reshape(-1, f_target.dim)
    if D_new.shape[0] == 0:
        raise ValueError("target dictionary must be nonempty")
    if D_new.shape[1] != f_target.dim:
        raise ValueError("dimension mismatch")
    if f_target.model_order == 0:
        return np.zeros((D_new.shape[0], f_target.n_outputs))
    if K_new is None:
        K_new = gram(f_target.kernel, D_new)
    if K_cross is None:
        K_cross = gram(f_target.kernel, D_new, f_target.dictionary)
    return solve_gram(K_new, K_cross @ f_target.weights)


def project(f_target: DictionaryFunction, D_new) -> DictionaryFunction:
    """``f_target`` projected onto ``span(D_new)`` as a new function."""
    D_new = np.asarray(D_new, dtype=float)
    K_new = gram(f_target.kernel, D_new)
    w = project_weights(f_target, D_new, K_new=K_new)
    return DictionaryFunction(f_target.kernel, D_new, w, K_new)


def combine(f: DictionaryFunction, g: DictionaryFunction, a: float = 1.0,
            b: float = 1.0) -> DictionaryFunction:
    """``a f + b g`` on the concatenated dictionary."""
    FunctionDelta(f, g)
    return DictionaryFunction(f.kernel, np.vstack([f.dictionary, g.dictionary]),
                              np.vstack([a * f.weights, b * g.weights]))


# -- text serialization -------------------------------------------------------

HEADER_TAG = "dynapolk-model v1"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps(f: DictionaryFunction) -> str:
    k = f.kernel
    fields = [HEADER_TAG, f"kernel={k.family}", f"bandwidth={_fmt(k.bandwidth)}"]
    if k.family != GAUSSIAN:
        fields += [f"offset={_fmt(k.offset)}", f"degree={k.degree}"]
    fields += [f"p={f.dim}", f"M={f.model_order}", f"C={f.n_outputs}"]
    lines = ["; ".join(fields)]
    lines += [" ".join(_fmt(v) for v in row) for row in f.dictionary]
    lines += [" ".join(_fmt(v) for v in row) for row in f.weights]
    return "\n".join(lines) + "\n"


def loads(text: str) -> DictionaryFunction:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty model file")
    parts = [s.strip() for s in lines[0].split(";")]
    if parts[0] != HEADER_TAG:
        raise ValueError(f"not a {HEADER_TAG} file: {parts[0]!r}")
    meta = dict(s.split("=", 1) for s in parts[1:] if s)
    try:
        family = meta["kernel"]
        p, M, C = int(meta["p"]), int(meta["M"]), int(meta["C"])
        if family == GAUSSIAN:
            kernel = KernelSpec.gaussian(float(meta["bandwidth"]))
        else:
            kernel = KernelSpec.polynomial(float(meta["offset"]), int(meta["degree"]))
    except KeyError as exc:
        raise ValueError(f"model header lacks field {exc}") from None
    body = lines[1:1 + 2 * M]
    if len(body) != 2 * M:
        raise ValueError(f"expected {2 * M} data lines, found {len(body)}")

    def rows(chunk, width, what):
        out = np.zeros((len(chunk), width))
        for i, line in enumerate(chunk):
            vals = line.split()
            if len(vals) != width:
                raise ValueError(f"{what} line {i + 1}: expected {width} values, got {len(vals)}")
            out[i] = [float(v) for v in vals]
        return out

    D = rows(body[:M], p, "dictionary")
    W = rows(body[M:], C, "weight")
    return DictionaryFunction(kernel, D, W)


def save(f: DictionaryFunction, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(f))


def load(path) -> DictionaryFunction:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
