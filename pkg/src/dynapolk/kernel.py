"""Mercer kernels and Gram-matrix helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

GAUSSIAN = "gaussian"
POLYNOMIAL = "polynomial"
FAMILIES = (GAUSSIAN, POLYNOMIAL)

# above this feature dimension squared distances are accumulated in long double
_EXTENDED_DIM = 10_000


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    Gaussian: ``exp(-||x - y||^2 / (2 * bandwidth^2))``.
    Polynomial: ``(x . y + offset) ** degree``.
    """

    family: str = GAUSSIAN
    bandwidth: float = 1.0
    offset: float = 0.0
    degree: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == GAUSSIAN and not self.bandwidth > 0:
            raise ValueError("Gaussian bandwidth must be positive")
        if self.family == POLYNOMIAL and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("polynomial degree must be an integer >= 1")

    @classmethod
    def gaussian(cls, bandwidth: float) -> "KernelSpec":
        return cls(GAUSSIAN, bandwidth=float(bandwidth))

    @classmethod
    def polynomial(cls, offset: float = 0.0, degree: int = 2) -> "KernelSpec":
        return cls(POLYNOMIAL, offset=float(offset), degree=int(degree))

    def to_dict(self) -> dict:
        if self.family == GAUSSIAN:
            return {"family": self.family, "bandwidth": self.bandwidth}
        return {"family": self.family, "offset": self.offset, "degree": self.degree}


def _as_points(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2:
        raise ValueError("point list must be 2-D (n_points, n_features)")
    return A


def _vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.ndim != 1:
        raise ValueError("feature vector must be 1-D")
    return x


def kernel_value(spec: KernelSpec, x, y) -> float:
    """Evaluate ``kappa(x, y)`` for two feature vectors."""
    x, y = _vector(x), _vector(y)
    if x.shape != y.shape or x.size == 0:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.family == GAUSSIAN:
        d = x - y
        if x.size > _EXTENDED_DIM:
            sq = float(np.sum(d.astype(np.longdouble) ** 2))
        else:
            sq = float(np.sum(d * d))
        return float(np.exp(-sq / (2.0 * spec.bandwidth ** 2)))
    return float((np.dot(x, y) + spec.offset) ** spec.degree)


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Kernel matrix ``G[i, j] = kappa(A[i], B[j])``; ``B=None`` means ``B = A``."""
    A = _as_points(A)
    same = B is None
    B = A if same else _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    if spec.family == GAUSSIAN:
        if A.shape[1] > _EXTENDED_DIM:
            diff = A[:, None, :].astype(np.longdouble) - B[None, :, :]
            sq = np.sum(diff * diff, axis=-1).astype(float)
        else:
            sq = cdist(A, B, "sqeuclidean")
        return np.exp(-sq / (2.0 * spec.bandwidth ** 2))
    G = (A @ B.T + spec.offset) ** spec.degree
    if same:
        # BLAS need not return an exactly symmetric product
        G = np.triu(G) + np.triu(G, 1).T
    return G


def kernel_diag(spec: KernelSpec, A) -> np.ndarray:
    """``kappa(a, a)`` for every row of ``A``."""
    A = _as_points(A)
    if spec.family == GAUSSIAN:
        return np.ones(A.shape[0])
    return (np.einsum("ij,ij->i", A, A) + spec.offset) ** spec.degree


def kernel_bound(spec: KernelSpec, A) -> float:
    """Empirical ``sup sqrt(kappa(x, x))`` over the sample ``A``."""
    return float(np.sqrt(np.max(kernel_diag(spec, A))))
