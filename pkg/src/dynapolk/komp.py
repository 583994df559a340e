"""Destructive kernel orthogonal matching pursuit with pre-fitting.

Atoms are removed greedily from a target function while the re-fitted
function stays within a Hilbert-norm budget of the *original* target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rkhs import (JITTER, DictionaryFunction, delta_norm, gram_inverse, norm,
                   solve_gram)

# gamma at or below this counts as exact redundancy even when eps == 0
REDUNDANCY_TOL = 1e-12


@dataclass(frozen=True)
class CompressionReport:
    atoms_in: int
    atoms_out: int
    achieved_error: float
    removal_trace: tuple = ()
    kept: tuple = field(default=(), repr=False)

    @property
    def atoms_removed(self) -> int:
        return self.atoms_in - self.atoms_out


def removal_error(f_target: DictionaryFunction, j: int) -> float:
    """Error ``gamma_j`` of dropping atom ``j`` and re-fitting the rest by least squares."""
    M = f_target.model_order
    if not 0 <= j < M:
        raise IndexError(f"atom index {j} out of range for M={M}")
    if M == 1:
        return norm(f_target)
    keep = np.delete(np.arange(M), j)
    K = f_target.gram()
    K_keep = K[np.ix_(keep, keep)]
    w = solve_gram(K_keep, K[keep] @ f_target.weights)
    g = DictionaryFunction(f_target.kernel, f_target.dictionary[keep], w, K_keep)
    return delta_norm(f_target, g)


class _Target:
    """Precomputed pieces of the compression target shared across removals."""

    def __init__(self, f: DictionaryFunction):
        self.f = f
        self.K = f.gram()
        _, first, self.group = np.unique(f.dictionary, axis=0, return_index=True,
                                         return_inverse=True)
        self.group = np.ravel(self.group)
        self.n_groups = first.size
        self.K_groups = self.K[np.ix_(first, first)]
        self.w_groups = self._group_sum(np.arange(f.model_order), f.weights)

    def _group_sum(self, idx, coef):
        out = np.zeros((self.n_groups, coef.shape[1]))
        np.add.at(out, self.group[idx], coef)
        return out

    def error(self, keep, beta) -> float:
        """``||f - beta^T kappa_{D[keep]}||_H`` with coincident atoms merged."""
        v = self.w_groups - self._group_sum(keep, beta) if keep.size else self.w_groups
        rad = float(np.sum(v * (self.K_groups @ v)))
        return float(np.sqrt(rad)) if rad > 0 else 0.0

    def fit(self, keep):
        if keep.size == 0:
            return np.zeros((0, self.f.n_outputs))
        K_keep = self.K[np.ix_(keep, keep)]
        return solve_gram(K_keep, self.K[keep] @ self.f.weights)

    def sweep(self, keep, beta, r2) -> np.ndarray:
        """Removal error of every atom in ``keep`` against the original target.

        Uses ``gamma_j^2 = r^2 + ||beta_j||^2 dist_j^2`` where ``r`` is the current
        residual and ``dist_j`` the distance of atom j to the span of the others
        (the Schur complement ``1 / [K^-1]_jj``).
        """
        m = keep.size
        if m == 1:
            return np.array([norm(self.f)])
        K_keep = self.K[np.ix_(keep, keep)]
        jitter = JITTER * np.trace(K_keep) / m
        inv_diag = np.diag(gram_inverse(K_keep))
        with np.errstate(divide="ignore"):
            dist2 = np.where(inv_diag > 0, 1.0 / inv_diag - jitter, 0.0)
        dist2 = np.maximum(dist2, 0.0)
        g = self.group[keep]
        _, counts = np.unique(g, return_counts=True)
        dup = np.isin(g, np.unique(g)[counts > 1])
        dist2[dup] = 0.0
        return np.sqrt(r2 + np.sum(beta * beta, axis=1) * dist2)


def compress(f_in: DictionaryFunction, eps: float):
    """Greedy destructive KOMP.

    Repeatedly removes the atom with the smallest removal error (lowest index on
    ties) and re-fits the survivors to ``f_in`` while that error stays within
    ``eps``.  Returns ``(f_out, CompressionReport)`` with
    ``achieved_error = ||f_in - f_out||_H <= eps``.
    """
    if eps < 0:
        raise ValueError("compression budget must be nonnegative")
    M = f_in.model_order
    if M == 0:
        return f_in, CompressionReport(0, 0, 0.0, (), ())
    budget = max(float(eps), REDUNDANCY_TOL)
    tgt = _Target(f_in)
    keep = np.arange(M)
    beta = np.array(f_in.weights)
    r2 = 0.0
    err = 0.0
    trace = []
    while keep.size:
        gammas = tgt.sweep(keep, beta, r2)
        accepted = False
        for pos in np.argsort(gammas, kind="stable"):
            if gammas[pos] > budget:
                break
            cand = np.delete(keep, pos)
            cand_beta = tgt.fit(cand)
            cand_err = tgt.error(cand, cand_beta)
            if cand_err <= budget:
                trace.append((int(keep[pos]), float(gammas[pos])))
                keep, beta, err, r2 = cand, cand_beta, cand_err, cand_err ** 2
                accepted = True
                break
        if not accepted:
            break
    if keep.size == M:
        return f_in, CompressionReport(M, M, 0.0, (), tuple(range(M)))
    K_keep = tgt.K[np.ix_(keep, keep)]
    f_out = DictionaryFunction(f_in.kernel, f_in.dictionary[keep], beta, K_keep)
    report = CompressionReport(M, int(keep.size), err, tuple(trace),
                               tuple(int(k) for k in keep))
    return f_out, report
