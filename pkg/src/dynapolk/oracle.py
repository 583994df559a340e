"""Comparator solvers and non-stationarity metrics (regret, path length, loss variation)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.special import logsumexp

from .kernel import KernelSpec, gram
from .loss import HINGE, LOGISTIC, SQUARE, LossSpec, WindowBuffer, value, window_loss
from .rkhs import DictionaryFunction, _factor, delta_norm, evaluate_many, norm_sq
from .streams import SplitMix64

N_PROBES = 16
_SMOOTHING = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


def _window_arrays(window):
    if isinstance(window, WindowBuffer):
        X, y = window.points, list(window.targets)
    else:
        X = np.array([np.asarray(e[0], dtype=float).ravel() for e in window])
        y = [e[1] for e in window]
    if len(y) == 0:
        raise ValueError("comparator needs a nonempty window")
    return X, y


def comparator_square(window, kernel: KernelSpec, lam: float) -> DictionaryFunction:
    """Exact minimizer of ``sum (f(x) - y)^2 + (lam / 2) ||f||^2``."""
    if not lam > 0:
        raise ValueError("comparator regularizer must be positive")
    X, y = _window_arrays(window)
    K = gram(kernel, X)
    alpha = np.linalg.solve(K + 0.5 * lam * np.eye(len(y)), np.asarray(y, dtype=float))
    return DictionaryFunction(kernel, X, alpha[:, None], K)


@dataclass
class IterativeResult:
    f: DictionaryFunction
    objective: float
    grad_norm: float
    converged: bool


def _objective(loss: LossSpec, y, lam: float, L: np.ndarray, mu: float, hessian=False):
    """Objective, gradient (and Hessian) in whitened coordinates ``u`` (``alpha = L^-T u``)."""
    h, C = L.shape[0], loss.n_outputs
    rows = np.arange(h)
    if loss.family == HINGE:
        labels = np.array([int(v) - 1 for v in y])
        delta = np.ones((h, C))
        delta[rows, labels] = 0.0
    yy = np.asarray(y, dtype=float)

    def fun(u_flat):
        U = u_flat.reshape(h, C)
        Z = L @ U
        reg = 0.5 * lam * float(np.sum(U * U))
        if loss.family == SQUARE:
            r = Z[:, 0] - yy
            G = (2.0 * r)[:, None]
            val = float(r @ r)
            B = np.full((h, 1, 1), 2.0)
        elif loss.family == LOGISTIC:
            m = -yy * Z[:, 0]
            val = float(np.sum(np.logaddexp(0.0, m)))
            s = np.exp(m - np.logaddexp(0.0, m))
            G = (-yy * s)[:, None]
            B = (s * (1.0 - s))[:, None, None]
        else:
            # log-sum-exp smoothing of max_c (delta_c + f_c - f_y); bias <= mu log C per term
            S = delta + Z - Z[rows, labels][:, None]
            lse = mu * logsumexp(S / mu, axis=1)
            P = np.exp(S / mu - (lse / mu)[:, None])
            G = P.copy()
            G[rows, labels] -= 1.0
            val = float(np.sum(lse))
            if hessian:
                A = np.repeat(np.eye(C)[None], h, axis=0)
                A[rows, :, labels] -= 1.0  # dS_i / dZ_i
                Hp = (np.einsum("ic,cd->icd", P, np.eye(C)) - P[:, :, None] * P[:, None, :]) / mu
                B = np.einsum("iac,iab,ibd->icd", A, Hp, A)
        grad = (L.T @ G + lam * U).ravel()
        if not hessian:
            return val + reg, grad
        Hm = np.einsum("ik,il,icd->kcld", L, L, B).reshape(h * C, h * C)
        Hm[np.diag_indices_from(Hm)] += lam
        return val + reg, grad, Hm

    return fun


_NEWTON_MAX_DIM = 1500


def _newton(fun, u, tol, max_iter):
    f, g, Hm = fun(u)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            break
        try:
            d = -np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            d = -g
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        a = 1.0
        while a > 1e-12:
            f2, g2, H2 = fun(u + a * d)
            if f2 <= f + 1e-4 * a * slope:
                break
            a *= 0.5
        else:
            break
        u, f, g, Hm = u + a * d, f2, g2, H2
    return u, g


def comparator_iterative(window, loss: LossSpec, kernel: KernelSpec, tol: float = 1e-6,
                         lam: Optional[float] = None, max_iter: int = 200,
                         restarts: int = 3, seed: int = 0) -> IterativeResult:
    """Window-supported minimizer of the regularized window loss by iterative descent.

    Coefficients are whitened by the Cholesky factor of the window Gram, so the
    Euclidean gradient equals the RKHS gradient restricted to the window span.
    The hinge is replaced by a log-sum-exp smoothing whose temperature is
    lowered in stages until its bias is under ``tol / 10``; each stage is a
    damped Newton solve warm-started from the previous one (L-BFGS for large
    windows).  Three deterministic starts are run and the best exact objective
    kept.  ``converged`` is set when the final smoothed gradient norm is at
    most ``tol``.
    """
    X, y = _window_arrays(window)
    h, C = len(y), loss.n_outputs
    lam = loss.reg * h if lam is None else lam
    K = gram(kernel, X)
    (Lc, _), _ = _factor(K)
    Lc = np.tril(Lc)
    rng = SplitMix64(seed)
    if loss.family == HINGE:
        mu_min = 0.1 * tol / (h * math.log(C))
        temps = [m for m in _SMOOTHING if m > mu_min] + [mu_min]
    else:
        temps = [0.0]
    newton = h * C <= _NEWTON_MAX_DIM
    best = None
    for k in range(restarts):
        u = np.zeros(h * C) if k == 0 else np.array([rng.normal() for _ in range(h * C)])
        for mu in temps:
            if newton:
                u, g = _newton(_objective(loss, y, lam, Lc, mu, hessian=True), u, 0.1 * tol, max_iter)
            else:
                res = minimize(_objective(loss, y, lam, Lc, mu), u, jac=True, method="L-BFGS-B",
                               options={"maxiter": 20 * max_iter, "gtol": 0.1 * tol, "ftol": 1e-15})
                u, g = res.x, res.jac
        alpha = solve_triangular(Lc, u.reshape(h, C), trans="T", lower=True)
        f = DictionaryFunction(kernel, X, alpha, K)
        obj = _exact_objective(loss, X, y, lam, f)
        gnorm = float(np.linalg.norm(g))
        cand = IterativeResult(f, obj, gnorm, gnorm <= tol)
        if best is None or cand.objective < best.objective:
            best = cand
    return best


def _exact_objective(loss: LossSpec, X, y, lam: float, f: DictionaryFunction) -> float:
    preds = evaluate_many(f, X)
    return float(sum(value(loss, p, t) for p, t in zip(preds, y))) + 0.5 * lam * norm_sq(f)


def comparator(window, loss: LossSpec, kernel: KernelSpec, lam: float,
               tol: float = 1e-6) -> DictionaryFunction:
    """Exact comparator for square loss, iterative otherwise."""
    if loss.family == SQUARE and lam > 0:
        return comparator_square(window, kernel, lam)
    return comparator_iterative(window, loss, kernel, tol, lam=lam).f


def subsample(n: int, cap: int) -> np.ndarray:
    """Deterministic stride subsample of ``min(n, cap)`` indices from ``range(n)``."""
    if n <= cap:
        return np.arange(n)
    return np.floor(np.arange(cap) * (n / cap)).astype(int)


def static_comparator(history: Sequence, loss: LossSpec, kernel: KernelSpec,
                      cap: int = 2000, tol: float = 1e-6) -> DictionaryFunction:
    """Best fixed function in hindsight, fit on at most ``cap`` stride-subsampled points.

    The objective is the sum of per-sample regularized losses, so the
    regularizer scales with the number of points used.
    """
    if len(history) == 0:
        raise ValueError("static comparator needs a nonempty history")
    idx = subsample(len(history), cap)
    pts = [(np.asarray(history[i][0], dtype=float).ravel(), history[i][1]) for i in idx]
    return comparator(pts, loss, kernel, loss.reg * len(pts), tol)


def make_probes(kernel: KernelSpec, X: np.ndarray, n_outputs: int, n: int = N_PROBES,
                atoms: int = 4, seed: int = 12345) -> list:
    """Fixed random dictionary functions anchored on sample points ``X``."""
    rng = SplitMix64(seed)
    X = np.asarray(X, dtype=float)
    probes = []
    for _ in range(n):
        idx = [rng.integer(X.shape[0]) for _ in range(atoms)]
        W = np.array([[rng.normal() for _ in range(n_outputs)] for _ in range(atoms)])
        probes.append(DictionaryFunction(kernel, X[idx], W))
    return probes


@dataclass
class LedgerEntry:
    t: int
    learner_loss: float
    comparator_loss: float
    regret: float
    path_increment: float
    variation_increment: float
    flagged: bool


@dataclass
class RegretLedger:
    """Streaming dynamic-regret, path-length and loss-variation accumulators."""

    loss: LossSpec
    kernel: KernelSpec
    probes: list = field(default_factory=list)
    tol: float = 1e-6
    entries: list = field(default_factory=list)
    reg_dynamic: float = 0.0
    path_length: float = 0.0
    variation_lower: float = 0.0
    prev_comparator: Optional[DictionaryFunction] = None
    _prev_probe_losses: Optional[np.ndarray] = None

    def update(self, f_learner: DictionaryFunction, window: WindowBuffer,
               prev_comparator: Optional[DictionaryFunction] = None) -> LedgerEntry:
        if f_learner.kernel != self.kernel:
            raise ValueError("learner and ledger kernels differ")
        lam = self.loss.reg * len(window)
        if self.loss.family == SQUARE and lam > 0:
            f_star = comparator_square(window, self.kernel, lam)
            flagged = False
        else:
            res = comparator_iterative(window, self.loss, self.kernel, self.tol, lam=lam)
            f_star, flagged = res.f, not res.converged
        learner_loss = window_loss(self.loss, window, f_learner)
        comp_loss = window_loss(self.loss, window, f_star)
        regret = learner_loss - comp_loss
        if regret < -1e-6:
            flagged = True
        prev = prev_comparator if prev_comparator is not None else self.prev_comparator
        dW = delta_norm(f_star, prev) if prev is not None else 0.0
        probe_losses = np.array([window_loss(self.loss, window, g) for g in self.probes])
        dV = 0.0
        if self._prev_probe_losses is not None and probe_losses.size:
            dV = float(np.max(np.abs(probe_losses - self._prev_probe_losses)))
        self._prev_probe_losses = probe_losses
        self.reg_dynamic += regret
        self.path_length += dW
        self.variation_lower += dV
        self.prev_comparator = f_star
        t = window[-1].t
        entry = LedgerEntry(t, learner_loss, comp_loss, regret, dW, dV, flagged)
        self.entries.append(entry)
        return entry


def update_ledger(ledger: RegretLedger, f_learner: DictionaryFunction, window: WindowBuffer,
                  prev_comparator: Optional[DictionaryFunction] = None) -> RegretLedger:
    ledger.update(f_learner, window, prev_comparator)
    return ledger
