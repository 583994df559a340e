"""DynaPOLK: windowed functional online gradient descent with KOMP compression."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .kernel import KernelSpec, gram, kernel_diag
from .komp import CompressionReport, compress
from .loss import LossSpec, WindowBuffer, derivative, window_loss
from .rkhs import DictionaryFunction, NumericalError, evaluate, evaluate_many, norm

PRUNED = -1


@dataclass(frozen=True)
class Schedule:
    """A constant, or ``scale * T ** -exponent`` resolved once the horizon is known."""

    kind: str = "constant"
    value: float = 0.0
    exponent: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls("constant", value=float(value))

    @classmethod
    def power(cls, exponent: float, scale: float = 1.0) -> "Schedule":
        return cls("power", exponent=float(exponent), scale=float(scale))

    def resolve(self, T: Optional[int] = None) -> float:
        if self.kind == "constant":
            return self.value
        if T is None:
            raise ValueError("a power schedule needs the horizon T")
        return self.scale * float(T) ** (-self.exponent)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": "power", "exponent": self.exponent, "scale": self.scale}

    @classmethod
    def from_value(cls, v) -> "Schedule":
        if isinstance(v, Schedule):
            return v
        if isinstance(v, dict):
            return cls(**v)
        return cls.constant(float(v))


@dataclass(frozen=True)
class LearnerConfig:
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec.gaussian(0.252))
    loss: LossSpec = field(default_factory=LossSpec)
    step_size: float = 0.1
    budget: float = 0.0
    window: int = 1

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.budget < 0:
            raise ValueError("compression budget must be nonnegative")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.step_size * self.lam >= 1.0:
            raise ValueError(f"step size {self.step_size} violates eta * lambda < 1 "
                             f"(lambda = {self.lam})")

    @property
    def lam(self) -> float:
        """Window regularizer ``lambda = reg * H``."""
        return self.loss.window_reg(self.window)

    @property
    def decay(self) -> float:
        return 1.0 - self.step_size * self.lam

    @classmethod
    def with_schedules(cls, kernel: KernelSpec, loss: LossSpec, eta: Schedule,
                       eps: Schedule, window: int, T: Optional[int] = None) -> "LearnerConfig":
        return cls(kernel, loss, eta.resolve(T), eps.resolve(T), window)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "loss": self.loss.to_dict(),
                "step_size": self.step_size, "budget": self.budget, "window": self.window}


@dataclass
class MetricsRecord:
    t: int
    loss: float
    model_order: int
    f_norm: float
    atoms_removed: int
    compression_error: float
    step_us: int
    reg_dynamic: float = float("nan")
    reg_static: float = float("nan")
    comparator_loss: float = float("nan")
    misclassified: Optional[int] = None
    numeric_failure: bool = False
    regret_flag: bool = False


@dataclass
class LearnerState:
    """Current iterate, data window and the atom index of every window entry."""

    f: DictionaryFunction
    buffer: WindowBuffer
    t: int = 0
    window_atoms: list = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: LearnerConfig, dim: int) -> "LearnerState":
        f0 = DictionaryFunction.zero(cfg.kernel, dim, cfg.loss.n_outputs)
        return cls(f0, WindowBuffer(cfg.window), 0, [])

    def copy(self) -> "LearnerState":
        return LearnerState(self.f, self.buffer.copy(), self.t, list(self.window_atoms))


def predict(state: LearnerState, x) -> np.ndarray:
    return evaluate(state.f, x)


def _extended_gram(f: DictionaryFunction, x: np.ndarray) -> np.ndarray:
    M = f.model_order
    K = np.empty((M + 1, M + 1))
    K[:M, :M] = f.gram()
    if M:
        k = gram(f.kernel, f.dictionary, x[None, :])[:, 0]
        K[:M, M] = k
        K[M, :M] = k
    K[M, M] = kernel_diag(f.kernel, x[None, :])[0]
    return K


def gradient_step(state: LearnerState, cfg: LearnerConfig) -> DictionaryFunction:
    """Unprojected iterate: decayed weights, window refresh, new atom at ``x_t``.

    Assumes the newest event is already in ``state.buffer``.  All derivatives
    use the pre-step function.
    """
    f = state.f
    buf = state.buffer
    preds = evaluate_many(f, buf.points)
    grads = [derivative(cfg.loss, p, e.y) for p, e in zip(preds, buf)]
    W = cfg.decay * np.array(f.weights)
    for atom, g in zip(state.window_atoms, grads[:-1]):
        if atom != PRUNED:
            W[atom] -= cfg.step_size * g
    x_new = buf[-1].x
    W = np.vstack([W, -cfg.step_size * grads[-1]])
    D = np.vstack([f.dictionary, x_new[None, :]])
    return DictionaryFunction(f.kernel, D, W, _extended_gram(f, x_new))


def step(state: LearnerState, cfg: LearnerConfig, event) -> tuple:
    """One round of the online loop; returns ``(new_state, MetricsRecord)``.

    The input state is not modified.  On a numerical failure the returned
    state equals the input and the record has ``numeric_failure`` set.
    """
    tic = time.perf_counter()
    x = np.asarray(event.x, dtype=float).ravel()
    if x.size != state.f.dim:
        raise ValueError(f"event has {x.size} features, learner expects {state.f.dim}")
    new = state.copy()
    evicted = new.buffer.push(x, event.y, event.t)
    if evicted is not None:
        new.window_atoms.pop(0)
    loss_before = window_loss(cfg.loss, new.buffer, state.f)
    try:
        f_tilde = gradient_step(new, cfg)
        f_next, report = compress(f_tilde, cfg.budget)
    except NumericalError:
        us = int(round((time.perf_counter() - tic) * 1e6))
        rec = MetricsRecord(event.t, loss_before, state.f.model_order, norm(state.f), 0,
                            0.0, us, numeric_failure=True)
        return state, rec
    remap = {old: i for i, old in enumerate(report.kept)}
    atoms = new.window_atoms + [f_tilde.model_order - 1]
    new.window_atoms = [remap.get(a, PRUNED) if a != PRUNED else PRUNED for a in atoms]
    new.f = f_next
    new.t = state.t + 1
    us = int(round((time.perf_counter() - tic) * 1e6))
    rec = MetricsRecord(event.t, loss_before, f_next.model_order, norm(f_next),
                        report.atoms_removed, report.achieved_error, us)
    return new, rec


class DynaPOLK:
    """Stateful convenience wrapper around :func:`step`."""

    def __init__(self, cfg: LearnerConfig, dim: int):
        self.cfg = cfg
        self.state = LearnerState.initial(cfg, dim)
        self.last_report: Optional[CompressionReport] = None

    @property
    def f(self) -> DictionaryFunction:
        return self.state.f

    def predict(self, x) -> np.ndarray:
        return predict(self.state, x)

    def update(self, event) -> MetricsRecord:
        self.state, rec = step(self.state, self.cfg, event)
        return rec
