"""Instantaneous losses, their scalar derivatives, and the sliding-window loss."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .rkhs import DictionaryFunction, evaluate_many, norm_sq

SQUARE = "square"
HINGE = "hinge"
LOGISTIC = "logistic"
FAMILIES = (SQUARE, HINGE, LOGISTIC)


@dataclass(frozen=True)
class LossSpec:
    """Loss family, Tikhonov weight ``reg`` (per sample) and output count.

    Hinge labels are ``1..n_classes``; logistic labels are ``-1`` / ``+1``.
    """

    family: str = SQUARE
    reg: float = 1e-4
    n_classes: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}")
        if self.reg < 0:
            raise ValueError("regularizer must be nonnegative")
        if self.family == HINGE:
            if self.n_classes < 2:
                raise ValueError("multiclass hinge needs n_classes >= 2")
        elif self.n_classes != 1:
            raise ValueError(f"{self.family} loss is single-output (n_classes=1)")

    @property
    def n_outputs(self) -> int:
        return self.n_classes

    def window_reg(self, H: int) -> float:
        """Effective regularizer ``lambda = reg * H`` of an H-window."""
        return self.reg * H

    def to_dict(self) -> dict:
        return {"family": self.family, "reg": self.reg, "n_classes": self.n_classes}


def _label(spec: LossSpec, target) -> int:
    y = int(target)
    if y != target or not 1 <= y <= spec.n_classes:
        raise ValueError(f"label {target!r} outside 1..{spec.n_classes}")
    return y - 1


def _hinge_parts(pred: np.ndarray, y: int):
    others = pred.copy()
    others[y] = -np.inf
    r = int(np.argmax(others))  # first index wins ties
    return r, 1.0 + pred[r] - pred[y]


def value(spec: LossSpec, prediction, target) -> float:
    """Unregularized instantaneous loss."""
    pred = np.atleast_1d(np.asarray(prediction, dtype=float))
    if pred.shape != (spec.n_outputs,):
        raise ValueError(f"prediction must have length {spec.n_outputs}")
    if spec.family == SQUARE:
        return float((pred[0] - float(target)) ** 2)
    if spec.family == LOGISTIC:
        if target not in (-1, 1):
            raise ValueError("logistic labels must be -1 or +1")
        return float(np.logaddexp(0.0, -float(target) * pred[0]))
    _, margin = _hinge_parts(pred, _label(spec, target))
    return float(max(0.0, margin))


def derivative(spec: LossSpec, prediction, target) -> np.ndarray:
    """Derivative (subgradient for hinge) of ``value`` w.r.t. the prediction."""
    pred = np.atleast_1d(np.asarray(prediction, dtype=float))
    if pred.shape != (spec.n_outputs,):
        raise ValueError(f"prediction must have length {spec.n_outputs}")
    if spec.family == SQUARE:
        return np.array([2.0 * (pred[0] - float(target))])
    if spec.family == LOGISTIC:
        if target not in (-1, 1):
            raise ValueError("logistic labels must be -1 or +1")
        y = float(target)
        return np.array([-y / (1.0 + np.exp(y * pred[0]))])
    y = _label(spec, target)
    r, margin = _hinge_parts(pred, y)
    g = np.zeros(spec.n_outputs)
    if margin > 0:
        g[r] = 1.0
        g[y] = -1.0
    return g


class WindowEntry(NamedTuple):
    x: np.ndarray
    y: float
    t: int


class WindowBuffer:
    """The last ``capacity`` (x, y, t) pairs in arrival order; oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = int(capacity)
        self._entries: deque = deque(maxlen=self.capacity)

    def push(self, x, y, t: int):
        """Append an entry; returns the evicted entry (or None)."""
        if self._entries and t <= self._entries[-1].t:
            raise ValueError("window entries must arrive in increasing t")
        evicted = self._entries[0] if len(self._entries) == self.capacity else None
        self._entries.append(WindowEntry(np.asarray(x, dtype=float).ravel(), y, int(t)))
        return evicted

    def copy(self) -> "WindowBuffer":
        out = WindowBuffer(self.capacity)
        out._entries.extend(self._entries)
        return out

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[WindowEntry]:
        return iter(self._entries)

    def __getitem__(self, i) -> WindowEntry:
        return self._entries[i]

    @property
    def points(self) -> np.ndarray:
        return np.array([e.x for e in self._entries])

    @property
    def targets(self) -> list:
        return [e.y for e in self._entries]


def data_loss(spec: LossSpec, buf: WindowBuffer, f: DictionaryFunction) -> float:
    """Sum of unregularized losses over the window."""
    if len(buf) == 0:
        raise RuntimeError("window loss of an empty buffer")
    preds = evaluate_many(f, buf.points)
    return float(sum(value(spec, p, e.y) for p, e in zip(preds, buf)))


def window_loss(spec: LossSpec, buf: WindowBuffer, f: DictionaryFunction) -> float:
    """``sum_tau loss(f(x_tau), y_tau) + (reg * h / 2) ||f||^2`` with ``h = len(buf)``."""
    return data_loss(spec, buf, f) + 0.5 * spec.reg * len(buf) * norm_sq(f)
