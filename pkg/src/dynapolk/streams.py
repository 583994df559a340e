"""Non-stationary data streams: sine drift, drifting Gaussian mixtures, CSV files."""

from __future__ import annotations

import bisect
import csv
import gzip
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

PRNG_ALGORITHM = "splitmix64"
_MASK = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (64-bit state, Steele/Lea/Flood constants).

    Pure-integer core so that sequences are bit-identical on every platform.
    Uniforms take the top 53 bits; normals use the Box-Muller transform.
    """

    algorithm = PRNG_ALGORITHM

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK
        self._spare: Optional[float] = None

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform on [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return mean + std * z
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        rad = math.sqrt(-2.0 * math.log(u1))
        self._spare = rad * math.sin(2.0 * math.pi * u2)
        return mean + std * rad * math.cos(2.0 * math.pi * u2)

    def integer(self, n: int) -> int:
        """Uniform on ``0..n-1`` (rejection sampling, no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n


class StreamEvent(NamedTuple):
    t: int
    x: np.ndarray
    y: float


def _piecewise_linear(knots: Sequence[tuple], t: float) -> float:
    ts = [k[0] for k in knots]
    if t <= ts[0]:
        return float(knots[0][1])
    if t >= ts[-1]:
        return float(knots[-1][1])
    i = bisect.bisect_right(ts, t)
    (t0, v0), (t1, v1) = knots[i - 1], knots[i]
    return float(v0 + (v1 - v0) * (t - t0) / (t1 - t0))


@dataclass
class SineDriftSpec:
    """``y_t = a_t sin(b_t x_t + c_t) + noise``, x uniform on ``x_range``.

    Schedules are keyframe lists ``[(s, value), ...]`` in *fractions* of the
    horizon (s=0 maps to t=1, s=1 to t=T).  The default rises a_t, c_t from 0
    to 3 at the midpoint then falls to 1, with b_t ramping 0 -> 1.
    ``freeze_at`` (a step index) pins every schedule to its value there,
    giving a stationary control stream.
    """

    T: int = 5000
    noise_std: float = 0.1
    noise_mean: float = 0.0
    a_knots: list = field(default_factory=lambda: [(0.0, 0.0), (0.5, 3.0), (1.0, 1.0)])
    b_knots: list = field(default_factory=lambda: [(0.0, 0.0), (1.0, 1.0)])
    c_knots: list = field(default_factory=lambda: [(0.0, 0.0), (0.5, 3.0), (1.0, 1.0)])
    x_range: tuple = (-3.0, 3.0)
    freeze_at: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise std must be nonnegative")
        for name in ("a_knots", "b_knots", "c_knots"):
            knots = [tuple(map(float, k)) for k in getattr(self, name)]
            if not knots or any(b[0] <= a[0] for a, b in zip(knots, knots[1:])):
                raise ValueError(f"{name} must be nonempty with increasing positions")
            if knots[0][0] != 0.0 or knots[-1][0] != 1.0:
                raise ValueError(f"{name} must span positions 0..1")
            setattr(self, name, knots)
        self.x_range = tuple(map(float, self.x_range))

    def _position(self, t: int) -> float:
        return 0.0 if self.T == 1 else (t - 1) / (self.T - 1)

    def params(self, t: int) -> tuple:
        """``(a_t, b_t, c_t)``."""
        if self.freeze_at is not None:
            t = self.freeze_at
        s = self._position(t)
        return tuple(_piecewise_linear(k, s) for k in (self.a_knots, self.b_knots, self.c_knots))

    def target(self, t: int, x: float) -> float:
        a, b, c = self.params(t)
        return a * math.sin(b * x + c)

    def to_dict(self) -> dict:
        return {"kind": "sine", "T": self.T, "noise_std": self.noise_std,
                "noise_mean": self.noise_mean, "a_knots": [list(k) for k in self.a_knots],
                "b_knots": [list(k) for k in self.b_knots],
                "c_knots": [list(k) for k in self.c_knots], "x_range": list(self.x_range),
                "freeze_at": self.freeze_at, "seed": self.seed, "prng": PRNG_ALGORITHM}


class SineDriftStream:
    """Iterator over :class:`StreamEvent` for a :class:`SineDriftSpec`."""

    def __init__(self, spec: SineDriftSpec):
        self.spec = spec
        self.rng = SplitMix64(spec.seed)
        self.t = 0

    def __iter__(self):
        return self

    def __next__(self) -> StreamEvent:
        if self.t >= self.spec.T:
            raise StopIteration
        self.t += 1
        s = self.spec
        x = self.rng.uniform(*s.x_range)
        noise = self.rng.normal(s.noise_mean, s.noise_std) if s.noise_std > 0 else s.noise_mean
        return StreamEvent(self.t, np.array([x]), s.target(self.t, x) + noise)


@dataclass
class MixtureDriftSpec:
    """Gaussian-mixture classes with a rightward drift after a stationary phase.

    Class means ``theta_y`` sit equally spaced on the unit circle from angle 0;
    each class has ``n_sub`` submixture means drawn from ``N(theta_y, class_var I)``;
    samples are ``N(mu_{y,j}, component_var I)``.  After ``stationary`` steps, every
    point is shifted by ``drift * (t - stationary)`` along the first coordinate.
    """

    n_classes: int = 5
    stationary: int = 2500
    drifting: int = 2500
    n_sub: int = 3
    class_var: float = 1.0
    component_var: float = 0.2
    drift: float = 0.1
    dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.class_var <= 0 or self.component_var <= 0:
            raise ValueError("variances must be positive")
        if self.n_classes < 2 or self.n_sub < 1 or self.dim < 2:
            raise ValueError("need n_classes >= 2, n_sub >= 1, dim >= 2")

    @property
    def T(self) -> int:
        return self.stationary + self.drifting

    def class_centers(self) -> np.ndarray:
        ang = 2.0 * np.pi * np.arange(self.n_classes) / self.n_classes
        centers = np.zeros((self.n_classes, self.dim))
        centers[:, 0], centers[:, 1] = np.cos(ang), np.sin(ang)
        return centers

    def offset(self, t: int) -> float:
        return self.drift * (t - self.stationary) if t > self.stationary else 0.0

    def to_dict(self) -> dict:
        return {"kind": "mixture", "n_classes": self.n_classes, "stationary": self.stationary,
                "drifting": self.drifting, "n_sub": self.n_sub, "class_var": self.class_var,
                "component_var": self.component_var, "drift": self.drift, "dim": self.dim,
                "seed": self.seed, "prng": PRNG_ALGORITHM}


class MixtureDriftStream:
    def __init__(self, spec: MixtureDriftSpec):
        self.spec = spec
        self.rng = SplitMix64(spec.seed)
        sd = math.sqrt(spec.class_var)
        centers = spec.class_centers()
        self.sub_means = np.array([[[self.rng.normal(c, sd) for c in centers[y]]
                                    for _ in range(spec.n_sub)]
                                   for y in range(spec.n_classes)])
        self.t = 0

    def __iter__(self):
        return self

    def __next__(self) -> StreamEvent:
        s = self.spec
        if self.t >= s.T:
            raise StopIteration
        self.t += 1
        y = self.rng.integer(s.n_classes)
        j = self.rng.integer(s.n_sub)
        sd = math.sqrt(s.component_var)
        x = np.array([self.rng.normal(m, sd) for m in self.sub_means[y, j]])
        x[0] += s.offset(self.t)
        return StreamEvent(self.t, x, y + 1)


# -- CSV ----------------------------------------------------------------------

class SchemaError(ValueError):
    pass


class CSVParseError(ValueError):
    pass


@dataclass
class CSVSchema:
    """Which columns hold features/target; ``label_mode`` 'real' or 'class'."""

    features: Sequence[str]
    target: str
    label_mode: str = "real"

    def __post_init__(self):
        if self.label_mode not in ("real", "class"):
            raise ValueError("label_mode must be 'real' or 'class'")
        if not self.features:
            raise ValueError("at least one feature column is required")


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def load_csv(path, schema: CSVSchema) -> Iterator[StreamEvent]:
    """Yield events from a headered CSV file (gzip if the name ends in ``.gz``)."""
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        header = [h.strip() for h in header]
        cols = {}
        for name in list(schema.features) + [schema.target]:
            if name not in header:
                raise SchemaError(f"line 1: missing column {name!r}")
            cols[name] = header.index(name)
        fidx = [cols[n] for n in schema.features]
        tidx = cols[schema.target]
        t = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")

            def num(i):
                try:
                    return float(row[i])
                except ValueError:
                    raise CSVParseError(f"line {lineno}, column {header[i]!r}: "
                                        f"non-numeric value {row[i]!r}") from None

            x = np.array([num(i) for i in fidx])
            y = num(tidx)
            if schema.label_mode == "class":
                if y != int(y):
                    raise CSVParseError(f"line {lineno}, column {schema.target!r}: "
                                        f"non-integral label {row[tidx]!r}")
                y = int(y)
            t += 1
            yield StreamEvent(t, x, y)


def write_csv(path, events, feature_names: Optional[Sequence[str]] = None,
              target_name: str = "y") -> None:
    """Export events in the format read by :func:`load_csv` (17 significant digits)."""
    events = list(events)
    p = events[0].x.size if events else len(feature_names or [])
    names = list(feature_names) if feature_names else [f"x{i + 1}" for i in range(p)]
    opener = gzip.open(path, "wt", encoding="utf-8", newline="") if str(path).endswith(".gz") \
        else open(path, "w", encoding="utf-8", newline="")
    with opener as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + [target_name])
        for e in events:
            y = e.y if isinstance(e.y, (int, np.integer)) else format(float(e.y), ".17g")
            w.writerow([format(float(v), ".17g") for v in e.x] + [y])
