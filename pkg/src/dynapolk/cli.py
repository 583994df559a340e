"""Command-line experiment runner: ``run``, ``report`` and ``sweep``.

Settings resolve in the order defaults < ``--config`` JSON file < ``DYNAPOLK_*``
environment variables < command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .kernel import KernelSpec
from .learner import LearnerConfig, LearnerState, Schedule, predict, step
from .loss import HINGE, LOGISTIC, SQUARE, LossSpec, value
from .oracle import RegretLedger, make_probes, static_comparator
from .rkhs import evaluate_many, norm_sq, save
from .streams import (CSVSchema, MixtureDriftSpec, MixtureDriftStream, SineDriftSpec,
                      SineDriftStream, load_csv)

ENV_PREFIX = "DYNAPOLK_"
METRICS_HEADER = ("t", "loss", "reg_dynamic", "reg_static", "model_order", "f_norm",
                  "atoms_removed", "comparator_loss", "misclassified", "step_us")
EXIT_CONFIG, EXIT_NUMERIC = 2, 3

DEFAULTS = {
    "stream": "sine",
    "T": 5000,
    "eta": "auto",
    "epsilon": "auto",
    "window": 1,
    "kernel": "gaussian",
    "bandwidth": "auto",
    "offset": 0.0,
    "degree": 2,
    "loss": "auto",
    "reg": "auto",
    "classes": 5,
    "seed": 0,
    "out": "run",
    "comparator": "dynamic",
    "static_cap": 2000,
    "stationary": False,
    "noise_std": 0.1,
    "drift": 0.1,
    "csv": None,
    "features": None,
    "target": "y",
    "segments": None,
    "tol": 1e-6,
    "timing": False,
}

# per-stream values for settings left at "auto"
STREAM_DEFAULTS = {
    "sine": {"eta": "T^-0.4", "epsilon": "T^-0.1", "bandwidth": 0.252, "loss": SQUARE,
             "reg": 1e-4},
    "mixture": {"eta": "0.5", "epsilon": "0.1", "bandwidth": 0.5, "loss": HINGE, "reg": 0.02},
    "csv": {"eta": "T^-0.5", "epsilon": "T^-0.5", "bandwidth": 0.252, "loss": SQUARE,
            "reg": 1e-4},
}

_INT_KEYS = {"T", "window", "degree", "classes", "seed", "static_cap"}
_FLOAT_KEYS = {"offset", "reg", "noise_std", "drift", "tol"}
_BOOL_KEYS = {"stationary", "timing"}


class ConfigError(ValueError):
    pass


def parse_schedule(text) -> Schedule:
    """``0.1`` (constant), ``T^-0.4`` or ``2*T^-0.5`` (power of the horizon)."""
    if isinstance(text, (int, float)):
        return Schedule.constant(float(text))
    s = str(text).replace(" ", "")
    m = re.fullmatch(r"(?:([0-9.eE+-]+)\*)?T\^\(?-([0-9.eE+]+)\)?", s)
    if m:
        return Schedule.power(float(m.group(2)), float(m.group(1)) if m.group(1) else 1.0)
    try:
        return Schedule.constant(float(s))
    except ValueError:
        raise ConfigError(f"cannot parse schedule {text!r} (use a number or c*T^-p)") from None


def _coerce(key, v):
    if v is None or v == "auto":
        return v
    try:
        if key in _INT_KEYS:
            return int(v)
        if key in _FLOAT_KEYS:
            return float(v)
        if key in _BOOL_KEYS:
            if isinstance(v, str):
                return v.strip().lower() in ("1", "true", "yes", "on")
            return bool(v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {v!r}") from None
    return v


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    # a run manifest is also a valid config file
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return data


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in DEFAULTS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = environ[name]
    return out


def resolve_config(file_cfg: Optional[dict] = None, env: Optional[dict] = None,
                   flags: Optional[dict] = None) -> dict:
    cfg = dict(DEFAULTS)
    for layer in (file_cfg or {}, env or {}, flags or {}):
        for k, v in layer.items():
            if v is not None:
                cfg[k] = _coerce(k, v)
    if cfg["stream"] not in STREAM_DEFAULTS:
        raise ConfigError(f"unknown stream {cfg['stream']!r}")
    for k, v in STREAM_DEFAULTS[cfg["stream"]].items():
        if cfg[k] == "auto":
            cfg[k] = _coerce(k, v)
    if cfg["comparator"] not in ("none", "dynamic", "both"):
        raise ConfigError("comparator must be none, dynamic or both")
    if cfg["T"] < 1:
        raise ConfigError("T must be >= 1")
    return cfg


@dataclass
class Plan:
    """Fully concrete objects built from a resolved config."""

    cfg: dict
    learner: LearnerConfig
    stream_spec: object
    dim: int
    segments: list = field(default_factory=list)

    def stream(self):
        c = self.cfg
        if c["stream"] == "sine":
            return SineDriftStream(self.stream_spec)
        if c["stream"] == "mixture":
            return MixtureDriftStream(self.stream_spec)
        return itertools.islice(load_csv(c["csv"], self.stream_spec), c["T"])


def build_plan(cfg: dict) -> Plan:
    """Validate everything and build the learner/stream before any computation."""
    try:
        T = cfg["T"]
        kind = cfg["stream"]
        if kind == "sine":
            spec = SineDriftSpec(T=T, noise_std=cfg["noise_std"], seed=cfg["seed"],
                                 freeze_at=T if cfg["stationary"] else None)
            dim = 1
        elif kind == "mixture":
            half = T // 2
            spec = MixtureDriftSpec(n_classes=cfg["classes"], stationary=half,
                                    drifting=T - half, drift=0.0 if cfg["stationary"] else cfg["drift"],
                                    seed=cfg["seed"])
            dim = spec.dim
        else:
            if cfg["csv"] is None:
                raise ConfigError("csv stream needs --csv PATH")
            feats = cfg["features"]
            if isinstance(feats, str):
                feats = [s for s in feats.split(",") if s]
            if not feats:
                raise ConfigError("csv stream needs --features a,b,...")
            cfg["features"] = list(feats)
            mode = "real" if cfg["loss"] == SQUARE else "class"
            spec = CSVSchema(cfg["features"], cfg["target"], mode)
            dim = len(feats)
        if cfg["kernel"] == "gaussian":
            kern = KernelSpec.gaussian(float(cfg["bandwidth"]))
        elif cfg["kernel"] == "polynomial":
            kern = KernelSpec.polynomial(cfg["offset"], cfg["degree"])
        else:
            raise ConfigError(f"unknown kernel {cfg['kernel']!r}")
        n_cls = cfg["classes"] if cfg["loss"] == HINGE else 1
        loss = LossSpec(cfg["loss"], cfg["reg"], n_cls)
        eta = parse_schedule(cfg["eta"]).resolve(T)
        eps = parse_schedule(cfg["epsilon"]).resolve(T)
        learner = LearnerConfig(kern, loss, eta, eps, cfg["window"])
        segments = parse_segments(cfg["segments"], T)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return Plan(cfg, learner, spec, dim, segments)


def parse_segments(text, T: int) -> list:
    """Boundaries ``"2500,4000"`` -> ``[(1, 2500), (2501, 4000), (4001, T)]``."""
    if text in (None, ""):
        return [(1, T)]
    cuts = sorted({int(v) for v in (text.split(",") if isinstance(text, str) else text)})
    cuts = [c for c in cuts if 1 <= c < T] + [T]
    out, lo = [], 1
    for c in cuts:
        out.append((lo, c))
        lo = c + 1
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


@dataclass
class RunResult:
    rows: list
    status: int
    state: LearnerState
    plan: Plan
    runtime_s: float
    ledger: Optional[RegretLedger] = None
    flagged_steps: int = 0


def _misclassified(loss: LossSpec, pred: np.ndarray, y) -> Optional[int]:
    if loss.family == HINGE:
        return int(int(np.argmax(pred)) + 1 != int(y))
    if loss.family == LOGISTIC:
        return int((1 if pred[0] > 0 else -1) != int(y))
    return None


def _probe_anchors(plan: Plan) -> np.ndarray:
    # fixed grid on [-3, 3]^p (p <= 2) or a seeded box sample
    p = plan.dim
    g = np.linspace(-3.0, 3.0, 9)
    if p == 1:
        return g[:, None]
    if p == 2:
        return np.array([[a, b] for a in g for b in g])
    from .streams import SplitMix64
    rng = SplitMix64(777)
    return np.array([[rng.uniform(-3.0, 3.0) for _ in range(p)] for _ in range(81)])


def _static_column(plan: Plan, history: list, losses: list) -> list:
    """Cumulative static regret ``sum_s L_s(f_s) - L_s(f*)`` for every step."""
    lc = plan.learner
    f_star = static_comparator(history, lc.loss, lc.kernel, plan.cfg["static_cap"],
                               plan.cfg["tol"])
    X = np.array([h[0] for h in history])
    preds = np.concatenate([evaluate_many(f_star, X[i:i + 1000])
                            for i in range(0, len(X), 1000)])
    point = np.array([value(lc.loss, p, h[1]) for p, h in zip(preds, history)])
    csum = np.concatenate([[0.0], np.cumsum(point)])
    nsq = norm_sq(f_star)
    H = lc.window
    out, acc = [], 0.0
    for s in range(1, len(history) + 1):
        lo = max(0, s - H)
        comp = csum[s] - csum[lo] + 0.5 * lc.loss.reg * (s - lo) * nsq
        acc += losses[s - 1] - comp
        out.append(acc)
    return out


def execute(plan: Plan, progress=None) -> RunResult:
    """Run the online loop; returns rows (dicts keyed by METRICS_HEADER)."""
    cfg, lc = plan.cfg, plan.learner
    tic = time.perf_counter()
    state = LearnerState.initial(lc, plan.dim)
    ledger = None
    if cfg["comparator"] in ("dynamic", "both"):
        probes = make_probes(lc.kernel, _probe_anchors(plan), lc.loss.n_outputs)
        ledger = RegretLedger(lc.loss, lc.kernel, probes, cfg["tol"])
    rows, history, losses = [], [], []
    status, flagged = 0, 0
    for ev in plan.stream():
        pred = predict(state, ev.x)
        new, rec = step(state, lc, ev)
        row = {"t": rec.t, "loss": rec.loss, "reg_dynamic": float("nan"),
               "reg_static": float("nan"), "model_order": rec.model_order,
               "f_norm": rec.f_norm, "atoms_removed": rec.atoms_removed,
               "comparator_loss": float("nan"),
               "misclassified": _misclassified(lc.loss, pred, ev.y),
               "step_us": rec.step_us if cfg["timing"] else 0}
        if rec.numeric_failure:
            rows.append(row)
            status = EXIT_NUMERIC
            break
        if ledger is not None:
            entry = ledger.update(state.f, new.buffer)
            row["reg_dynamic"] = ledger.reg_dynamic
            row["comparator_loss"] = entry.comparator_loss
            flagged += entry.flagged
        rows.append(row)
        history.append((np.asarray(ev.x, dtype=float).ravel(), ev.y))
        losses.append(rec.loss)
        state = new
        if progress is not None:
            progress(rec.t)
    if cfg["comparator"] == "both" and history and status == 0:
        for row, v in zip(rows, _static_column(plan, history, losses)):
            row["reg_static"] = v
    return RunResult(rows, status, state, plan, time.perf_counter() - tic, ledger, flagged)


def write_metrics(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[k]) for k in METRICS_HEADER) + "\n")


def manifest(plan: Plan, result: Optional[RunResult] = None) -> dict:
    out = {
        "library": "dynapolk",
        "version": __version__,
        "config": plan.cfg,
        "resolved": {"learner": plan.learner.to_dict(),
                     "stream": plan.stream_spec.to_dict() if hasattr(plan.stream_spec, "to_dict")
                     else {"kind": "csv", "path": plan.cfg["csv"],
                           "features": list(plan.stream_spec.features),
                           "target": plan.stream_spec.target,
                           "label_mode": plan.stream_spec.label_mode},
                     "segments": plan.segments},
        "outputs": {"metrics": "metrics.csv", "model": "model.txt"},
    }
    if result is not None:
        out["status"] = result.status
        out["steps"] = len(result.rows)
        out["flagged_steps"] = result.flagged_steps
        out["runtime_s"] = round(result.runtime_s, 3) if plan.cfg["timing"] else None
    return out


def run(cfg: dict, out_dir=None, progress=None) -> RunResult:
    plan = build_plan(cfg)
    out = Path(out_dir if out_dir is not None else cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    result = execute(plan, progress)
    write_metrics(out / "metrics.csv", result.rows)
    save(result.state.f, out / "model.txt")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest(plan, result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


# -- report -------------------------------------------------------------------

class MetricsParseError(ValueError):
    pass


def read_metrics(path) -> dict:
    """Columns of a metrics CSV as float arrays (empty cells become NaN)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != METRICS_HEADER:
            raise MetricsParseError(f"line 1: expected header {','.join(METRICS_HEADER)}")
        cols = [[] for _ in METRICS_HEADER]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(METRICS_HEADER):
                raise MetricsParseError(f"line {lineno}: expected {len(METRICS_HEADER)} "
                                        f"fields, got {len(row)}")
            for c, v in zip(cols, row):
                try:
                    c.append(float(v) if v != "" else float("nan"))
                except ValueError:
                    raise MetricsParseError(f"line {lineno}: non-numeric value {v!r}") from None
    return {k: np.array(c) for k, c in zip(METRICS_HEADER, cols)}


def loglog_slope(t, y, t_min: Optional[float] = None, t_max: Optional[float] = None) -> float:
    """Least-squares slope of ``log y`` against ``log t`` over positive, finite entries."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    m = np.isfinite(y) & (y > 0) & (t > 0)
    if t_min is not None:
        m &= t >= t_min
    if t_max is not None:
        m &= t <= t_max
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[m]), np.log(y[m]), 1)[0])


def squared_errors(cols: dict, reg: float = 0.0, window: int = 1) -> np.ndarray:
    """Per-step mean squared error recovered from the windowed loss column.

    The regularizer of row t uses the norm of the iterate in force at t, which
    is the ``f_norm`` written on row t-1 (zero before the first row).
    """
    t = cols["t"]
    prev_norm = np.concatenate([[0.0], cols["f_norm"][:-1]])
    h = np.minimum(np.arange(1, t.size + 1), window)
    return (cols["loss"] - 0.5 * reg * h * prev_norm ** 2) / h


def summarize(cols: dict, segments, reg: float = 0.0, window: int = 1) -> list:
    t = cols["t"]
    se = squared_errors(cols, reg, window)
    out = []
    for lo, hi in segments:
        m = (t >= lo) & (t <= hi)
        if not m.any():
            continue
        mis = cols["misclassified"][m]
        mis = mis[np.isfinite(mis)]
        rec = {"segment": f"{lo}-{hi}", "rows": int(m.sum()),
               "mean_loss": float(np.mean(cols["loss"][m])),
               "mse": float(np.mean(se[m])),
               "mis_rate": float(np.mean(mis)) if mis.size else float("nan"),
               "mean_M": float(np.mean(cols["model_order"][m])),
               "max_M": int(np.max(cols["model_order"][m])),
               "slope_dynamic": loglog_slope(t[m], cols["reg_dynamic"][m]),
               "slope_static": loglog_slope(t[m], cols["reg_static"][m])}
        rec["mse_1e-3"] = rec["mse"] * 1e3
        out.append(rec)
    return out


REPORT_COLUMNS = ("segment", "rows", "mean_loss", "mse", "mse_1e-3", "mis_rate",
                  "mean_M", "max_M", "slope_dynamic", "slope_static")


def format_report(summary: list) -> str:
    def cell(v):
        if isinstance(v, str):
            return v
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return "nan" if math.isnan(v) else f"{v:.6g}"

    table = [list(REPORT_COLUMNS)] + [[cell(r[c]) for c in REPORT_COLUMNS] for r in summary]
    widths = [max(len(row[i]) for row in table) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in table)


def report(metrics_path, segments=None, manifest_path=None) -> list:
    cols = read_metrics(metrics_path)
    reg, window = 0.0, 1
    mpath = Path(manifest_path) if manifest_path else Path(metrics_path).with_name("manifest.json")
    if mpath.exists():
        with open(mpath, encoding="utf-8") as fh:
            learner = json.load(fh)["resolved"]["learner"]
        if learner["loss"]["family"] == SQUARE:
            reg, window = learner["loss"]["reg"], learner["window"]
    T = int(cols["t"][-1]) if cols["t"].size else 0
    return summarize(cols, parse_segments(segments, T) if T else [], reg, window)


# -- sweep --------------------------------------------------------------------

def sweep(cfg: dict, eta_exponents, eps_exponents, out_dir) -> list:
    """Grid over ``eta = T^-a`` and ``epsilon = T^-p``; one run directory per cell."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for a, p in itertools.product(eta_exponents, eps_exponents):
        cell = dict(cfg, eta=f"T^-{a}", epsilon=f"T^-{p}")
        d = out / f"eta{a}_eps{p}"
        res = run(cell, d)
        cols = read_metrics(d / "metrics.csv")
        T = cols["t"]
        summary.append({"eta_exp": a, "eps_exp": p, "status": res.status,
                        "final_reg_dynamic": float(cols["reg_dynamic"][-1]),
                        "slope_dynamic": loglog_slope(T, cols["reg_dynamic"], 0.1 * T[-1]),
                        "mean_M": float(np.mean(cols["model_order"])),
                        "max_M": int(np.max(cols["model_order"]))})
    keys = list(summary[0]) if summary else []
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(keys) + "\n")
        for r in summary:
            fh.write(",".join(_fmt(r[k]) if not isinstance(r[k], str) else r[k] for k in keys) + "\n")
    return summary


# -- argument parsing ---------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (a run manifest also works)")
    p.add_argument("--stream", choices=sorted(STREAM_DEFAULTS))
    p.add_argument("--T", type=int, dest="T")
    p.add_argument("--eta", help="step size: number or c*T^-p")
    p.add_argument("--epsilon", help="compression budget: number or c*T^-p")
    p.add_argument("--window", type=int)
    p.add_argument("--kernel", choices=["gaussian", "polynomial"])
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--offset", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--loss", choices=[SQUARE, HINGE, LOGISTIC])
    p.add_argument("--reg", type=float, help="per-sample regularizer lambda'")
    p.add_argument("--classes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--comparator", choices=["none", "dynamic", "both"])
    p.add_argument("--static-cap", type=int, dest="static_cap")
    p.add_argument("--stationary", action="store_const", const=True,
                   help="freeze the drift (stationary control stream)")
    p.add_argument("--noise-std", type=float, dest="noise_std")
    p.add_argument("--drift", type=float)
    p.add_argument("--csv")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--target")
    p.add_argument("--segments", help="comma-separated segment end steps")
    p.add_argument("--tol", type=float)
    p.add_argument("--timing", action="store_const", const=True,
                   help="record wall-clock step_us and runtime (breaks byte-identity)")


_NON_CONFIG = {"command", "config", "metrics", "manifest", "eta_exponents", "eps_exponents"}


def _resolve_from_args(args) -> dict:
    file_cfg = load_config_file(args.config) if args.config else None
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return resolve_config(file_cfg, env_overrides(), flags)


def _floats(text) -> list:
    return [float(v) for v in text.split(",") if v]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dynapolk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run one experiment"))
    rp = sub.add_parser("report", help="summarize a metrics CSV")
    rp.add_argument("metrics")
    rp.add_argument("--segments")
    rp.add_argument("--manifest")
    rp.add_argument("--json", action="store_true")
    sp = sub.add_parser("sweep", help="grid over eta/epsilon exponents")
    _add_run_flags(sp)
    sp.add_argument("--eta-exponents", default="0.25,0.4,0.5", dest="eta_exponents")
    sp.add_argument("--eps-exponents", default="0.1,0.5,1.0", dest="eps_exponents")
    args = parser.parse_args(argv)

    try:
        if args.command == "report":
            summary = report(args.metrics, args.segments, args.manifest)
            print(json.dumps(summary, indent=2) if args.json else format_report(summary))
            return 0
        cfg = _resolve_from_args(args)
        if args.command == "run":
            res = run(cfg)
            print(f"wrote {cfg['out']}: {len(res.rows)} steps, final M={res.state.f.model_order}")
            return res.status
        summary = sweep(cfg, _floats(args.eta_exponents), _floats(args.eps_exponents), cfg["out"])
        print(f"wrote {cfg['out']}/sweep.csv ({len(summary)} cells)")
        return max((r["status"] for r in summary), default=0)
    except (ConfigError, MetricsParseError, OSError, json.JSONDecodeError) as exc:
        print(f"dynapolk: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
