"""Experiment orchestration: config handling, training runs, sweeps and export.

A run directory holds

* ``config.yaml``      the fully resolved configuration,
* ``history.csv``      loss at every optimizer iteration,
* ``checkpoints.csv``  per-term losses and field errors every ``checkpoint_every`` iterations,
* ``errors.csv``       the final error report on the full evaluation grid,
* ``scaling.json``     error-versus-loss fits over the checkpoints,
* ``params.npy``       the final flat parameter vector,
* ``status.json``      outcome, stop reason, exit code and wall time.

CSV files start with a versioned ``#`` comment line, carry no timing data and
format floats with 17 significant digits, so identical runs give identical bytes.
"""

from __future__ import annotations

import copy
import csv
import glob
import io
import itertools
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch
import yaml

from .evaluate import compute_errors, field_names, fit_scaling
from .loss import DEFAULT_FORM, FORMS, LossConfig, canonical_form
from .net import MlpParams, MlpShape, NonFiniteError, init_params
from .optim import AdamState, LbfgsState
from .problems import ELASTO, PROBLEM_NAMES, SINE_GORDON, WAVE, make_problem
from .sampling import eval_grid, sample_training
from .training import TrainingObjective, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUT_ENV = "DYNPINN_OUT"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONFINITE = 2

DEFAULT_HIDDEN = {WAVE: (90, 60), SINE_GORDON: (80, 80), ELASTO: (90, 60)}

_PROBLEM_ALIASES = {"wave": WAVE, "sine-gordon": SINE_GORDON, "sine_gordon": SINE_GORDON,
                    "sg": SINE_GORDON, "elastodynamics": ELASTO, "elasto": ELASTO}


class ConfigError(ValueError):
    pass


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass(frozen=True)
class RunConfig:
    problem: str
    loss_form: Optional[str] = None
    weights: Optional[tuple] = None
    n_points: int = 2000
    seed: int = 0
    hidden: Optional[tuple] = None
    adam_iters: int = 100
    adam_lr: float = 1e-3
    lbfgs_iters: int = 5000
    lbfgs_history: int = 50
    checkpoint_every: int = 100
    checkpoint_resolution: int = 150
    eval_resolution: Optional[int] = None
    scaling_max_loss: Optional[float] = 0.1
    wave_c2_in_loss: bool = True
    name: Optional[str] = None
    out: Optional[str] = None

    def resolved(self) -> "RunConfig":
        """Fill per-problem defaults and validate; raises :class:`ConfigError`."""
        problem = _PROBLEM_ALIASES.get(str(self.problem).strip().lower())
        if problem is None:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEM_NAMES}")
        try:
            form = canonical_form(self.loss_form or DEFAULT_FORM[problem])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if FORMS[form][0] != problem:
            raise ConfigError(f"loss form {form} does not apply to {problem}")
        hidden = tuple(int(h) for h in (self.hidden or DEFAULT_HIDDEN[problem]))
        weights = None if self.weights is None else tuple(float(w) for w in self.weights)
        for key in ("n_points", "checkpoint_every", "checkpoint_resolution", "lbfgs_history"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be positive")
        for key in ("adam_iters", "lbfgs_iters", "seed"):
            if int(getattr(self, key)) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.eval_resolution is not None and int(self.eval_resolution) < 2:
            raise ConfigError("eval_resolution must be at least 2")
        if not isinstance(self.wave_c2_in_loss, bool):
            raise ConfigError("wave_c2_in_loss must be true or false")
        if not self.adam_lr > 0:
            raise ConfigError("adam_lr must be positive")
        try:
            LossConfig(form, weights)
            MlpShape(make_problem(problem).n_in, hidden, make_problem(problem).n_out)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        name = self.name or f"{problem}-{form}-N{int(self.n_points)}-s{int(self.seed)}"
        return replace(self, problem=problem, loss_form=form, hidden=hidden, weights=weights,
                       n_points=int(self.n_points), seed=int(self.seed),
                       adam_iters=int(self.adam_iters), lbfgs_iters=int(self.lbfgs_iters),
                       adam_lr=float(self.adam_lr), name=name)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("weights", "hidden"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "problem" not in d:
            raise ConfigError("config needs a 'problem'")
        d = dict(d)
        for k in ("weights", "hidden"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


# ----------------------------------------------------------------------------
# config files

def _set_key(d: dict, key: str, value):
    key = key.replace("-", "_")
    d[key] = value


def parse_override(text: str):
    """``key=value`` with the value parsed as YAML (so lists and numbers work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def expand_config(raw: dict) -> List[dict]:
    """Expand an optional ``sweep`` mapping (key -> list) into a cartesian product.

    Keys vary in the order they are listed, last key fastest.
    """
    raw = dict(raw or {})
    sweep = raw.pop("sweep", None)
    if not sweep:
        return [raw]
    if not isinstance(sweep, dict):
        raise ConfigError("'sweep' must map keys to lists of values")
    keys = list(sweep)
    values = [v if isinstance(v, list) else [v] for v in sweep.values()]
    out = []
    for combo in itertools.product(*values):
        d = copy.deepcopy(raw)
        for k, v in zip(keys, combo):
            _set_key(d, k, v)
        out.append(d)
    return out


def load_configs(path, overrides: Optional[dict] = None) -> List[RunConfig]:
    """Read a YAML config file; overrides apply to every expanded run."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return build_configs(raw, overrides)


def build_configs(raw: dict, overrides: Optional[dict] = None) -> List[RunConfig]:
    out = []
    for d in expand_config(raw):
        for k, v in (overrides or {}).items():
            _set_key(d, k, v)
        out.append(RunConfig.from_dict(d).resolved())
    names = [c.name for c in out]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ConfigError(f"runs would share output directories: {dup}")
    return out


# ----------------------------------------------------------------------------
# CSV helpers

def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


class CsvLog:
    """Append-only CSV with a versioned comment header; flushed on demand."""

    def __init__(self, path: Path, kind: str, columns: Sequence[str]):
        self.path, self.columns = Path(path), list(columns)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# dynpinn {kind} v{SCHEMA_VERSION}\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        self.rows = 0

    def write(self, row: dict):
        self._w.writerow([fmt(row.get(c)) for c in self.columns])
        self.rows += 1

    def flush(self):
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self):
        if not self._fh.closed:
            self.flush()
            self._fh.close()


def write_csv(path: Path, kind: str, columns: Sequence[str], rows: Iterable[dict]):
    log_ = CsvLog(path, kind, columns)
    for r in rows:
        log_.write(r)
    log_.close()


def read_csv(path) -> List[dict]:
    """Rows of a dynpinn CSV as dicts of strings (the comment header is skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


def _write_json(path: Path, obj):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


# ----------------------------------------------------------------------------
# single run

@dataclass
class RunResult:
    config: RunConfig
    directory: Path
    status: str
    exit_code: int
    reason: str = ""
    message: str = ""
    final_loss: Optional[float] = None
    errors: dict = field(default_factory=dict)
    iterations: int = 0

    def summary_row(self) -> dict:
        c = self.config
        row = {"name": c.name, "problem": c.problem, "form": c.loss_form, "N": c.n_points,
               "seed": c.seed, "status": self.status, "reason": self.reason,
               "iterations": self.iterations, "final_loss": self.final_loss}
        for k, e in self.errors.items():
            row[f"l2_{k}"] = e.get("l2")
            row[f"linf_{k}"] = e.get("linf")
        return row


def _error_dict(report) -> dict:
    return {k: {"l2": e.l2, "linf": e.linf, "rms": e.rms} for k, e in report.fields.items()}


def _scaling_key(problem: str, name: str) -> str:
    # the exact divergence vanishes, so only its absolute error is meaningful
    return "rms" if problem == ELASTO and name == "div" else "l2"


def run_experiment(config: RunConfig, out_root=None) -> RunResult:
    """Train one configuration and write its run directory.

    Returns a :class:`RunResult`; ``exit_code`` is 0 when the schedule
    completed (including an early stop of the line search) and 2 when a
    non-finite loss or gradient aborted training.
    """
    cfg = config.resolved()
    root = Path(cfg.out) if cfg.out else Path(out_root) if out_root else default_out_root()
    run_dir = root / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    _write_json(run_dir / "status.json", {"status": "running"})

    torch.set_num_threads(1)
    problem = make_problem(cfg.problem)
    shape = MlpShape(problem.n_in, cfg.hidden, problem.n_out)
    loss_cfg = LossConfig(cfg.loss_form, cfg.weights)
    points = sample_training(problem, cfg.n_points, cfg.seed)
    objective = TrainingObjective(problem, shape, loss_cfg, points, cfg.wave_c2_in_loss)
    params = init_params(shape, cfg.seed)
    ckpt_grid = eval_grid(problem, cfg.checkpoint_resolution)
    names = field_names(problem)
    term_ids = [t.index for t in loss_cfg.terms]
    total_iters = cfg.adam_iters + cfg.lbfgs_iters

    history = CsvLog(run_dir / "history.csv", "history", ["iteration", "phase", "loss"])
    ckpt_cols = (["iteration", "loss_total"] + [f"loss_W{i}" for i in term_ids]
                 + [f"{m}_{k}" for k in names for m in ("l2", "linf", "rms")])
    checkpoints = CsvLog(run_dir / "checkpoints.csv", "checkpoints", ckpt_cols)
    records = []
    last = {"iter": -1, "theta": params.values, "loss": None}

    def checkpoint(it, theta):
        bd = objective.breakdown(theta)
        rep = compute_errors(problem, MlpParams(shape, theta), ckpt_grid)
        errs = _error_dict(rep)
        row = {"iteration": it, "loss_total": bd.total}
        row.update({f"loss_W{i}": bd.terms[i] for i in term_ids})
        for k, e in errs.items():
            row.update({f"l2_{k}": e["l2"], f"linf_{k}": e["linf"], f"rms_{k}": e["rms"]})
        checkpoints.write(row)
        records.append({"iteration": it, "loss": bd.total, "errors": errs})
        history.flush()
        checkpoints.flush()

    def on_step(it, theta, loss):
        phase = "init" if it == 0 else "adam" if it <= cfg.adam_iters else "lbfgs"
        history.write({"iteration": it, "phase": phase, "loss": loss})
        last.update(iter=it, theta=theta, loss=loss)
        if it % cfg.checkpoint_every == 0 or it == total_iters:
            checkpoint(it, theta)
        return False

    lstate = LbfgsState(m_hist=cfg.lbfgs_history)
    astate = AdamState.zeros(shape.n_params, lr=cfg.adam_lr)
    t0 = time.perf_counter()
    status, code, reason, message = "completed", EXIT_OK, "", ""
    final = params
    try:
        res = train(objective, params, cfg.adam_iters, cfg.lbfgs_iters, on_step,
                    lbfgs_state=lstate, adam_state=astate)
        final, reason, message = res.params, res.reason, res.message
        if last["iter"] >= 0 and records and records[-1]["iteration"] != last["iter"]:
            checkpoint(last["iter"], last["theta"])   # early stop: record the end point
    except NonFiniteError as exc:
        status, code, reason, message = "failed", EXIT_NONFINITE, "non_finite", str(exc)
        final = MlpParams(shape, np.array(last["theta"]))
        log.error("run %s aborted: %s", cfg.name, exc)
    finally:
        history.close()
        checkpoints.close()
    wall = time.perf_counter() - t0

    np.save(run_dir / "params.npy", final.values)
    report = compute_errors(problem, final, eval_grid(problem, cfg.eval_resolution))
    errs = _error_dict(report)
    err_cols = ["iteration", "loss", "n_ev"] + [f"{m}_{k}" for k in names
                                              for m in ("l2", "linf", "rms")]
    row = {"iteration": max(last["iter"], 0), "loss": last["loss"], "n_ev": report.n_ev}
    for k, e in errs.items():
        row.update({f"l2_{k}": e["l2"], f"linf_{k}": e["linf"], f"rms_{k}": e["rms"]})
    write_csv(run_dir / "errors.csv", "errors", err_cols, [row])

    fits = {}
    for k in names:
        key = _scaling_key(cfg.problem, k)
        try:
            fits[k] = dict(fit_scaling(records, k, key, cfg.scaling_max_loss).to_dict(),
                           error=key)
        except ValueError as exc:
            fits[k] = {"field": k, "error": key, "skipped": str(exc)}
    _write_json(run_dir / "scaling.json", {"max_loss": cfg.scaling_max_loss, "fits": fits})

    n_iter = max(last["iter"], 0)
    _write_json(run_dir / "status.json", {
        "status": status, "exit_code": code, "reason": reason, "message": message,
        "iterations": n_iter, "n_evals": objective.n_evals, "wall_time_s": wall,
        "final_loss": last["loss"],
    })
    return RunResult(cfg, run_dir, status, code, reason, message, last["loss"], errs, n_iter)


# ----------------------------------------------------------------------------
# sweeps

_PAIRS = {"WaveF1": "WaveF2", "SgG1": "SgG2", "ElastoH1": "ElastoH2"}


def sweep(configs: Sequence[RunConfig], out_root=None) -> List[dict]:
    """Run every config in order and write ``sweep.csv`` / ``compare.csv`` / ``summary.csv``.

    A run that raises is recorded with status ``error`` and the sweep moves on.
    """
    if not configs:
        raise ConfigError("sweep needs at least one config")
    root = Path(out_root) if out_root else default_out_root()
    root.mkdir(parents=True, exist_ok=True)
    results, rows = [], []
    for cfg in configs:
        try:
            r = run_experiment(cfg, root)
            results.append(r)
            rows.append(r.summary_row())
        except Exception as exc:            # keep going; the row records the failure
            log.exception("run %s failed", cfg.name)
            c = cfg
            rows.append({"name": c.name, "problem": c.problem, "form": c.loss_form,
                         "N": c.n_points, "seed": c.seed, "status": "error",
                         "reason": type(exc).__name__})
    cols = ["name", "problem", "form", "N", "seed", "status", "reason", "iterations",
            "final_loss"]
    extra = []
    for r in rows:
        extra += [k for k in r if k not in cols and k not in extra]
    write_csv(root / "sweep.csv", "sweep", cols + extra, rows)
    write_csv(root / "compare.csv", "compare",
              ["problem", "N", "seed", "form_a", "form_b", "loss_a", "loss_b", "ratio_b_over_a"],
              compare_forms(rows))
    write_csv(root / "summary.csv", "summary",
              ["problem", "form", "N", "runs", "median_final_loss"]
              + [f"{s}_l2_{k}" for k in _all_fields(rows) for s in ("median", "min")],
              summarize(rows))
    return rows


def _all_fields(rows):
    out = []
    for r in rows:
        out += [k[3:] for k in r if k.startswith("l2_") and k[3:] not in out]
    return out


def compare_forms(rows: Sequence[dict]) -> List[dict]:
    """Pair runs that differ only in loss form (F1/F2, G1/G2, H1/H2)."""
    index = {(r["problem"], r["N"], r["seed"], r["form"]): r for r in rows}
    out = []
    for (prob, n, seed, form), r in index.items():
        other = index.get((prob, n, seed, _PAIRS.get(form)))
        if other is None:
            continue
        a, b = r.get("final_loss"), other.get("final_loss")
        ratio = b / a if a and b is not None and a > 0 else None
        out.append({"problem": prob, "N": n, "seed": seed, "form_a": form,
                    "form_b": other["form"], "loss_a": a, "loss_b": b, "ratio_b_over_a": ratio})
    return out


def summarize(rows: Sequence[dict]) -> List[dict]:
    """Median and minimum over seeds for each (problem, form, N), in first-seen order."""
    groups = {}
    for r in rows:
        if r.get("status") == "error":
            continue
        groups.setdefault((r["problem"], r["form"], r["N"]), []).append(r)
    out = []
    for (prob, form, n), rs in groups.items():
        row = {"problem": prob, "form": form, "N": n, "runs": len(rs)}
        losses = [r["final_loss"] for r in rs if r.get("final_loss") is not None]
        row["median_final_loss"] = float(np.median(losses)) if losses else None
        for k in _all_fields(rs):
            vals = [r[f"l2_{k}"] for r in rs if r.get(f"l2_{k}") is not None]
            if vals:
                row[f"median_l2_{k}"] = float(np.median(vals))
                row[f"min_l2_{k}"] = float(np.min(vals))
        out.append(row)
    return out


# ----------------------------------------------------------------------------
# export

def export_plot_data(run_dir) -> dict:
    """Write tidy loss-history and error-versus-loss series next to the run.

    Returns the paths written.  Raises ValueError when the run has no records.
    """
    run_dir = Path(run_dir)
    hist_path, ckpt_path = run_dir / "history.csv", run_dir / "checkpoints.csv"
    if not hist_path.is_file() or not ckpt_path.is_file():
        raise ValueError(f"{run_dir} has no training records")
    hist, ckpts = read_csv(hist_path), read_csv(ckpt_path)
    if not ckpts:
        raise ValueError(f"{run_dir} has no checkpoints to export")
    hist.sort(key=lambda r: int(r["iteration"]))
    ckpts.sort(key=lambda r: int(r["iteration"]))
    out_hist = run_dir / "plot_loss_history.csv"
    write_csv(out_hist, "plot-loss-history", ["iteration", "phase", "series", "value"],
              [{"iteration": r["iteration"], "phase": r["phase"], "series": "loss",
                "value": r["loss"]} for r in hist])
    err_cols = [c for c in ckpts[0] if c.startswith("l2_") or c.startswith("rms_")]
    out_scatter = run_dir / "plot_error_vs_loss.csv"
    write_csv(out_scatter, "plot-error-vs-loss", ["iteration", "loss_total"] + err_cols, ckpts)
    out_json = run_dir / "plot_data.json"
    num = lambda s: float(s) if s not in ("", None) else None
    _write_json(out_json, {
        "loss_history": {"iteration": [int(r["iteration"]) for r in hist],
                         "loss": [num(r["loss"]) for r in hist]},
        "error_vs_loss": {c: [num(r[c]) for r in ckpts] for c in ["loss_total"] + err_cols},
    })
    return {"loss_history": out_hist, "error_vs_loss": out_scatter, "json": out_json}


def expand_globs(patterns: Sequence[str]) -> List[Path]:
    paths = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        if not hits:
            raise ConfigError(f"no config files match {p!r}")
        paths += [Path(h) for h in hits]
    return paths
