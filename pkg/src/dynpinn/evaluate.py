"""Error metrics against the exact solution and error-versus-loss scaling fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .net import JetBatch, MlpParams, forward_jet
from .problems import ELASTO, ProblemSpec, exact_jet, strain


@dataclass(frozen=True)
class FieldError:
    """Relative l2, relative l-inf (max over RMS of the exact field) and absolute RMS.

    The relative errors are None when the exact field vanishes on the grid.
    """

    l2: Optional[float]
    linf: Optional[float]
    rms: float


@dataclass
class ErrorReport:
    fields: dict
    n_ev: int
    grid: str = ""

    def row(self) -> dict:
        out = {}
        for name, e in self.fields.items():
            out[f"l2_{name}"] = e.l2
            out[f"linf_{name}"] = e.linf
        return out


def field_error(approx: np.ndarray, exact: np.ndarray, zero_below: float = 0.0) -> FieldError:
    """Errors of a scalar (M,) or vector/tensor (M, ...) field over M grid points.

    The exact field counts as vanishing when its norm is <= ``zero_below``.
    """
    a = np.asarray(approx, float).reshape(len(approx), -1)
    e = np.asarray(exact, float).reshape(len(exact), -1)
    diff = a - e
    n = len(e)
    num = float(np.sqrt(np.sum(diff * diff)))
    den = float(np.sqrt(np.sum(e * e)))
    rms = num / np.sqrt(n)
    if den <= zero_below:
        return FieldError(None, None, rms)
    pointwise = np.sqrt(np.sum(diff * diff, axis=1))
    return FieldError(num / den, float(pointwise.max()) / (den / np.sqrt(n)), rms)


def _fields(problem: ProblemSpec, jet: JetBatch) -> dict:
    d = problem.n_space
    if problem.kind == ELASTO:
        gu = jet.grad[:, 0:2, :d]
        return {
            "u1": jet.value[:, 0], "u2": jet.value[:, 1],
            "v1": jet.value[:, 2], "v2": jet.value[:, 3],
            "eps": strain(gu), "div": np.trace(gu, axis1=-2, axis2=-1),
        }
    return {"u": jet.value[:, 0], "v": jet.value[:, 1],
            "u_t": jet.grad[:, 0, d], "u_x": jet.grad[:, 0, 0]}


def field_names(problem: ProblemSpec) -> tuple:
    if problem.kind == ELASTO:
        return ("u1", "u2", "v1", "v2", "eps", "div")
    return ("u", "v", "u_t", "u_x")


def compute_errors(problem: ProblemSpec, params, grid, grid_label: str = "",
                   chunk: int = 65536) -> ErrorReport:
    """Errors of the network (or of a jet callable ``points -> JetBatch``) on ``grid``."""
    pts = np.asarray(getattr(grid, "coords", grid), float)
    if len(pts) == 0:
        raise ValueError("empty evaluation grid")
    acc_net, acc_ex = {}, {}
    for s in range(0, len(pts), chunk):
        block = pts[s:s + chunk]
        jet = forward_jet(params, block, 1) if isinstance(params, MlpParams) else params(block)
        for store, j in ((acc_net, jet), (acc_ex, exact_jet(problem, block))):
            for k, v in _fields(problem, j).items():
                store.setdefault(k, []).append(v)
    exact = {k: np.concatenate(v) for k, v in acc_ex.items()}
    floor = {}
    if problem.kind == ELASTO:
        # the exact displacement is divergence-free; its computed divergence is
        # pure cancellation error, so judge it against the strain scale
        floor["div"] = 1e-10 * float(np.linalg.norm(exact["eps"]))
    fields = {k: field_error(np.concatenate(acc_net[k]), exact[k], floor.get(k, 0.0))
              for k in field_names(problem)}
    return ErrorReport(fields, len(pts), grid_label)


@dataclass
class ScalingFit:
    """Least-squares fit of log(error) = slope * log(loss) + intercept."""

    field: str
    slope: float
    intercept: float
    r2: float
    n: int
    points: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"field": self.field, "slope": self.slope, "intercept": self.intercept,
                "r2": self.r2, "n": self.n}


def _fit(loss: np.ndarray, err: np.ndarray):
    x, y = np.log(loss), np.log(err)
    A = np.stack([x, np.ones_like(x)], -1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_scaling(records: Iterable[Mapping], field_name: str, error_key: str = "l2",
                max_loss: Optional[float] = None, min_points: int = 5) -> ScalingFit:
    """Fit error against training loss over checkpoint records.

    Each record is a mapping with ``loss`` and ``errors`` (a field -> FieldError
    or field -> {"l2": .., "linf": .., "rms": ..} mapping).  Records with
    non-positive or missing loss/error, or loss >= ``max_loss``, are dropped;
    the remaining pairs are sorted so the fit does not depend on input order.
    """
    pairs = []
    for rec in records:
        loss = rec.get("loss")
        fe = rec.get("errors", {}).get(field_name)
        if fe is None:
            continue
        err = fe.get(error_key) if isinstance(fe, Mapping) else getattr(fe, error_key)
        if loss is None or err is None or not (loss > 0 and err > 0):
            continue
        if not (np.isfinite(loss) and np.isfinite(err)):
            continue
        if max_loss is not None and not loss < max_loss:
            continue
        pairs.append((float(loss), float(err)))
    if len(pairs) < min_points:
        raise ValueError(f"need at least {min_points} usable checkpoints for {field_name!r}, "
                         f"got {len(pairs)}")
    pairs.sort()
    arr = np.array(pairs)
    slope, intercept, r2 = _fit(arr[:, 0], arr[:, 1])
    return ScalingFit(field_name, slope, intercept, r2, len(pairs), pairs)
