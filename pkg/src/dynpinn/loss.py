"""Training-loss assembly and the quadrature generalization error.

A loss form is a list of terms.  Each term has a 1-based penalty index n,
one or more residual channels and a mode:

* squared: mean over the point class of |r|^2 (Euclidean/Frobenius norm);
* absolute: mean over the point class of |r|;
* root: square root of the squared-mode value (a root-mean-square).

Terms spanning several faces add the per-face means (before the root).  The total is
sum_n W_n * term_n accumulated in index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from .net import MlpParams, forward_jet
from .problems import ELASTO, SINE_GORDON, WAVE, ProblemSpec
from .residuals import eval_interior, eval_spatial_boundary, eval_temporal_boundary
from .sampling import INTERIOR, SPATIAL, TEMPORAL, midpoint_grid, quadrature_sets


@dataclass(frozen=True)
class Term:
    index: int
    channels: tuple
    absolute: bool = False
    root: bool = False


def _sq(*idx_ch):
    return tuple(Term(i, (c,)) for i, c in idx_ch)


_WAVE_BASE = _sq((1, "int1"), (2, "int2"), (3, "grad_int1"),
                 (4, "tb1"), (5, "tb2"), (6, "grad_tb1"))
_SG_BASE = _WAVE_BASE
_SG_FACES = ("sb/x0", "sb/x1")
_EL_BASE = _sq((1, "int1"), (2, "int2"), (3, "eps_int1"), (4, "div_int1"),
               (5, "tb1"), (6, "tb2"), (7, "eps_tb1"), (8, "div_tb1"))
_EL_NEUMANN = ("sb2/x1", "sb2/y0", "sb2/y1")

FORMS = {
    "WaveF1": (WAVE, _WAVE_BASE + _sq((7, "sb1"), (8, "sb2"))),
    "WaveF2": (WAVE, _WAVE_BASE + (Term(7, ("sb1",), True), Term(8, ("sb2",), True))),
    "wave-alt1": (WAVE, _WAVE_BASE + (Term(7, ("sb1",), root=True),)),
    "wave-alt2": (WAVE, _WAVE_BASE + (Term(8, ("sb2",), root=True),)),
    "SgG1": (SINE_GORDON, _SG_BASE + (Term(7, _SG_FACES, True),)),
    "SgG2": (SINE_GORDON, _SG_BASE + (Term(7, _SG_FACES),)),
    "ElastoH1": (ELASTO, _EL_BASE + (Term(9, ("sb1/x0",), True), Term(10, _EL_NEUMANN, True))),
    "ElastoH2": (ELASTO, _EL_BASE + (Term(9, ("sb1/x0",)), Term(10, _EL_NEUMANN))),
}

_ALIASES = {"f1": "WaveF1", "f2": "WaveF2", "g1": "SgG1", "g2": "SgG2",
            "h1": "ElastoH1", "h2": "ElastoH2"}
_ALIASES.update({k.lower(): k for k in FORMS})

DEFAULT_WEIGHTS = {
    WAVE: (0.8, 0.8, 0.8, 0.5, 0.5, 0.5, 0.9, 0.9),
    SINE_GORDON: (0.5, 0.4, 0.5, 0.6, 0.6, 0.6, 0.8),
    ELASTO: (0.9, 0.9, 0.9, 0.9, 0.5, 0.5, 0.5, 0.5, 0.9, 0.9),
}

DEFAULT_FORM = {WAVE: "WaveF1", SINE_GORDON: "SgG2", ELASTO: "ElastoH1"}


def canonical_form(name: str) -> str:
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise ValueError(f"unknown loss form {name!r}; expected one of {sorted(FORMS)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class LossConfig:
    """Loss form, penalty weights and (optionally) the expected points per class.

    Weights must be finite and non-negative; zero switches a term off.
    """

    form: str
    weights: Optional[tuple] = None
    n_points: Optional[int] = None

    def __post_init__(self):
        form = canonical_form(self.form)
        object.__setattr__(self, "form", form)
        problem = FORMS[form][0]
        w = DEFAULT_WEIGHTS[problem] if self.weights is None else self.weights
        w = tuple(float(x) for x in w)
        if len(w) != len(DEFAULT_WEIGHTS[problem]):
            raise ValueError(f"{form} needs {len(DEFAULT_WEIGHTS[problem])} weights, got {len(w)}")
        if not all(np.isfinite(x) and x >= 0 for x in w):
            raise ValueError(f"weights must be finite and >= 0, got {w}")
        object.__setattr__(self, "weights", w)
        if self.n_points is not None and int(self.n_points) < 1:
            raise ValueError("n_points must be positive")

    @property
    def problem_kind(self) -> str:
        return FORMS[self.form][0]

    @property
    def terms(self) -> tuple:
        return FORMS[self.form][1]


@dataclass
class LossBreakdown:
    """Total loss and unweighted per-term values keyed by penalty index."""

    total: object
    terms: dict = field(default_factory=dict)
    weights: tuple = ()

    def as_floats(self) -> "LossBreakdown":
        f = lambda x: float(x.detach()) if isinstance(x, torch.Tensor) else float(x)
        return LossBreakdown(f(self.total), {k: f(v) for k, v in self.terms.items()},
                             self.weights)


def _pointwise_sq(r: torch.Tensor) -> torch.Tensor:
    return (r * r).reshape(len(r), -1).sum(-1)


def _pointwise_abs(r: torch.Tensor) -> torch.Tensor:
    flat = r.reshape(len(r), -1)
    if flat.shape[1] == 1:
        return flat[:, 0].abs()
    return torch.linalg.vector_norm(flat, dim=-1)


def assemble_loss(config: LossConfig, residuals: Mapping[str, torch.Tensor]) -> LossBreakdown:
    terms = {}
    total = None
    for term in config.terms:
        value = None
        for ch in term.channels:
            if ch not in residuals:
                raise KeyError(f"{config.form} term W{term.index} needs channel {ch!r}")
            r = residuals[ch]
            if not isinstance(r, torch.Tensor):
                r = torch.as_tensor(np.asarray(r, dtype=np.float64))
            if config.n_points is not None and len(r) != int(config.n_points):
                raise ValueError(f"channel {ch!r} has {len(r)} points, expected {config.n_points}")
            per_point = _pointwise_abs(r) if term.absolute else _pointwise_sq(r)
            m = per_point.mean()
            value = m if value is None else value + m
        if term.root:
            value = torch.sqrt(value)
        terms[term.index] = value
        contrib = config.weights[term.index - 1] * value
        total = contrib if total is None else total + contrib
    return LossBreakdown(total, terms, config.weights)


# ----------------------------------------------------------------------------

def _g_terms(kind: str, form: Optional[str]):
    """(index, channels, sqrt) triples of the integral error functional."""
    if kind == WAVE:
        base = [(t.index, t.channels, False) for t in _WAVE_BASE]
        if form in (None, "WaveF1", "WaveF2"):
            return base + [(7, ("sb1",), False), (8, ("sb2",), False)]
        if form == "wave-alt1":
            return base + [(7, ("sb1",), True)]
        if form == "wave-alt2":
            return base + [(8, ("sb2",), True)]
    if kind == SINE_GORDON:
        return [(t.index, t.channels, False) for t in _SG_BASE] + [(7, _SG_FACES, True)]
    if kind == ELASTO:
        return ([(t.index, t.channels, False) for t in _EL_BASE]
                + [(9, ("sb1/x0",), True), (10, _EL_NEUMANN, True)])
    raise ValueError(f"no generalization functional for {kind!r} / {form!r}")


def default_quadrature_resolution(problem: ProblemSpec) -> int:
    return 200 if problem.n_space == 1 else 64


def generalization_error(problem: ProblemSpec, params,
                         resolution: Optional[int] = None, form: Optional[str] = None,
                         wave_c2: bool = True, chunk: int = 16384) -> LossBreakdown:
    """Midpoint-rule approximation of the integral residual functional.

    Each term is the cell-weighted sum of |r|^2 over its set; boundary
    integrals that appear under a square root in the functional are
    square-rooted after summing over the faces.  Unit weights throughout.

    ``params`` is an :class:`MlpParams` or any callable ``(points, order) ->
    JetBatch`` (e.g. the exact solution's jets).
    """
    if isinstance(params, MlpParams):
        net = params
        jet_fn = lambda pts, order: forward_jet(net, pts, order)
    else:
        jet_fn = params
    if form is not None:
        form = canonical_form(form)
        if FORMS[form][0] != problem.kind:
            raise ValueError(f"form {form} does not belong to {problem.kind}")
    n = default_quadrature_resolution(problem) if resolution is None else int(resolution)
    sets = quadrature_sets(problem, n)
    sums = {}

    def accumulate(res, weight):
        for ch, r in res.items():
            sums[ch] = sums.get(ch, 0.0) + weight * float(_pointwise_sq(r).sum())

    ps = sets[INTERIOR]
    for s in range(0, len(ps), chunk):
        jet = jet_fn(ps.coords[s:s + chunk], 2)
        accumulate(eval_interior(problem, jet, wave_c2=wave_c2), ps.weight)
    ps = sets[TEMPORAL]
    accumulate(eval_temporal_boundary(problem, jet_fn(ps.coords, 1)), ps.weight)
    faces = {k.split("/", 1)[1]: v for k, v in sets.items() if k.startswith(SPATIAL + "/")}
    jets = {f: jet_fn(v.coords, 1) for f, v in faces.items()}
    weights = {v.weight for v in faces.values()}
    if len(weights) != 1:   # true for every box used here
        raise ValueError("face grids with unequal cell measures")
    weight = weights.pop()
    accumulate(eval_spatial_boundary(problem, jets), weight)

    terms, total = {}, 0.0
    for index, channels, root in _g_terms(problem.kind, form):
        val = sum(sums[c] for c in channels)
        if root:
            val = float(np.sqrt(val))
        terms[index] = val
        total += val
    return LossBreakdown(total, terms, tuple(1.0 for _ in terms))


def midpoint_integral(fn, lower: Sequence[float], upper: Sequence[float], resolution) -> float:
    """Midpoint-rule integral of a vectorised ``fn(points) -> values``."""
    g = midpoint_grid(lower, upper, resolution)
    return float(g.weight * np.sum(fn(g.coords)))
