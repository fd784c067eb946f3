"""Collocation point sets, midpoint quadrature grids and evaluation grids.

Random points come from numpy's Philox counter-based generator keyed by
``SeedSequence([seed, class_id])`` so each point class has its own stream and
results do not depend on the order in which classes are drawn.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .problems import ELASTO, WAVE, ProblemSpec

INTERIOR = "interior"
TEMPORAL = "temporal"
SPATIAL = "spatial"

_CLASS_IDS = {INTERIOR: 0, TEMPORAL: 1}
_FACE_BASE = 2


@dataclass(frozen=True)
class PointSet:
    """Coordinates of one point class; ``weight`` is set for quadrature grids."""

    cls: str
    coords: np.ndarray
    seed: Optional[int] = None
    face: Optional[str] = None
    weight: Optional[float] = None

    def __post_init__(self):
        self.coords.setflags(write=False)

    @property
    def name(self) -> str:
        return self.cls if self.face is None else f"{self.cls}/{self.face}"

    def __len__(self):
        return len(self.coords)


def _rng(seed: int, class_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(class_id)])
    return np.random.Generator(np.random.Philox(ss))


def _open_unit(rng, size) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    u = rng.random(size)
    u[u == 0.0] = 0.5   # probability 2^-53 per draw; keeps t strictly positive
    return u


def _scale(u, lo, hi):
    return lo + (hi - lo) * u


def sample_training(problem: ProblemSpec, N: int, seed: int) -> dict:
    """Uniform random collocation points, keyed by ``PointSet.name``.

    N points in the space-time interior, N on the initial slice t=0 and N on
    each spatial face.  The two wave faces share their time samples so the
    periodic residuals can pair (0, t) with (5, t).
    """
    if int(N) < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    N = int(N)
    lo, hi, T, d = np.array(problem.lower), np.array(problem.upper), problem.T, problem.n_space
    out = {}

    u = _open_unit(_rng(seed, _CLASS_IDS[INTERIOR]), (N, d + 1))
    pts = np.empty((N, d + 1))
    pts[:, :d] = _scale(u[:, :d], lo, hi)
    pts[:, d] = T * u[:, d]
    out[INTERIOR] = PointSet(INTERIOR, pts, seed)

    u = _open_unit(_rng(seed, _CLASS_IDS[TEMPORAL]), (N, d))
    pts = np.zeros((N, d + 1))
    pts[:, :d] = _scale(u, lo, hi)
    out[TEMPORAL] = PointSet(TEMPORAL, pts, seed)

    shared_t = None
    for k, face in enumerate(problem.faces):
        rng = _rng(seed, _FACE_BASE + k)
        if problem.kind == WAVE:
            if shared_t is None:
                shared_t = T * _open_unit(rng, N)
            tt = shared_t
            u = np.empty((N, 0))
        else:
            u = _open_unit(rng, (N, d))
            tt = T * u[:, -1]
            u = u[:, :d - 1]
        pts = np.empty((N, d + 1))
        free = [a for a in range(d) if a != face.axis]
        for col, a in enumerate(free):
            pts[:, a] = _scale(u[:, col], lo[a], hi[a])
        pts[:, face.axis] = hi[face.axis] if face.side else lo[face.axis]
        pts[:, d] = tt
        out[f"{SPATIAL}/{face.name}"] = PointSet(SPATIAL, pts, seed, face.name)
    return out


def midpoint_grid(lower: Sequence[float], upper: Sequence[float],
                  resolution) -> PointSet:
    """Tensor-product cell midpoints of a box; weight is the cell volume."""
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    res = np.broadcast_to(np.asarray(resolution, int), lower.shape)
    if np.any(res < 1):
        raise ValueError(f"resolution must be >= 1 per axis, got {resolution}")
    h = (upper - lower) / res
    axes = [lo + (np.arange(n) + 0.5) * hk for lo, n, hk in zip(lower, res, h)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))
    return PointSet("midpoint", coords, weight=float(np.prod(h)))


def quadrature_sets(problem: ProblemSpec, resolution: int) -> dict:
    """Midpoint grids over the interior, the initial slice and every face.

    Temporal and face grids are returned as full space-time coordinates; the
    grid weight is the measure of one cell on that set.
    """
    d, n = problem.n_space, int(resolution)
    lo, hi, T = list(problem.lower), list(problem.upper), problem.T
    out = {INTERIOR: midpoint_grid(lo + [0.0], hi + [T], n)}
    g = midpoint_grid(lo, hi, n)
    out[TEMPORAL] = PointSet(TEMPORAL, np.hstack([g.coords, np.zeros((len(g), 1))]),
                             weight=g.weight)
    for face in problem.faces:
        free = [a for a in range(d) if a != face.axis]
        g = midpoint_grid([lo[a] for a in free] + [0.0], [hi[a] for a in free] + [T], n)
        pts = np.empty((len(g), d + 1))
        for col, a in enumerate(free):
            pts[:, a] = g.coords[:, col]
        pts[:, face.axis] = hi[face.axis] if face.side else lo[face.axis]
        pts[:, d] = g.coords[:, -1]
        out[f"{SPATIAL}/{face.name}"] = PointSet(SPATIAL, pts, face=face.name, weight=g.weight)
    return out


ELASTO_TIMES = (0.5, 1.0, 1.5)


def eval_grid(problem: ProblemSpec, resolution: Optional[int] = None) -> PointSet:
    """Uniform grid including the boundary.

    1D problems: ``resolution`` x ``resolution`` over D x [0, T] (default 600).
    Elastodynamics: a ``resolution``^2 spatial grid (default 300) at each of
    t = 0.5, 1.0, 1.5, stacked.
    """
    n = (300 if problem.kind == ELASTO else 600) if resolution is None else int(resolution)
    if n < 2:
        raise ValueError("evaluation grid needs at least 2 points per axis")
    if problem.kind == ELASTO:
        xs = np.linspace(problem.lower[0], problem.upper[0], n)
        ys = np.linspace(problem.lower[1], problem.upper[1], n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        blocks = [np.stack([X.ravel(), Y.ravel(), np.full(X.size, t)], -1)
                  for t in ELASTO_TIMES]
        return PointSet("eval", np.concatenate(blocks))
    xs = np.linspace(problem.lower[0], problem.upper[0], n)
    ts = np.linspace(0.0, problem.T, n)
    X, Tg = np.meshgrid(xs, ts, indexing="ij")
    return PointSet("eval", np.stack([X.ravel(), Tg.ravel()], -1))
