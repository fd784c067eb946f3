"""Training objective over a fixed collocation set and the Adam -> L-BFGS schedule."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .loss import LossConfig, assemble_loss
from .net import MlpParams, MlpShape, NonFiniteError, jet_forward, torch_layers
from .optim import AdamState, LbfgsState, adam_step, lbfgs_minimize
from .problems import ELASTO, SINE_GORDON, ProblemSpec, source
from .residuals import (boundary_data, eval_interior, eval_spatial_boundary,
                        eval_temporal_boundary, temporal_data)
from .sampling import INTERIOR, SPATIAL, TEMPORAL


def _face_order(problem: ProblemSpec, face: str) -> int:
    if problem.kind == SINE_GORDON:
        return 0
    if problem.kind == ELASTO and problem.face(face).condition == "dirichlet":
        return 0
    return 1


class TrainingObjective:
    """theta -> (loss, grad) over a fixed point set, with data precomputed once."""

    def __init__(self, problem: ProblemSpec, shape: MlpShape, loss: LossConfig,
                 points: dict, wave_c2: bool = True):
        if loss.problem_kind != problem.kind:
            raise ValueError(f"loss form {loss.form} does not apply to {problem.kind}")
        self.problem, self.shape, self.loss, self.wave_c2 = problem, shape, loss, wave_c2
        self.points = points
        as_t = lambda a: torch.from_numpy(np.array(a, dtype=np.float64))
        self._X = {k: as_t(v.coords) for k, v in points.items()}
        self._faces = sorted(k.split("/", 1)[1] for k in points if k.startswith(SPATIAL + "/"))
        self._f = as_t(source(problem, points[INTERIOR].coords))
        self._tdata = {k: as_t(v) for k, v in temporal_data(problem, points[TEMPORAL].coords).items()}
        bpts = {f: points[f"{SPATIAL}/{f}"].coords for f in self._faces}
        self._bdata = {k: as_t(v) for k, v in boundary_data(problem, bpts).items()}
        self.n_evals = 0

    def _breakdown(self, theta: torch.Tensor):
        layers = torch_layers(self.shape, theta)
        res = {}
        jet = jet_forward(layers, self._X[INTERIOR], 2)
        res.update(eval_interior(self.problem, jet, self._f, self.wave_c2))
        jet = jet_forward(layers, self._X[TEMPORAL], 1)
        res.update(eval_temporal_boundary(self.problem, jet, self._tdata))
        jets = {f: jet_forward(layers, self._X[f"{SPATIAL}/{f}"], _face_order(self.problem, f))
                for f in self._faces}
        res.update(eval_spatial_boundary(self.problem, jets, self._bdata))
        for name, r in res.items():
            if not bool(torch.isfinite(r).all()):
                raise NonFiniteError(name)
        return assemble_loss(self.loss, res)

    def __call__(self, theta: np.ndarray):
        self.n_evals += 1
        th = torch.from_numpy(np.array(theta, dtype=np.float64)).requires_grad_(True)
        bd = self._breakdown(th)
        if not bool(torch.isfinite(bd.total)):
            bad = [k for k, v in bd.terms.items() if not bool(torch.isfinite(v))]
            raise NonFiniteError(f"W{bad[0]}" if bad else "total")
        (g,) = torch.autograd.grad(bd.total, th)
        g = g.numpy()
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient")
        return float(bd.total.detach()), g

    def breakdown(self, theta: np.ndarray):
        with torch.no_grad():
            return self._breakdown(torch.from_numpy(np.array(theta, dtype=np.float64))).as_floats()


@dataclass
class ScheduleResult:
    params: MlpParams
    adam_steps: int
    lbfgs_iters: int
    reason: str
    message: str = ""
    n_evals: int = 0
    wall_time: float = 0.0


def train(objective: TrainingObjective, params: MlpParams, adam_iters: int, lbfgs_iters: int,
          on_step: Optional[Callable] = None, lbfgs_state: Optional[LbfgsState] = None,
          adam_state: Optional[AdamState] = None) -> ScheduleResult:
    """Run ``adam_iters`` full-batch Adam steps followed by L-BFGS.

    ``on_step(iteration, theta, loss)`` is called for the starting point
    (iteration 0) and after every step, with a strictly increasing global
    counter (Adam steps first).  ``loss`` is the objective at ``theta``.
    Returning True from ``on_step`` stops the schedule.
    """
    t0 = time.perf_counter()
    theta = params.values.copy()
    state = adam_state or AdamState.zeros(len(theta))
    f, g = objective(theta)
    stop = on_step is not None and on_step(0, theta, f)
    it = 0
    reason, message, n_l = "max_iters", "", 0
    while not stop and it < int(adam_iters):
        state, theta = adam_step(state, theta, g)
        f, g = objective(theta)
        it += 1
        stop = on_step is not None and on_step(it, theta, f)
    if stop:
        reason = "callback"
    elif lbfgs_iters > 0:
        lstate = lbfgs_state or LbfgsState()
        offset = it

        def cb(k, fk, th, gk):
            return on_step is not None and bool(on_step(offset + k, th, fk))

        res = lbfgs_minimize(lstate, objective, theta, int(lbfgs_iters), callback=cb,
                             initial=(f, g))
        theta, reason, message, n_l = res.params, res.reason, res.message, res.iterations
    return ScheduleResult(MlpParams(params.shape, theta), it, n_l, reason, message,
                          objective.n_evals, time.perf_counter() - t0)
