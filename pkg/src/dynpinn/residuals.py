"""Pointwise PINN residuals for the three problems.

Every evaluator takes a :class:`~dynpinn.net.JetBatch` (numpy or torch arrays)
and returns a dict of named torch tensors, so the same code serves training
(on the autograd tape) and diagnostics.  Data arrays (sources, initial and
boundary data) may be passed in precomputed; otherwise they are generated from
the problem's exact solution.

Channel names and shapes (M points):

* wave / Sine-Gordon: ``int1``, ``int2`` (M,), ``grad_int1`` (M, 1),
  ``tb1``, ``tb2`` (M,), ``grad_tb1`` (M, 1); wave ``sb1``, ``sb2`` (M,);
  Sine-Gordon ``sb/x0``, ``sb/x1`` (M,).
* elastodynamics: ``int1``, ``int2`` (M, 2), ``eps_int1`` (M, 2, 2),
  ``div_int1`` (M,), ``tb1``, ``tb2`` (M, 2), ``eps_tb1`` (M, 2, 2),
  ``div_tb1`` (M,), ``sb1/x0`` (M, 2), ``sb2/x1``, ``sb2/y0``, ``sb2/y1`` (M, 2).
"""

from __future__ import annotations

from typing import Mapping, Optional

import numpy as np
import torch

from .net import JetBatch
from .problems import ELASTO, SINE_GORDON, WAVE, ProblemSpec, data_functions, source


def _t(a):
    if a is None or isinstance(a, torch.Tensor):
        return a
    return torch.as_tensor(np.array(a, dtype=np.float64))


def _torch_jet(jet: JetBatch) -> JetBatch:
    return JetBatch(_t(jet.points), _t(jet.value), _t(jet.grad), _t(jet.hess), jet.order)


def _points_np(jet: JetBatch) -> np.ndarray:
    p = jet.points
    return p.detach().numpy() if isinstance(p, torch.Tensor) else np.asarray(p)


def _need_order(jet: JetBatch, order: int, what: str):
    if jet.order < order or (order >= 1 and jet.grad is None) or (order >= 2 and jet.hess is None):
        raise ValueError(f"{what} residuals need an order-{order} jet, got order {jet.order}")


def sym(A: torch.Tensor) -> torch.Tensor:
    return 0.5 * (A + A.transpose(-1, -2))


def trace2(A: torch.Tensor) -> torch.Tensor:
    return A.diagonal(dim1=-2, dim2=-1).sum(-1)


def to_numpy(res: Mapping[str, torch.Tensor]) -> dict:
    return {k: v.detach().numpy() for k, v in res.items()}


# ----------------------------------------------------------------------------

def eval_interior(problem: ProblemSpec, jet: JetBatch, f=None,
                  wave_c2: bool = True) -> dict:
    """Interior residuals (first-order-in-time system plus gradient channels).

    ``wave_c2`` keeps the c^2 factor on u_xx in the wave momentum residual.
    """
    _need_order(jet, 2, "interior")
    if f is None:
        f = source(problem, _points_np(jet))
    f = _t(f)
    j = _torch_jet(jet)
    d = problem.n_space
    ti = d   # time is the last input

    if problem.kind == ELASTO:
        c = problem.coefficients
        rho, mu, lam = c["rho"], c["mu"], c["lam"]
        u_t = j.grad[:, 0:2, ti]
        v = j.value[:, 2:4]
        v_t = j.grad[:, 2:4, ti]
        Hu = j.hess[:, 0:2, :d, :d]                         # (M, 2, 2, 2)
        lap = Hu.diagonal(dim1=-2, dim2=-1).sum(-1)         # (M, 2)
        grad_div = Hu[:, 0, :, 0] + Hu[:, 1, :, 1]          # d_i (du1/dx + du2/dy)
        # 2 div eps(u) = lap u + grad div u
        int2 = rho * v_t - mu * (lap + grad_div) - lam * grad_div - f
        G = j.hess[:, 0:2, :d, ti] - j.grad[:, 2:4, :d]     # spatial gradient of u_t - v
        return {
            "int1": u_t - v,
            "int2": int2,
            "eps_int1": sym(G),
            "div_int1": trace2(G),
        }

    u = j.value[:, 0]
    v = j.value[:, 1]
    u_t = j.grad[:, 0, ti]
    v_t = j.grad[:, 1, ti]
    u_xx = j.hess[:, 0, 0, 0]
    grad_int1 = j.hess[:, 0, :d, ti] - j.grad[:, 1, :d]
    if problem.kind == WAVE:
        c2 = problem.coefficients["c"] ** 2 if wave_c2 else 1.0
        int2 = v_t - c2 * u_xx - f
    else:
        c = problem.coefficients
        int2 = c["eps"] ** 2 * v_t - c["a"] ** 2 * u_xx + c["eps1"] ** 2 * u + torch.sin(u) - f
    return {"int1": u_t - v, "int2": int2, "grad_int1": grad_int1}


def temporal_data(problem: ProblemSpec, points) -> dict:
    fns = data_functions(problem)
    return {"psi1": fns.psi1(points), "psi2": fns.psi2(points),
            "psi1_grad": fns.psi1_grad(points)}


def eval_temporal_boundary(problem: ProblemSpec, jet: JetBatch,
                           data: Optional[Mapping] = None) -> dict:
    """Initial-condition residuals at points on the slice t = 0."""
    _need_order(jet, 1, "temporal boundary")
    j = _torch_jet(jet)
    if bool((j.points[:, -1] != 0).any()):
        raise ValueError("temporal boundary points must have t = 0")
    if data is None:
        data = temporal_data(problem, _points_np(jet))
    psi1, psi2, dpsi1 = (_t(data[k]) for k in ("psi1", "psi2", "psi1_grad"))
    d = problem.n_space

    if problem.kind == ELASTO:
        G = j.grad[:, 0:2, :d] - dpsi1
        return {
            "tb1": j.value[:, 0:2] - psi1,
            "tb2": j.value[:, 2:4] - psi2,
            "eps_tb1": sym(G),
            "div_tb1": trace2(G),
        }
    return {
        "tb1": j.value[:, 0] - psi1,
        "tb2": j.value[:, 1] - psi2,
        "grad_tb1": j.grad[:, 0, :d] - dpsi1.reshape(-1, d),
    }


def _check_face(problem: ProblemSpec, name: str, jet: JetBatch):
    face = problem.face(name)
    coord = problem.upper[face.axis] if face.side else problem.lower[face.axis]
    pts = _t(jet.points)
    if bool((pts[:, face.axis] != coord).any()):
        raise ValueError(f"points given for face {name!r} do not lie on it")
    return face


def _faces_of(problem: ProblemSpec, jets: Mapping) -> dict:
    names = {f.name for f in problem.faces}
    got = set(jets)
    if got != names:
        raise ValueError(f"{problem.kind} needs jets on faces {sorted(names)}, got {sorted(got)}")
    return {n: _check_face(problem, n, jets[n]) for n in sorted(names)}


def boundary_data(problem: ProblemSpec, points: Mapping) -> dict:
    """Data for :func:`eval_spatial_boundary`, keyed like its output channels."""
    fns = data_functions(problem)
    out = {}
    if problem.kind == SINE_GORDON:
        for name, pts in points.items():
            out[f"sb/{name}"] = fns.boundary_rate(pts)
    elif problem.kind == ELASTO:
        for name, pts in points.items():
            face = problem.face(name)
            if face.condition == "dirichlet":
                out[f"sb1/{name}"] = fns.boundary_rate(pts)
            else:
                out[f"sb2/{name}"] = fns.traction(face, pts)
    return out


def traction(problem: ProblemSpec, grad_u: torch.Tensor, normal) -> torch.Tensor:
    """(2 mu eps(u) + lam (div u) I) n from a (M, 2, 2) displacement gradient."""
    c = problem.coefficients
    n = _t(normal)
    return 2.0 * c["mu"] * sym(grad_u) @ n + c["lam"] * trace2(grad_u)[:, None] * n


def eval_spatial_boundary(problem: ProblemSpec, jets: Mapping[str, JetBatch],
                          data: Optional[Mapping] = None) -> dict:
    """Spatial-boundary residuals; ``jets`` maps face name to the jet on that face."""
    faces = _faces_of(problem, jets)
    tj = {n: _torch_jet(j) for n, j in jets.items()}

    if problem.kind == WAVE:
        a, b = tj["x0"], tj["x1"]
        _need_order(a, 1, "periodic boundary")
        _need_order(b, 1, "periodic boundary")
        if a.points.shape != b.points.shape or bool((a.points[:, -1] != b.points[:, -1]).any()):
            raise ValueError("periodic boundary points must be paired with equal t")
        return {"sb1": a.value[:, 1] - b.value[:, 1],
                "sb2": a.grad[:, 0, 0] - b.grad[:, 0, 0]}

    if data is None:
        data = boundary_data(problem, {n: _points_np(j) for n, j in jets.items()})
    out = {}
    if problem.kind == SINE_GORDON:
        for name in sorted(faces):
            out[f"sb/{name}"] = tj[name].value[:, 1] - _t(data[f"sb/{name}"])
        return out

    d = problem.n_space
    for name, face in faces.items():
        j = tj[name]
        if face.condition == "dirichlet":
            out[f"sb1/{name}"] = j.value[:, 2:4] - _t(data[f"sb1/{name}"])
        else:
            _need_order(j, 1, "traction")
            out[f"sb2/{name}"] = (traction(problem, j.grad[:, 0:2, :d], face.normal(d))
                                  - _t(data[f"sb2/{name}"]))
    return out


def channel_names(problem: ProblemSpec) -> tuple:
    if problem.kind == WAVE:
        return ("int1", "int2", "grad_int1", "tb1", "tb2", "grad_tb1", "sb1", "sb2")
    if problem.kind == SINE_GORDON:
        return ("int1", "int2", "grad_int1", "tb1", "tb2", "grad_tb1", "sb/x0", "sb/x1")
    return ("int1", "int2", "eps_int1", "div_int1", "tb1", "tb2", "eps_tb1", "div_tb1",
            "sb1/x0", "sb2/x1", "sb2/y0", "sb2/y1")
