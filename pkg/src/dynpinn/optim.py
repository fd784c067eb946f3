"""Full-batch Adam and L-BFGS with a strong-Wolfe line search.

Both optimizers work on flat float64 parameter vectors.  An objective is any
callable ``theta -> (f, grad)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .net import MlpParams, NonFiniteError

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


# ----------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)

    def to_dict(self) -> dict:
        """JSON-safe snapshot; floats go through ``float.hex`` so they round-trip exactly."""
        return {
            "m": [x.hex() for x in self.m.tolist()],
            "v": [x.hex() for x in self.v.tolist()],
            "step_count": self.step_count,
            "lr": self.lr.hex(), "beta1": self.beta1.hex(),
            "beta2": self.beta2.hex(), "eps": self.eps.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        arr = lambda xs: np.array([float.fromhex(x) for x in xs])
        return cls(arr(d["m"]), arr(d["v"]), int(d["step_count"]),
                   float.fromhex(d["lr"]), float.fromhex(d["beta1"]),
                   float.fromhex(d["beta2"]), float.fromhex(d["eps"]))


def _values(params):
    return params.values if isinstance(params, MlpParams) else np.asarray(params, float)


def _rewrap(params, values):
    return MlpParams(params.shape, values) if isinstance(params, MlpParams) else values


def adam_step(state: AdamState, params, grad):
    """One bias-corrected Adam update.  Returns new ``(state, params)``.

    The inputs are left untouched, so a rejected (non-finite) gradient
    leaves no trace.
    """
    theta = _values(params)
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match params {theta.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient", "Adam step rejected")
    k = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** k)
    v_hat = v / (1.0 - state.beta2 ** k)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, k, state.lr, state.beta1, state.beta2, state.eps)
    return new_state, _rewrap(params, new_theta)


# ----------------------------------------------------------------------------
# L-BFGS

@dataclass
class LbfgsState:
    m_hist: int = 50
    initial_lr: float = 1.0
    c1: float = 1e-4
    c2: float = 0.9
    gtol: float = 1e-12
    max_ls_evals: int = 25
    s_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)
    iteration: int = 0
    n_evals: int = 0
    skipped_pairs: int = 0

    def reset_history(self):
        self.s_hist.clear()
        self.y_hist.clear()

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Store a curvature pair if sᵀy > 1e-14‖s‖‖y‖; return whether it was kept."""
        sy = float(s @ y)
        if not sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            self.skipped_pairs += 1
            return False
        self.s_hist.append(s)
        self.y_hist.append(y)
        if len(self.s_hist) > self.m_hist:
            self.s_hist.pop(0)
            self.y_hist.pop(0)
        return True

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion: returns -H g."""
        q = g.copy()
        alphas = []
        rhos = [1.0 / float(s @ y) for s, y in zip(self.s_hist, self.y_hist)]
        for s, y, rho in zip(reversed(self.s_hist), reversed(self.y_hist), reversed(rhos)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if self.s_hist:
            s, y = self.s_hist[-1], self.y_hist[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(zip(self.s_hist, self.y_hist, rhos), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q


@dataclass
class LbfgsResult:
    params: object
    f: float
    grad: np.ndarray
    iterations: int
    n_evals: int
    reason: str                 # "max_iters" | "gtol" | "line_search" | "stationary"
    trace: list = field(default_factory=list)
    message: str = ""


class LineSearchError(RuntimeError):
    pass


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga), (b, fb, gb); None if undefined."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (gb + d2 - d1) / denom
    return x if np.isfinite(x) else None


def strong_wolfe(phi, f0, g0, alpha0, c1=1e-4, c2=0.9, max_evals=25, alpha_max=1e10):
    """Line search for a step satisfying the strong Wolfe conditions.

    ``phi(alpha) -> (f, dphi, payload)``.  Returns ``(alpha, f, payload)``.
    Bracketing followed by zoom with safeguarded cubic interpolation.

    Close to a minimizer the decrease c1*alpha*g0 drops below the rounding of
    f and sufficient decrease can no longer be certified from function values.
    A trial is then also accepted if f grew by at most ``f_slack`` and the
    slope satisfies the approximate Wolfe test c2*g0 <= dphi <= (2*c1 - 1)*g0.
    """
    if not g0 < 0:
        raise LineSearchError("not a descent direction")
    f_slack = min(1e-14, 1e-12 * abs(f0))

    def approx_wolfe(fa, ga):
        return fa - f0 <= f_slack and c2 * g0 <= ga <= (2.0 * c1 - 1.0) * g0
    a_prev, f_prev, g_prev = 0.0, f0, g0
    alpha = alpha0
    best = None
    evals = 0

    def zoom(lo, flo, glo, hi, fhi, ghi):
        nonlocal evals, best
        while evals < max_evals:
            x = _cubic_min(lo, flo, glo, hi, fhi, ghi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if x is None or not (left + margin <= x <= right - margin):
                x = 0.5 * (lo + hi)
            if right - left < 1e-16 * max(1.0, right):
                break
            fx, gx, pay = phi(x)
            evals += 1
            if fx <= f0 and (best is None or fx < best[1]):
                best = (x, fx, pay)
            if approx_wolfe(fx, gx):
                return x, fx, pay
            if fx > f0 + c1 * x * g0 or fx >= flo:
                hi, fhi, ghi = x, fx, gx
            else:
                if abs(gx) <= -c2 * g0:
                    return x, fx, pay
                if gx * (hi - lo) >= 0:
                    hi, fhi, ghi = lo, flo, glo
                lo, flo, glo = x, fx, gx
        return None

    while evals < max_evals:
        fa, ga, pay = phi(alpha)
        evals += 1
        if np.isfinite(fa) and fa <= f0 and (best is None or fa < best[1]):
            best = (alpha, fa, pay)
        if not np.isfinite(fa):
            # step overshot into a non-finite region: shrink and retry
            alpha = 0.5 * (a_prev + alpha)
            continue
        if fa > f0 + c1 * alpha * g0 or (evals > 1 and fa >= f_prev):
            if approx_wolfe(fa, ga):
                return alpha, fa, pay
            out = zoom(a_prev, f_prev, g_prev, alpha, fa, ga)
            break
        if abs(ga) <= -c2 * g0:
            return alpha, fa, pay
        if ga >= 0:
            out = zoom(alpha, fa, ga, a_prev, f_prev, g_prev)
            break
        a_prev, f_prev, g_prev = alpha, fa, ga
        alpha = min(2.0 * alpha, alpha_max)
    else:
        out = None
    if out is not None:
        return out
    # no strong-Wolfe point found; accept a sufficient-decrease point if any
    if best is not None and best[1] <= f0 + c1 * best[0] * g0:
        return best
    raise LineSearchError(f"no acceptable step after {evals} evaluations")


def lbfgs_minimize(state: LbfgsState, objective: Objective, params, max_iters: int,
                   callback: Optional[Callable] = None,
                   initial: Optional[tuple] = None) -> LbfgsResult:
    """Minimize ``objective`` from ``params`` for at most ``max_iters`` iterations.

    ``callback(iteration, f, theta, grad)`` runs after every accepted step; if
    it returns True the run stops.  ``initial`` may carry an already computed
    ``(f, grad)`` at ``params``.  Non-finite objective values at the starting
    point raise :class:`NonFiniteError`.
    """
    theta = _values(params).copy()
    if initial is None:
        f, g = objective(theta)
        state.n_evals += 1
    else:
        f, g = initial
    g = np.asarray(g, dtype=np.float64)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFiniteError("objective", "at the starting point")
    trace = []

    def done(reason, msg=""):
        return LbfgsResult(_rewrap(params, theta), float(f), g, state.iteration,
                           state.n_evals, reason, trace, msg)

    if np.max(np.abs(g), initial=0.0) <= state.gtol:
        return done("stationary" if state.iteration == 0 else "gtol")

    retried = False
    for _ in range(int(max_iters)):
        d = state.direction(g)
        gd = float(g @ d)
        if not gd < 0:
            state.reset_history()
            d, gd = -g, -float(g @ g)
        if state.s_hist:
            alpha0 = state.initial_lr
        else:
            alpha0 = min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300)) * state.initial_lr

        def phi(alpha):
            x = theta + alpha * d
            try:
                fx, gx = objective(x)
            except NonFiniteError:
                return np.inf, np.nan, None
            finally:
                state.n_evals += 1
            gx = np.asarray(gx, dtype=np.float64)
            if not (np.isfinite(fx) and np.all(np.isfinite(gx))):
                return np.inf, np.nan, None
            return float(fx), float(gx @ d), (x, gx)

        try:
            alpha, f_new, (x_new, g_new) = strong_wolfe(
                phi, f, gd, alpha0, state.c1, state.c2, state.max_ls_evals)
        except LineSearchError as exc:
            if not retried and state.s_hist:
                log.info("line search failed (%s); restarting from steepest descent", exc)
                state.reset_history()
                retried = True
                continue
            return done("line_search", str(exc))
        retried = False
        state.push(x_new - theta, g_new - g)
        theta, f, g = x_new, f_new, g_new
        state.iteration += 1
        trace.append(f)
        if callback is not None and callback(state.iteration, f, theta, g):
            return done("callback")
        if np.max(np.abs(g)) <= state.gtol:
            return done("gtol")
    return done("max_iters")
