"""The three benchmark problems: periodic wave, Sine-Gordon and 2D elastodynamics.

Coordinates are ordered (x, t) in 1D and (x, y, t) in 2D.  Network outputs are
ordered (u, v) for scalar problems and (u1, u2, v1, v2) for elastodynamics.
Every problem carries a closed-form exact solution, and all sources and
initial/boundary data are generated from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .net import JetBatch

PI = np.pi

WAVE = "wave"
SINE_GORDON = "sine-gordon"
ELASTO = "elastodynamics"
PROBLEM_NAMES = (WAVE, SINE_GORDON, ELASTO)


@dataclass(frozen=True)
class Face:
    """One side of the spatial box: ``axis`` is the coordinate index, ``side`` 0/1."""

    name: str
    axis: int
    side: int
    condition: str  # "periodic" | "dirichlet" | "neumann"

    def normal(self, n_space: int) -> np.ndarray:
        n = np.zeros(n_space)
        n[self.axis] = 1.0 if self.side == 1 else -1.0
        return n


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    lower: tuple
    upper: tuple
    T: float
    coefficients: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    faces: tuple = ()

    @property
    def n_space(self) -> int:
        return len(self.lower)

    @property
    def n_in(self) -> int:
        return self.n_space + 1

    @property
    def n_fields(self) -> int:
        """Components of u (and of v)."""
        return self.n_space if self.kind == ELASTO else 1

    @property
    def n_out(self) -> int:
        return 2 * self.n_fields

    def face(self, name: str) -> Face:
        for f in self.faces:
            if f.name == name:
                return f
        raise KeyError(f"{self.kind} has no face {name!r}; faces are "
                       f"{[f.name for f in self.faces]}")

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))


def make_problem(name: str) -> ProblemSpec:
    if name == WAVE:
        return ProblemSpec(
            WAVE, (0.0,), (5.0,), 2.0,
            MappingProxyType({"c": 2.0, "delta0": 2.0, "x0": 3.0}),
            (Face("x0", 0, 0, "periodic"), Face("x1", 0, 1, "periodic")),
        )
    if name == SINE_GORDON:
        return ProblemSpec(
            SINE_GORDON, (0.0,), (1.0,), 2.0,
            MappingProxyType({"eps": 1.0, "eps1": 1.0, "a": 1.0}),
            (Face("x0", 0, 0, "dirichlet"), Face("x1", 0, 1, "dirichlet")),
        )
    if name == ELASTO:
        return ProblemSpec(
            ELASTO, (0.0, 0.0), (1.0, 1.0), 2.0,
            MappingProxyType({"rho": 1.0, "mu": 1.0, "lam": 1.0}),
            (Face("x0", 0, 0, "dirichlet"), Face("x1", 0, 1, "neumann"),
             Face("y0", 1, 0, "neumann"), Face("y1", 1, 1, "neumann")),
        )
    raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEM_NAMES}")


# ----------------------------------------------------------------------------
# wave: two counter-propagating sech^3 pulses on the periodic interval [0, 5]

def _sech3_derivs(w):
    """sech^3(w) and its first three derivatives."""
    sech = 1.0 / np.cosh(w)
    th = np.tanh(w)
    s3 = sech ** 3
    return (s3,
            -3.0 * s3 * th,
            3.0 * s3 * (4.0 * th * th - 1.0),
            3.0 * s3 * th * (11.0 - 20.0 * th * th))


def _wave_profiles(x, t, c, delta0, x0):
    k = 3.0 / delta0
    # np.mod follows the sign of the divisor, so the wrapped phase lies in [0, 5)
    xi = np.mod(x - x0 + c * t + 2.5, 5.0)
    eta = np.mod(x - x0 - c * t + 2.5, 5.0)
    right = [k ** n * g for n, g in enumerate(_sech3_derivs(k * (xi - 2.5)))]
    left = [k ** n * g for n, g in enumerate(_sech3_derivs(k * (eta - 2.5)))]
    return right, left


def exact_wave(x, t, c=2.0, delta0=2.0, x0=3.0):
    """(u, v) of the traveling-pulse solution; v = du/dt."""
    P, Q = _wave_profiles(np.asarray(x, float), np.asarray(t, float), c, delta0, x0)
    return P[0] + Q[0], c * (P[1] - Q[1])


def _wave_jet(points, c, delta0, x0):
    x, t = points[:, 0], points[:, 1]
    P, Q = _wave_profiles(x, t, c, delta0, x0)
    M = len(x)
    val = np.empty((M, 2))
    grad = np.empty((M, 2, 2))
    hess = np.empty((M, 2, 2, 2))
    val[:, 0] = P[0] + Q[0]
    val[:, 1] = c * (P[1] - Q[1])
    # d/dx hits both profiles with +1; d/dt with +c (P) and -c (Q)
    grad[:, 0] = np.stack([P[1] + Q[1], c * (P[1] - Q[1])], -1)
    grad[:, 1] = np.stack([c * (P[2] - Q[2]), c * c * (P[2] + Q[2])], -1)
    u_xx, u_xt, u_tt = P[2] + Q[2], c * (P[2] - Q[2]), c * c * (P[2] + Q[2])
    v_xx, v_xt, v_tt = c * (P[3] - Q[3]), c * c * (P[3] + Q[3]), c ** 3 * (P[3] - Q[3])
    hess[:, 0] = np.stack([np.stack([u_xx, u_xt], -1), np.stack([u_xt, u_tt], -1)], -2)
    hess[:, 1] = np.stack([np.stack([v_xx, v_xt], -1), np.stack([v_xt, v_tt], -1)], -2)
    return val, grad, hess


# ----------------------------------------------------------------------------
# Sine-Gordon: separable trigonometric solution u = X(x) Y(t)

def _sg_factor(z):
    """X(z) = 2cos(pi z + pi/5) + 1.8cos(2 pi z + 7pi/20) and derivatives 0..3."""
    a, b = PI * z + PI / 5.0, 2.0 * PI * z + 7.0 * PI / 20.0
    return (2.0 * np.cos(a) + 1.8 * np.cos(b),
            -2.0 * PI * np.sin(a) - 3.6 * PI * np.sin(b),
            -2.0 * PI ** 2 * np.cos(a) - 7.2 * PI ** 2 * np.cos(b),
            2.0 * PI ** 3 * np.sin(a) + 14.4 * PI ** 3 * np.sin(b))


def exact_sg(x, t):
    X, Y = _sg_factor(np.asarray(x, float)), _sg_factor(np.asarray(t, float))
    return X[0] * Y[0], X[0] * Y[1]


def sg_source(x, t, eps=1.0, eps1=1.0, a=1.0):
    """f = eps^2 u_tt - a^2 u_xx + eps1^2 u + sin(u) for the exact solution."""
    X, Y = _sg_factor(np.asarray(x, float)), _sg_factor(np.asarray(t, float))
    u = X[0] * Y[0]
    return eps ** 2 * X[0] * Y[2] - a ** 2 * X[2] * Y[0] + eps1 ** 2 * u + np.sin(u)


def _sg_jet(points):
    X, Y = _sg_factor(points[:, 0]), _sg_factor(points[:, 1])
    M = len(points)
    val = np.stack([X[0] * Y[0], X[0] * Y[1]], -1)
    grad = np.empty((M, 2, 2))
    hess = np.empty((M, 2, 2, 2))
    for k in range(2):   # u = X Y, v = X Y'
        grad[:, k] = np.stack([X[1] * Y[k], X[0] * Y[k + 1]], -1)
        xx, xt, tt = X[2] * Y[k], X[1] * Y[k + 1], X[0] * Y[k + 2]
        hess[:, k] = np.stack([np.stack([xx, xt], -1), np.stack([xt, tt], -1)], -2)
    return val, grad, hess


# ----------------------------------------------------------------------------
# elastodynamics: divergence-free manufactured displacement on the unit square

def _elasto_space(x, y):
    """U(x, y) with u = sin(sqrt2 pi t) U; returns U, grad U, Hessian U."""
    sx, cx = np.sin(PI * x), np.cos(PI * x)
    sy, cy = np.sin(PI * y), np.cos(PI * y)
    s2x, c2x = np.sin(2 * PI * x), np.cos(2 * PI * x)
    s2y, c2y = np.sin(2 * PI * y), np.cos(2 * PI * y)
    A, dA, d2A = sx * sx, PI * s2x, 2 * PI ** 2 * c2x
    B, dB, d2B = s2y, 2 * PI * c2y, -4 * PI ** 2 * s2y
    C, dC, d2C = s2x, 2 * PI * c2x, -4 * PI ** 2 * s2x
    D, dD, d2D = sy * sy, PI * s2y, 2 * PI ** 2 * c2y
    U = np.stack([-A * B, C * D], -1)
    gU = np.stack([np.stack([-dA * B, -A * dB], -1),
                   np.stack([dC * D, C * dD], -1)], -2)
    hU = np.stack([
        np.stack([np.stack([-d2A * B, -dA * dB], -1), np.stack([-dA * dB, -A * d2B], -1)], -2),
        np.stack([np.stack([d2C * D, dC * dD], -1), np.stack([dC * dD, C * d2D], -1)], -2),
    ], -3)
    return U, gU, hU


def _elasto_time(t):
    w = np.sqrt(2.0) * PI
    s, c = np.sin(w * t), np.cos(w * t)
    return s, w * c, -w * w * s, -w ** 3 * c


def exact_elasto(x, y, t):
    """(u, v), each with a trailing axis of length 2."""
    U, _, _ = _elasto_space(np.asarray(x, float), np.asarray(y, float))
    s = _elasto_time(np.asarray(t, float))
    return s[0][..., None] * U, s[1][..., None] * U


def elasto_source(x, y, t, rho=1.0, mu=1.0, lam=1.0):
    """f = rho u_tt - 2 mu div eps(u) - lam grad div u, expanded by hand.

    The displacement is divergence-free, so lam does not enter and
    2 div eps(u) reduces to the vector Laplacian.
    """
    x, y, t = (np.asarray(a, float) for a in (x, y, t))
    s = _elasto_time(t)[0]
    k = 2.0 * PI ** 2
    sx2, sy2 = np.sin(PI * x) ** 2, np.sin(PI * y) ** 2
    f1 = s * np.sin(2 * PI * y) * (k * rho * sx2 + k * mu * np.cos(2 * PI * x) - 2 * k * mu * sx2)
    f2 = s * np.sin(2 * PI * x) * (-k * rho * sy2 + 2 * k * mu * sy2 - k * mu * np.cos(2 * PI * y))
    return np.stack([f1, f2], -1)


def _elasto_jet(points):
    x, y, t = points[:, 0], points[:, 1], points[:, 2]
    U, gU, hU = _elasto_space(x, y)
    s = _elasto_time(t)
    M = len(points)
    val = np.empty((M, 4))
    grad = np.empty((M, 4, 3))
    hess = np.empty((M, 4, 3, 3))
    for blk in range(2):          # blk 0: u = s U, blk 1: v = s' U
        a, b, c = (si[:, None] for si in s[blk:blk + 3])
        sl = slice(2 * blk, 2 * blk + 2)
        val[:, sl] = a * U
        grad[:, sl, :2] = a[..., None] * gU
        grad[:, sl, 2] = b * U
        hess[:, sl, :2, :2] = a[..., None, None] * hU
        hess[:, sl, :2, 2] = b[..., None] * gU
        hess[:, sl, 2, :2] = b[..., None] * gU
        hess[:, sl, 2, 2] = c * U
    return val, grad, hess


# ----------------------------------------------------------------------------

def _as_points(spec: ProblemSpec, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None]
    if pts.shape[-1] != spec.n_in:
        raise ValueError(f"{spec.kind} points need {spec.n_in} coordinates")
    return pts


def exact_jet(spec: ProblemSpec, points) -> JetBatch:
    """Closed-form value, gradient and Hessian of (u, v) at space-time points."""
    pts = _as_points(spec, points)
    if spec.kind == WAVE:
        c = spec.coefficients
        val, grad, hess = _wave_jet(pts, c["c"], c["delta0"], c["x0"])
    elif spec.kind == SINE_GORDON:
        val, grad, hess = _sg_jet(pts)
    else:
        val, grad, hess = _elasto_jet(pts)
    return JetBatch(pts, val, grad, hess, order=2)


def source(spec: ProblemSpec, points) -> np.ndarray:
    pts = _as_points(spec, points)
    c = spec.coefficients
    if spec.kind == WAVE:
        return np.zeros(len(pts))
    if spec.kind == SINE_GORDON:
        return sg_source(pts[:, 0], pts[:, 1], c["eps"], c["eps1"], c["a"])
    return elasto_source(pts[:, 0], pts[:, 1], pts[:, 2], c["rho"], c["mu"], c["lam"])


def strain(grad_u: np.ndarray) -> np.ndarray:
    """Symmetric part of a (..., 2, 2) displacement gradient."""
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


@dataclass(frozen=True)
class DataFunctions:
    """Initial and boundary data of a problem, all taking space-time points.

    Scalar problems return arrays of shape (M,) for values and (M, d) for
    spatial gradients; elastodynamics returns (M, 2) and (M, 2, 2).
    """

    spec: ProblemSpec

    def _jet(self, points):
        return exact_jet(self.spec, points)

    def _u(self, arr):
        return arr[:, 0] if self.spec.n_fields == 1 else arr[:, :self.spec.n_fields]

    def _v(self, arr):
        return arr[:, 1] if self.spec.n_fields == 1 else arr[:, self.spec.n_fields:]

    def psi1(self, points):
        return self._u(self._jet(points).value)

    def psi2(self, points):
        return self._v(self._jet(points).value)

    def psi1_grad(self, points):
        g = self._jet(points).grad[..., :self.spec.n_space]
        return self._u(g)

    def boundary_value(self, points):
        """Dirichlet data u|_boundary (SG phi_1/phi_2, elasto phi_d)."""
        return self.psi1(points)

    def boundary_rate(self, points):
        """Time derivative of the Dirichlet data (phi_t, phi_dt)."""
        return self.psi2(points)

    def traction(self, face: Face, points):
        """(2 mu eps(u) + lam (div u) I) n on a Neumann face."""
        if self.spec.kind != ELASTO:
            raise ValueError("traction data exist only for elastodynamics")
        c = self.spec.coefficients
        gu = self.psi1_grad(points)
        eps = strain(gu)
        div = np.trace(gu, axis1=-2, axis2=-1)
        n = face.normal(self.spec.n_space)
        return 2.0 * c["mu"] * eps @ n + c["lam"] * div[:, None] * n


def data_functions(spec: ProblemSpec) -> DataFunctions:
    return DataFunctions(spec)
