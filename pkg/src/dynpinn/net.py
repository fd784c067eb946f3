"""Two-hidden-layer tanh network with analytic input jets.

Values, input gradients and input Hessians are pushed forward layer by layer
(second-order forward jets).  Parameter gradients of any scalar built from a
jet come from a single reverse sweep over the recorded torch tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np
import torch

DTYPE = torch.float64

# Below this many rows MKL switches to a gemv-style kernel whose summation
# order differs from the batched one; padding keeps pointwise == batched.
_MIN_ROWS = 4


class NonFiniteError(FloatingPointError):
    """Raised when a jet entry, loss term or gradient is not finite."""

    def __init__(self, term: str, detail: str = ""):
        self.term = term
        msg = f"non-finite value in {term!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class MlpShape:
    n_in: int
    hidden: tuple[int, int]
    n_out: int

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if len(hidden) != 2 or min(hidden) < 1:
            raise ValueError(f"hidden must be two positive widths, got {self.hidden}")
        if self.n_in not in (2, 3):
            raise ValueError(f"n_in must be 2 or 3, got {self.n_in}")
        if self.n_out not in (2, 4):
            raise ValueError(f"n_out must be 2 or 4, got {self.n_out}")

    @property
    def widths(self) -> tuple[int, int, int, int]:
        return (self.n_in, self.hidden[0], self.hidden[1], self.n_out)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) of W1, W2, W3."""
        w = self.widths
        return [(w[k + 1], w[k]) for k in range(3)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)


@dataclass
class MlpParams:
    shape: MlpShape
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.shape.n_params,):
            raise ValueError(
                f"expected {self.shape.n_params} parameters, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError("params")

    def copy(self) -> "MlpParams":
        return MlpParams(self.shape, self.values.copy())

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(W, b) for W, b in _unflatten(self.shape, self.values)]


@dataclass
class JetBatch:
    """Network outputs and their input derivatives at a batch of points.

    ``grad[m, k, i]`` is d out_k / d in_i and ``hess[m, k, i, j]`` the second
    derivative.  Arrays are numpy for the public API and torch tensors when a
    jet is built on the tape inside :func:`loss_grad`.
    """

    points: object
    value: object
    grad: object = None
    hess: object = None
    order: int = field(default=0)

    def numpy(self) -> "JetBatch":
        conv = lambda a: a.detach().cpu().numpy() if isinstance(a, torch.Tensor) else a
        return JetBatch(conv(self.points), conv(self.value), conv(self.grad),
                        conv(self.hess), self.order)

    def __len__(self):
        return len(self.value)


def _unflatten(shape: MlpShape, flat):
    out, pos = [], 0
    for fan_out, fan_in in shape.layer_shapes:
        n = fan_out * fan_in
        W = flat[pos:pos + n].reshape(fan_out, fan_in)
        pos += n
        b = flat[pos:pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def init_params(shape: MlpShape, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, drawn from a Philox stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    chunks = []
    for fan_out, fan_in in shape.layer_shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return MlpParams(shape, np.concatenate(chunks))


def _hess_pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


def _pair_index(d: int) -> torch.Tensor:
    lookup = {p: k for k, p in enumerate(_hess_pairs(d))}
    return torch.tensor([[lookup[(min(i, j), max(i, j))] for j in range(d)]
                         for i in range(d)])


def _tanh_jet(z0, dz, d2z, pairs):
    """Push a jet through tanh.  dz: list over inputs, d2z: list over pairs."""
    t = torch.tanh(z0)
    s = 1.0 - t * t
    out_d = [s * g for g in dz]
    out_d2 = []
    if d2z:
        sp = -2.0 * t * s
        out_d2 = [s * h + sp * dz[i] * dz[j] for h, (i, j) in zip(d2z, pairs)]
    return t, out_d, out_d2


def jet_forward(layers, X: torch.Tensor, order: int) -> JetBatch:
    """Forward jet on the torch tape.  ``layers`` is [(W, b)] * 3 as tensors."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    M, d = X.shape
    pad = max(0, _MIN_ROWS - M)
    if pad:
        X = torch.cat([X, X[:1].expand(pad, d)])
    pairs = _hess_pairs(d)
    (W1, b1), (W2, b2), (W3, b3) = layers
    # contiguous transposes: MKL's kernel choice for a transposed view of a
    # narrow matrix depends on the row count, which breaks batch independence
    W1t, W2t, W3t = (W.T.contiguous() for W in (W1, W2, W3))

    # first layer: input jet is (x, e_i, 0), so derivative parts do not depend on x
    t = torch.tanh(X @ W1t + b1)
    s = 1.0 - t * t
    comps = [t]
    if order >= 1:
        comps += [s * W1[:, i] for i in range(d)]
    if order >= 2:
        sp = -2.0 * t * s
        comps += [sp * (W1[:, i] * W1[:, j]) for i, j in pairs]

    Z = torch.stack(comps) @ W2t
    z0 = Z[0] + b2
    dz = list(Z[1:1 + d]) if order >= 1 else []
    d2z = list(Z[1 + d:]) if order >= 2 else []
    t, dh, d2h = _tanh_jet(z0, dz, d2z, pairs)

    Y = torch.stack([t] + dh + d2h) @ W3t
    value = (Y[0] + b3)[:M]
    grad = hess = None
    if order >= 1:
        grad = Y[1:1 + d].permute(1, 2, 0)[:M]
    if order >= 2:
        H = Y[1 + d:][_pair_index(d)]          # (d, d, n, n_out), symmetric by construction
        hess = H.permute(2, 3, 0, 1)[:M]
    return JetBatch(X[:M], value, grad, hess, order)


def _check_points(points, n_in: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != n_in:
        raise ValueError(f"points must have shape (M, {n_in}), got {np.shape(points)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite coordinates")
    return pts


def torch_layers(shape: MlpShape, flat: torch.Tensor):
    return _unflatten(shape, flat)


def forward_jet(params: MlpParams, points, order: int = 2,
                chunk: int = 32768) -> JetBatch:
    """Evaluate value/grad/hess of the network at ``points`` (numpy result)."""
    pts = _check_points(points, params.shape.n_in)
    theta = torch.from_numpy(params.values)
    layers = torch_layers(params.shape, theta)
    parts = []
    with torch.no_grad():
        for start in range(0, len(pts), chunk):
            X = torch.from_numpy(np.array(pts[start:start + chunk]))
            parts.append(jet_forward(layers, X, order).numpy())
    if not parts:
        raise ValueError("empty point batch")
    cat = lambda name: (None if getattr(parts[0], name) is None
                        else np.concatenate([getattr(p, name) for p in parts]))
    return JetBatch(pts, cat("value"), cat("grad"), cat("hess"), order)


Points = Union[np.ndarray, Mapping[str, np.ndarray]]


def _check_jet_finite(name, jet):
    for part in ("value", "grad", "hess"):
        arr = getattr(jet, part)
        if arr is not None and not bool(torch.isfinite(arr).all()):
            raise NonFiniteError(f"{name}.{part}")


def loss_grad(params: MlpParams, scalar_builder: Callable, points: Points,
              order: Union[int, Mapping[str, int]] = 2) -> tuple[float, np.ndarray]:
    """Scalar built from jets and its gradient with respect to the parameters.

    ``points`` is either one (M, n_in) array, in which case ``scalar_builder``
    receives a single :class:`JetBatch`, or a mapping ``name -> array`` in
    which case it receives a dict of jets with the same keys.  ``order`` may be
    a mapping with per-batch orders.  Jet arrays handed to the builder are
    torch tensors on the tape.
    """
    theta = torch.from_numpy(params.values.copy()).requires_grad_(True)
    layers = torch_layers(params.shape, theta)

    def order_of(name):
        return order[name] if isinstance(order, Mapping) else order

    if isinstance(points, Mapping):
        jets = {}
        for name, pts in points.items():
            X = torch.as_tensor(_check_points(pts, params.shape.n_in))
            jets[name] = jet_forward(layers, X, order_of(name))
            _check_jet_finite(name, jets[name])
        value = scalar_builder(jets)
    else:
        X = torch.as_tensor(_check_points(points, params.shape.n_in))
        jet = jet_forward(layers, X, order_of(None))
        _check_jet_finite("points", jet)
        value = scalar_builder(jet)

    if not isinstance(value, torch.Tensor):
        return float(value), np.zeros_like(params.values)
    if not bool(torch.isfinite(value)):
        raise NonFiniteError("scalar")
    f = float(value.detach())
    if not value.requires_grad:
        return f, np.zeros_like(params.values)
    (g,) = torch.autograd.grad(value, theta, allow_unused=True)
    if g is None:
        return f, np.zeros_like(params.values)
    g = g.numpy()
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient")
    return f, g
