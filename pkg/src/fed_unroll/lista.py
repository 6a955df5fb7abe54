"""Unfolded ISTA network: parameters, forward pass, layer-summed loss and exact gradients.

Batches are stored row-wise (one sample per row), so a layer computes
``Z = Y V^T + X W^T`` and ``X' = soft(Z, theta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fed_unroll.data import Dataset, Sample, _rng, as_matrix
from fed_unroll.ista import default_step, soft_threshold
from fed_unroll.textio import FormatError, TokenReader, format_block

logger = logging.getLogger(__name__)

LOSS_MODES = ("sum_layers", "last_layer")
RANDOM_INIT_THETA = 0.05


@dataclass
class LayerParams:
    """Trainables of one layer: V (N x M), W (N x N), theta >= 0."""

    V: np.ndarray
    W: np.ndarray
    theta: float

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        self.theta = float(self.theta)
        n = self.W.shape[0]
        if self.V.ndim != 2 or self.W.shape != (n, n) or self.V.shape[0] != n:
            raise ValueError(f"inconsistent layer shapes V {self.V.shape}, W {self.W.shape}")

    @property
    def M(self) -> int:
        return self.V.shape[1]

    @property
    def N(self) -> int:
        return self.V.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(self.V.copy(), self.W.copy(), self.theta)

    def scaled(self, factor: float) -> "LayerParams":
        return LayerParams(factor * self.V, factor * self.W, factor * self.theta)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.V)) and np.all(np.isfinite(self.W)) and np.isfinite(self.theta))

    def equals(self, other: "LayerParams") -> bool:
        """Bit-level equality."""
        return (
            self.V.shape == other.V.shape
            and self.W.shape == other.W.shape
            and self.V.tobytes() == other.V.tobytes()
            and self.W.tobytes() == other.W.tobytes()
            and np.float64(self.theta).tobytes() == np.float64(other.theta).tobytes()
        )


@dataclass
class NetworkParams:
    layers: list[LayerParams] = field(default_factory=list)

    def __post_init__(self):
        self.layers = list(self.layers)
        if self.layers:
            m, n = self.layers[0].M, self.layers[0].N
            for i, layer in enumerate(self.layers):
                if (layer.M, layer.N) != (m, n):
                    raise ValueError(f"layer {i + 1} has dims {(layer.M, layer.N)}, expected {(m, n)}")

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def __iter__(self):
        return iter(self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "NetworkParams":
        return NetworkParams([layer.copy() for layer in self.layers])

    def append(self, layer: LayerParams) -> "NetworkParams":
        """New network with ``layer`` on top; existing layers are shared, not copied."""
        return NetworkParams([*self.layers, layer])

    def equals(self, other: "NetworkParams") -> bool:
        return len(self) == len(other) and all(a.equals(b) for a, b in zip(self, other))


@dataclass
class ForwardTrace:
    """Pre-activations ``z[i]`` and estimates ``x_hat[i]`` for layers 1..l (0-based lists)."""

    x0: np.ndarray
    z: list[np.ndarray]
    x_hat: list[np.ndarray]

    @property
    def final(self) -> np.ndarray:
        return self.x_hat[-1] if self.x_hat else self.x0


GradientBundle = NetworkParams


def init_layer(M: int, N: int, A=None, mode: str = "ista_init", seed: int = 0,
               lam: float = 0.1, step: float | None = None, perturb: float = 0.0) -> LayerParams:
    """New layer parameters.

    ``ista_init`` sets V = tA^T, W = I - tA^T A, theta = lam * t, with t the
    default ISTA step unless ``step`` is given; ``perturb`` adds seeded
    Gaussian noise of that standard deviation to V and W. ``random`` draws
    V and W from N(0, 1/M) and sets theta = 0.05.
    """
    rng = _rng(seed)
    if mode == "ista_init":
        if A is None:
            raise ValueError("ista_init needs the sensing matrix")
        a = as_matrix(A)
        if a.shape != (M, N):
            raise ValueError(f"sensing matrix shape {a.shape} does not match ({M}, {N})")
        t = default_step(a) if step is None else float(step)
        V = t * a.T
        W = np.eye(N) - t * (a.T @ a)
        if perturb:
            V = V + perturb * rng.standard_normal((N, M))
            W = W + perturb * rng.standard_normal((N, N))
        return LayerParams(V, W, lam * t)
    if mode == "random":
        scale = 1.0 / np.sqrt(M)
        return LayerParams(scale * rng.standard_normal((N, M)), scale * rng.standard_normal((N, N)), RANDOM_INIT_THETA)
    raise ValueError(f"unknown init mode {mode!r}")


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        x, y = batch
    elif isinstance(batch, Dataset) or (hasattr(batch, "x") and hasattr(batch, "y") and not isinstance(batch, Sample)):
        x, y = batch.x, batch.y
    elif isinstance(batch, Sample):
        x, y = batch.x[None, :], batch.y[None, :]
    else:
        samples = list(batch)
        if not samples:
            raise ValueError("batch is empty")
        x = np.stack([s.x for s in samples])
        y = np.stack([s.y for s in samples])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    return x, y


def forward(params: NetworkParams, y, x0=None) -> ForwardTrace:
    """Run every layer on ``y`` (one vector or a row-wise batch) from ``x0`` (default zero)."""
    y = np.asarray(y, dtype=float)
    if params.depth:
        M, N = params[0].M, params[0].N
        if y.shape[-1] != M:
            raise ValueError(f"measurement length {y.shape[-1]} does not match network input {M}")
    else:
        N = None
    if x0 is None:
        if N is None:
            raise ValueError("an empty network needs an explicit x0")
        x0 = np.zeros(y.shape[:-1] + (N,))
    x = np.asarray(x0, dtype=float)
    if N is not None and x.shape[-1] != N:
        raise ValueError(f"x0 length {x.shape[-1]} does not match network width {N}")
    zs, xs = [], []
    for layer in params:
        z = y @ layer.V.T + x @ layer.W.T
        x = soft_threshold(z, layer.theta)
        zs.append(z)
        xs.append(x)
    return ForwardTrace(np.asarray(x0, dtype=float), zs, xs)


def _layer_errors(trace: ForwardTrace, x_true: np.ndarray, loss_mode: str) -> list[float]:
    if loss_mode == "sum_layers":
        return [float(np.sum((xh - x_true) ** 2)) for xh in trace.x_hat]
    if loss_mode == "last_layer":
        return [float(np.sum((trace.final - x_true) ** 2))]
    raise ValueError(f"unknown loss mode {loss_mode!r}")


def loss(params: NetworkParams, batch, loss_mode: str = "sum_layers", x0=None) -> float:
    """Squared error summed over samples and over every layer (``sum_layers``) or the top one."""
    x_true, y = _batch_arrays(batch)
    trace = forward(params, y, x0)
    return sum(_layer_errors(trace, x_true, loss_mode))


def loss_and_grad(params: NetworkParams, batch, loss_mode: str = "sum_layers",
                  x0=None) -> tuple[float, NetworkParams]:
    if params.depth == 0:
        raise ValueError("cannot differentiate an empty network")
    x_true, y = _batch_arrays(batch)
    trace = forward(params, y, x0)
    total = sum(_layer_errors(trace, x_true, loss_mode))
    L = params.depth
    grads: list[LayerParams | None] = [None] * L
    g_x = np.zeros_like(trace.final)
    for i in range(L - 1, -1, -1):
        if loss_mode == "sum_layers" or i == L - 1:
            g_x = g_x + 2.0 * (trace.x_hat[i] - x_true)
        z = trace.z[i]
        layer = params[i]
        # derivative is zero on the kink |z| == theta
        active = np.abs(z) > layer.theta
        g_z = np.where(active, g_x, 0.0)
        x_prev = trace.x_hat[i - 1] if i > 0 else trace.x0
        if x_prev.ndim == 1:
            x_prev = np.broadcast_to(x_prev, z.shape)
        grads[i] = LayerParams(
            g_z.T @ y,
            g_z.T @ x_prev,
            -float(np.sum(np.sign(z) * g_z)),
        )
        g_x = g_z @ layer.W
    return total, NetworkParams(grads)


def backward(params: NetworkParams, batch, which: str = "all_layers", x0=None) -> NetworkParams:
    """Gradient of the loss w.r.t. every parameter.

    ``which="all_layers"`` differentiates the layer-summed loss; ``"last_layer_only"``
    differentiates the error of the top layer's estimate alone.
    """
    modes = {"all_layers": "sum_layers", "last_layer_only": "last_layer"}
    if which not in modes:
        raise ValueError(f"which must be one of {sorted(modes)}")
    return loss_and_grad(params, batch, modes[which], x0)[1]


def _check_congruent(params: NetworkParams, grads: NetworkParams) -> None:
    if len(params) != len(grads):
        raise ValueError(f"gradient depth {len(grads)} does not match network depth {len(params)}")
    for p, g in zip(params, grads):
        if p.V.shape != g.V.shape or p.W.shape != g.W.shape:
            raise ValueError("gradient shapes do not match parameter shapes")


def sgd_step(params: NetworkParams, grads: NetworkParams, lr, theta_lr_scale: float = 1.0) -> NetworkParams:
    """``params - lr * grads`` with theta clamped at zero.

    ``lr`` is a scalar or one rate per layer. The threshold update uses
    ``lr * theta_lr_scale``: a scalar threshold shared by every coordinate of
    every sample sees far larger curvature than any single weight.
    """
    _check_congruent(params, grads)
    rates = [float(lr)] * len(params) if np.isscalar(lr) else [float(r) for r in lr]
    if len(rates) != len(params):
        raise ValueError("need one learning rate per layer")
    if any(r < 0 for r in rates):
        raise ValueError("learning rates must be non-negative")
    out = []
    for i, (p, g, r) in enumerate(zip(params, grads, rates)):
        theta = p.theta - r * theta_lr_scale * g.theta
        if theta < 0.0:
            logger.debug("clamping theta of layer %d from %g to 0", i + 1, theta)
            theta = 0.0
        out.append(LayerParams(p.V - r * g.V, p.W - r * g.W, theta))
    return NetworkParams(out)


def dumps_network(params: NetworkParams) -> str:
    """Checkpoint text: ``L M N`` header, then per layer a theta line, the V block and the W block."""
    if params.depth == 0:
        return "0 0 0\n"
    parts = [f"{params.depth} {params[0].M} {params[0].N}\n"]
    for layer in params:
        parts.append(repr(float(layer.theta)) + "\n")
        parts.append(format_block(layer.V))
        parts.append(format_block(layer.W))
    return "".join(parts)


def loads_network(text: str) -> NetworkParams:
    reader = TokenReader(text)
    L, M, N = reader.int(), reader.int(), reader.int()
    layers = []
    for _ in range(L):
        theta = reader.float()
        if theta < 0:
            raise FormatError(f"negative threshold {theta} in checkpoint")
        V = reader.block(N, M)
        W = reader.block(N, N)
        layers.append(LayerParams(V, W, theta))
    reader.expect_end()
    return NetworkParams(layers)


def dumps_layer(layer: LayerParams) -> str:
    """A single layer in checkpoint format (a one-layer network)."""
    return dumps_network(NetworkParams([layer]))


def loads_layer(text: str) -> LayerParams:
    net = loads_network(text)
    if net.depth != 1:
        raise FormatError(f"expected one layer, found {net.depth}")
    return net[0]


def save_checkpoint(path, params: NetworkParams) -> None:
    Path(path).write_text(dumps_network(params), encoding="utf-8")


def load_checkpoint(path) -> NetworkParams:
    return loads_network(Path(path).read_text(encoding="utf-8"))


def ista_network(A, depth: int, lam: float, step: float | None = None) -> NetworkParams:
    """``depth`` identical ista_init layers: reproduces ``depth`` ISTA iterations."""
    a = as_matrix(A)
    layer = init_layer(a.shape[0], a.shape[1], a, "ista_init", lam=lam, step=step)
    return NetworkParams([layer.copy() for _ in range(depth)])


def stack(layers: Sequence[LayerParams]) -> NetworkParams:
    return NetworkParams(list(layers))
