"""Three-stage local layer-wise training, run by each client and by the centralized trainer."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from fed_unroll.data import _rng, as_matrix
from fed_unroll.lista import (
    LOSS_MODES,
    LayerParams,
    NetworkParams,
    _batch_arrays,
    forward,
    init_layer,
    loss_and_grad,
    sgd_step,
)

logger = logging.getLogger(__name__)

BETA_MODES = ("lr_decay", "literal_weight_scale")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of local layer-wise training.

    ``alpha1``/``alpha2`` default to ``0.2 * alpha0`` and ``0.02 * alpha0``.
    In ``lr_decay`` mode the rates used on layer ``i`` while training layer
    ``l`` are multiplied by ``beta ** (l - i)``; ``literal_weight_scale``
    multiplies every weight by ``beta`` after stage 3 instead.
    """

    alpha0: float = 5e-4
    alpha1: float | None = None
    alpha2: float | None = None
    beta: float = 0.3
    E: int = 100
    L: int = 10
    loss_mode: str = "sum_layers"
    beta_mode: str = "lr_decay"
    minibatch: int | None = None
    seed: int = 0
    init_mode: str = "ista_init"
    init_lambda: float = 0.1
    init_perturb: float = 1e-3
    theta_lr_scale: float = 1.0

    def __post_init__(self):
        if self.alpha1 is None:
            object.__setattr__(self, "alpha1", 0.2 * self.alpha0)
        if self.alpha2 is None:
            object.__setattr__(self, "alpha2", 0.02 * self.alpha0)
        for name in ("alpha0", "alpha1", "alpha2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.E < 0:
            raise ValueError("epoch count must be non-negative")
        if self.L < 1:
            raise ValueError("need at least one layer")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.beta_mode not in BETA_MODES:
            raise ValueError(f"beta_mode must be one of {BETA_MODES}")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch size must be positive")
        if self.theta_lr_scale < 0:
            raise ValueError("theta_lr_scale must be non-negative")
        if self.init_lambda < 0 or self.init_perturb < 0:
            raise ValueError("init_lambda and init_perturb must be non-negative")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class TrainCounters:
    """Instrumentation: epoch sweeps per stage and beta applications."""

    epochs: Counter = field(default_factory=Counter)
    beta_applications: int = 0
    calls: int = 0


def initial_layer(A, cfg: TrainConfig, l: int) -> LayerParams:
    """Starting parameters for layer ``l`` (1-based), seeded per layer."""
    a = as_matrix(A)
    M, N = a.shape
    return init_layer(M, N, a, cfg.init_mode, seed=_layer_seed(cfg.seed, l),
                      lam=cfg.init_lambda, perturb=cfg.init_perturb)


def _layer_seed(seed: int, l: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(1, l)).generate_state(1, np.uint64)[0])


def _batches(n: int, cfg: TrainConfig, rng: np.random.Generator | None):
    if cfg.minibatch is None or cfg.minibatch >= n:
        return [slice(None)]
    order = rng.permutation(n)
    return [order[i:i + cfg.minibatch] for i in range(0, n, cfg.minibatch)]


def _rates(base: float, l: int, cfg: TrainConfig) -> list[float]:
    if cfg.beta_mode == "lr_decay":
        return [base * cfg.beta ** (l - i) for i in range(1, l + 1)]
    return [base] * l


def train_layer_local(client_id: int, l: int, theta_prev: NetworkParams, phi_init: LayerParams, data,
                      cfg: TrainConfig, round_idx: int = 0, counters: TrainCounters | None = None,
                      log: list | None = None, hook=None) -> tuple[NetworkParams, LayerParams]:
    """Train layer ``l`` on one client's data and return ``(theta_prev_out, phi_out)``.

    Stage 1 runs E epochs on the new layer alone against the top-layer error,
    with the earlier layers frozen. Stages 2 and 3 run E epochs each on the
    whole stack with ``alpha1`` then ``alpha2``. An epoch is one full-batch
    gradient step unless ``cfg.minibatch`` is set.

    ``hook(stage, network)``, if given, sees the full stack after each stage.
    """
    if theta_prev.depth != l - 1:
        raise ValueError(f"training layer {l} needs {l - 1} previous layers, got {theta_prev.depth}")
    if theta_prev.depth and (theta_prev[0].M, theta_prev[0].N) != (phi_init.M, phi_init.N):
        raise ValueError("new layer is not dimensionally consistent with the network")
    x_true, y = _batch_arrays(data)
    if y.shape[1] != phi_init.M or x_true.shape[1] != phi_init.N:
        raise ValueError("client data does not match the layer dimensions")
    n = x_true.shape[0]
    counters = counters if counters is not None else TrainCounters()
    counters.calls += 1
    rng = _rng(cfg.seed, 2, client_id, l, round_idx) if cfg.minibatch else None

    def record(stage, epoch, value):
        if log is not None:
            log.append({"client": client_id, "layer": l, "round": round_idx,
                        "stage": stage, "epoch": epoch, "loss": value})

    # stage 1: the frozen prefix output is the new layer's input
    x_prev = forward(theta_prev, y).final if theta_prev.depth else np.zeros_like(x_true)
    phi = NetworkParams([phi_init])
    for e in range(cfg.E):
        total = 0.0
        for idx in _batches(n, cfg, rng):
            value, grad = loss_and_grad(phi, (x_true[idx], y[idx]), "last_layer", x0=x_prev[idx])
            phi = sgd_step(phi, grad, cfg.alpha0, cfg.theta_lr_scale)
            total += value
        counters.epochs[1] += 1
        record(1, e, total)

    theta = theta_prev.append(phi[0])
    if hook is not None:
        hook(1, theta)
    for stage, base in ((2, cfg.alpha1), (3, cfg.alpha2)):
        rates = _rates(base, l, cfg)
        for e in range(cfg.E):
            total = 0.0
            for idx in _batches(n, cfg, rng):
                value, grad = loss_and_grad(theta, (x_true[idx], y[idx]), cfg.loss_mode)
                theta = sgd_step(theta, grad, rates, cfg.theta_lr_scale)
                total += value
            counters.epochs[stage] += 1
            record(stage, e, total)
        if hook is not None:
            hook(stage, theta)

    if cfg.beta_mode == "literal_weight_scale":
        theta = NetworkParams([layer.scaled(cfg.beta) for layer in theta])
    # in lr_decay mode beta already acted through the stage 2-3 rates
    counters.beta_applications += 1
    return NetworkParams(theta.layers[:-1]), theta.layers[-1]


def train_centralized(dataset, A, cfg: TrainConfig, counters: TrainCounters | None = None,
                      log: list | None = None) -> NetworkParams:
    """Layer-wise LISTA training with all data held by a single owner."""
    theta = NetworkParams()
    for l in range(1, cfg.L + 1):
        prev, phi = train_layer_local(0, l, theta, initial_layer(A, cfg, l), dataset, cfg,
                                      counters=counters, log=log)
        theta = prev.append(phi)
        logger.info("centralized: layer %d trained", l)
    return theta
