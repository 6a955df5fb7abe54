"""Simulated Fed-CS: K clients, a server, per-layer rounds of layer-parameter averaging."""

from __future__ import annotations

import csv
import logging
import queue
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fed_unroll.data import Dataset, Partition, as_matrix
from fed_unroll.layerwise import TrainConfig, TrainCounters, initial_layer, train_layer_local
from fed_unroll.lista import (
    LayerParams,
    NetworkParams,
    dumps_layer,
    dumps_network,
    forward,
    loads_layer,
    loads_network,
    loss,
)
from fed_unroll.metrics import nmse_db

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12
ROUND_CSV_COLUMNS = ("layer", "round", "client_id", "local_loss", "bytes_sent")


def _check_weights(weights: Sequence[float], count: int) -> list[float]:
    weights = [float(w) for w in weights]
    if len(weights) != count:
        raise ValueError(f"got {len(weights)} weights for {count} models")
    if any(w < 0 for w in weights):
        raise ValueError("aggregation weights must be non-negative")
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"aggregation weights sum to {sum(weights)!r}, not 1")
    return weights


def aggregate_layer(phis: Sequence[LayerParams], weights: Sequence[float]) -> LayerParams:
    """Entrywise weighted average, accumulated in list order."""
    if not phis:
        raise ValueError("nothing to aggregate")
    weights = _check_weights(weights, len(phis))
    ref = phis[0]
    for phi in phis[1:]:
        if phi.V.shape != ref.V.shape or phi.W.shape != ref.W.shape:
            raise ValueError("cannot aggregate layers of different shapes")
    V = weights[0] * phis[0].V
    W = weights[0] * phis[0].W
    theta = weights[0] * phis[0].theta
    for w, phi in zip(weights[1:], phis[1:]):
        V = V + w * phi.V
        W = W + w * phi.W
        theta = theta + w * phi.theta
    return LayerParams(V, W, max(theta, 0.0))


def aggregate_network(thetas: Sequence[NetworkParams], weights: Sequence[float]) -> NetworkParams:
    if not thetas:
        raise ValueError("nothing to aggregate")
    depth = thetas[0].depth
    if any(t.depth != depth for t in thetas):
        raise ValueError("cannot aggregate networks of different depths")
    return NetworkParams([aggregate_layer([t[i] for t in thetas], weights) for i in range(depth)])


@dataclass
class ClientState:
    client_id: int
    indices: np.ndarray
    data: Dataset
    theta_local: NetworkParams = field(default_factory=NetworkParams)


@dataclass
class RoundRecord:
    layer: int
    round: int
    client_phis: list[LayerParams]
    aggregate: LayerParams
    weights: list[float]
    client_losses: list[float]
    bytes_sent: list[int]
    wall_clock: float


class Transport:
    """In-process uplink; payloads travel as checkpoint-format text."""

    def __init__(self):
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        self.log: list[tuple[str, int, int]] = []
        self.last_batch: list[tuple[int, str, bytes]] = []

    def send(self, client_id: int, kind: str, payload: str) -> int:
        data = payload.encode("utf-8")
        self._inbox.put((client_id, kind, data))
        return len(data)

    def collect(self, count: int) -> list[tuple[int, str, bytes]]:
        """Receive ``count`` messages, ordered by client id."""
        msgs = [self._inbox.get_nowait() for _ in range(count)]
        msgs.sort(key=lambda m: m[0])
        for client_id, kind, data in msgs:
            self.log.append((kind, client_id, len(data)))
        self.last_batch = msgs
        return msgs


def _client_round(client: ClientState, l: int, c: int, phi: LayerParams, cfg: TrainConfig,
                  transport: Transport, counters: TrainCounters | None, log: list | None):
    prev, phi_k = train_layer_local(client.client_id, l, client.theta_local, phi, client.data, cfg,
                                    round_idx=c - 1, counters=counters, log=log)
    client.theta_local = prev
    local_loss = loss(prev.append(phi_k), client.data, cfg.loss_mode)
    nbytes = transport.send(client.client_id, "layer", dumps_layer(phi_k))
    return phi_k, local_loss, nbytes


def fed_cs_train(dataset: Dataset, partition: Partition, A, cfg: TrainConfig, C: int = 10,
                 workers: int = 1, transport: Transport | None = None,
                 counters: TrainCounters | None = None,
                 log: list | None = None) -> tuple[NetworkParams, list[RoundRecord]]:
    """Layer-wise federated training.

    For each layer the server initializes the layer and runs C rounds in which
    every client trains from the current consensus layer and its own earlier
    layers, then uploads only the new layer. After the last round each client
    appends the consensus layer to its network. Once all layers are done the
    clients upload their full networks and the server averages them.

    Clients run on ``workers`` threads; every reduction happens in client-id
    order, so the result does not depend on ``workers``.
    """
    if C < 1:
        raise ValueError("need at least one communication round")
    if partition.total != len(dataset):
        raise ValueError(f"partition covers {partition.total} samples, dataset holds {len(dataset)}")
    a = as_matrix(A)
    transport = transport if transport is not None else Transport()
    weights = partition.weights
    clients = [ClientState(k, ix, dataset.subset(ix)) for k, ix in enumerate(partition.client_indices)]
    history: list[RoundRecord] = []
    K = len(clients)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for l in range(1, cfg.L + 1):
            phi = initial_layer(a, cfg, l)
            for c in range(1, C + 1):
                start = time.perf_counter()
                client_logs = [[] if log is not None else None for _ in clients]
                jobs = [pool.submit(_client_round, client, l, c, phi, cfg, transport, counters, client_logs[k])
                        for k, client in enumerate(clients)]
                results = [job.result() for job in jobs]
                msgs = transport.collect(K)
                phis = [loads_layer(data.decode("utf-8")) for _, _, data in msgs]
                phi = aggregate_layer(phis, weights)
                if log is not None:
                    for entries in client_logs:
                        log.extend(entries)
                history.append(RoundRecord(
                    layer=l, round=c, client_phis=phis, aggregate=phi, weights=list(weights),
                    client_losses=[r[1] for r in results], bytes_sent=[len(m[2]) for m in msgs],
                    wall_clock=time.perf_counter() - start,
                ))
                logger.info("layer %d round %d: mean local loss %.4g", l, c,
                            float(np.mean(history[-1].client_losses)))
            for client in clients:
                client.theta_local = client.theta_local.append(phi)

    for client in clients:
        transport.send(client.client_id, "network", dumps_network(client.theta_local))
    finals = [loads_network(data.decode("utf-8")) for _, _, data in transport.collect(K)]
    return aggregate_network(finals, weights), history


def evaluate(theta: NetworkParams, test_set: Dataset) -> list[float]:
    """NMSE in dB of every layer's estimate over the test set."""
    if len(test_set) == 0:
        raise ValueError("empty test set")
    trace = forward(theta, test_set.y)
    return [nmse_db(test_set.x, xh) for xh in trace.x_hat]


def write_round_csv(path, history: Sequence[RoundRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUND_CSV_COLUMNS)
        for rec in history:
            for k, (value, nbytes) in enumerate(zip(rec.client_losses, rec.bytes_sent)):
                writer.writerow([rec.layer, rec.round, k, repr(float(value)), nbytes])
