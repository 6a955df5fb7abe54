"""Federated layer-wise training of unfolded ISTA (LISTA) networks for sparse recovery."""

from fed_unroll.data import (
    Dataset,
    Partition,
    Sample,
    SensingMatrix,
    build_dataset,
    generate_sensing_matrix,
    generate_sparse_vector,
    load_matrix_file,
    measure,
    partition_dataset,
)
from fed_unroll.federation import (
    aggregate_layer,
    aggregate_network,
    evaluate,
    fed_cs_train,
)
from fed_unroll.ista import IstaConfig, ista_solve, ista_step, soft_threshold
from fed_unroll.layerwise import TrainConfig, train_centralized, train_layer_local
from fed_unroll.lista import (
    ForwardTrace,
    LayerParams,
    NetworkParams,
    backward,
    forward,
    init_layer,
    loss,
    sgd_step,
)
from fed_unroll.metrics import nmse_db, psnr

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ForwardTrace",
    "IstaConfig",
    "LayerParams",
    "NetworkParams",
    "Partition",
    "Sample",
    "SensingMatrix",
    "TrainConfig",
    "aggregate_layer",
    "aggregate_network",
    "backward",
    "build_dataset",
    "evaluate",
    "fed_cs_train",
    "forward",
    "generate_sensing_matrix",
    "generate_sparse_vector",
    "init_layer",
    "ista_solve",
    "ista_step",
    "load_matrix_file",
    "loss",
    "measure",
    "nmse_db",
    "partition_dataset",
    "psnr",
    "sgd_step",
    "soft_threshold",
    "train_centralized",
    "train_layer_local",
]
