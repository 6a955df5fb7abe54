"""Synthetic compressed-sensing problems and their split across clients."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fed_unroll.textio import FormatError, TokenReader, dumps_matrix, format_row, loads_matrix

COLUMN_NORM_RTOL = 1e-9
MAGNITUDE_DISTS = ("gaussian", "rademacher", "uniform")


def _rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``seed`` and an optional stream key (e.g. sample index)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(stream)))


@dataclass(frozen=True)
class SensingMatrix:
    """Measurement operator A with unit-norm columns."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or 0 in a.shape:
            raise ValueError(f"sensing matrix must be a non-empty 2-D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("sensing matrix has non-finite entries")
        norms = np.linalg.norm(a, axis=0)
        if not np.allclose(norms, 1.0, rtol=COLUMN_NORM_RTOL, atol=0.0):
            raise ValueError("sensing matrix columns must have unit Euclidean norm")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def N(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def T(self) -> np.ndarray:
        return self.entries.T

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def as_matrix(A) -> np.ndarray:
    return A.entries if isinstance(A, SensingMatrix) else np.asarray(A, dtype=float)


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: np.ndarray


@dataclass
class Dataset:
    """Samples stored row-wise: ``x`` is (S, N), ``y`` is (S, M)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y must hold the same number of samples")

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            raise ValueError("cannot build a dataset from zero samples")
        return cls(np.stack([s.x for s in samples]), np.stack([s.y for s in samples]))

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.x[i], self.y[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def M(self) -> int:
        return self.y.shape[1]

    @property
    def N(self) -> int:
        return self.x.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.x[idx], self.y[idx])

    def head(self, n: int) -> "Dataset":
        return Dataset(self.x[:n], self.y[:n])


@dataclass
class Partition:
    """Disjoint cover of sample indices ``0..S-1`` by K client index sets."""

    client_indices: list[np.ndarray]
    total: int = field(default=-1)

    def __post_init__(self):
        self.client_indices = [np.asarray(ix, dtype=int) for ix in self.client_indices]
        if not self.client_indices:
            raise ValueError("partition needs at least one client")
        if any(len(ix) == 0 for ix in self.client_indices):
            raise ValueError("every client must own at least one sample")
        flat = np.concatenate(self.client_indices)
        if self.total < 0:
            self.total = len(flat)
        if len(flat) != self.total or not np.array_equal(np.sort(flat), np.arange(self.total)):
            raise ValueError("client index sets must be disjoint and cover all samples")

    @property
    def K(self) -> int:
        return len(self.client_indices)

    @property
    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.client_indices]

    @property
    def weights(self) -> list[float]:
        """Aggregation weights |S_k| / |S|."""
        return [len(ix) / self.total for ix in self.client_indices]


def generate_sensing_matrix(M: int, N: int, seed: int) -> SensingMatrix:
    """Gaussian N(0, 1/M) matrix with columns rescaled to unit norm."""
    if M <= 0 or N <= 0:
        raise ValueError("matrix dimensions must be positive")
    if M >= N:
        raise ValueError(f"compression requires M < N, got M={M}, N={N}")
    raw = _rng(seed).normal(0.0, 1.0 / np.sqrt(M), size=(M, N))
    return SensingMatrix(raw / np.linalg.norm(raw, axis=0))


def generate_sparse_vector(N: int, p: float, magnitude_dist: str = "gaussian", seed: int = 0) -> np.ndarray:
    """Bernoulli(p) support with magnitudes from ``magnitude_dist``.

    The support is decided by ``rng.random(N) < p`` on a fresh generator for
    ``seed``; values are drawn afterwards from the same stream, one per
    coordinate, so the support is reproducible independently of the values.

    ``magnitude_dist`` is one of ``gaussian`` (N(0, 1)), ``rademacher`` (+-1)
    or ``uniform`` (U[-1, 1]).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"support probability must lie in (0, 1), got {p}")
    if N <= 0:
        raise ValueError("signal length must be positive")
    rng = _rng(seed)
    support = rng.random(N) < p
    if magnitude_dist == "gaussian":
        values = rng.standard_normal(N)
    elif magnitude_dist == "rademacher":
        values = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    elif magnitude_dist == "uniform":
        values = rng.uniform(-1.0, 1.0, N)
    else:
        raise ValueError(f"unknown magnitude distribution {magnitude_dist!r}; choose from {MAGNITUDE_DISTS}")
    return np.where(support, values, 0.0)


def measure(A, x) -> np.ndarray:
    a = as_matrix(A)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != a.shape[1]:
        raise ValueError(f"signal length {x.shape[-1]} does not match operator width {a.shape[1]}")
    return x @ a.T if x.ndim == 2 else a @ x


def build_dataset(A, S_total: int, p: float, seed: int, magnitude_dist: str = "gaussian") -> Dataset:
    """S_total i.i.d. samples; sample ``s`` uses its own stream so prefixes are shared across sizes."""
    if S_total < 1:
        raise ValueError("dataset needs at least one sample")
    a = as_matrix(A)
    x = np.stack([generate_sparse_vector(a.shape[1], p, magnitude_dist, seed=_seed_for(seed, s)) for s in range(S_total)])
    return Dataset(x, measure(a, x))


def _seed_for(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(index,)).generate_state(1, np.uint64)[0])


def partition_dataset(dataset, K: int, sizes: Sequence[int] | None = None) -> Partition:
    """Contiguous split into K clients; remainder goes to the first clients."""
    total = dataset if isinstance(dataset, int) else len(dataset)
    if K < 1:
        raise ValueError("need at least one client")
    if K > total:
        raise ValueError(f"cannot give {K} clients non-empty shares of {total} samples")
    if sizes is None:
        base, extra = divmod(total, K)
        sizes = [base + (1 if k < extra else 0) for k in range(K)]
    else:
        sizes = [int(s) for s in sizes]
        if len(sizes) != K:
            raise ValueError("need one size per client")
        if any(s < 1 for s in sizes) or sum(sizes) != total:
            raise ValueError(f"client sizes must be >= 1 and sum to {total}")
    bounds = np.cumsum([0, *sizes])
    return Partition([np.arange(bounds[k], bounds[k + 1]) for k in range(K)], total=total)


def load_matrix_file(path) -> np.ndarray:
    """Read a "M N" + rows matrix file. No column normalization is applied."""
    return loads_matrix(Path(path).read_text(encoding="utf-8"))


def save_matrix_file(path, mat) -> None:
    Path(path).write_text(dumps_matrix(mat), encoding="utf-8")


def dumps_dataset(dataset: Dataset) -> str:
    lines = [f"{len(dataset)} {dataset.M} {dataset.N}"]
    for s in range(len(dataset)):
        lines.append("x " + format_row(dataset.x[s]))
        lines.append("y " + format_row(dataset.y[s]))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines:
        raise FormatError("empty dataset file")
    header = TokenReader(" ".join(lines[0]))
    S, M, N = header.int(), header.int(), header.int()
    header.expect_end()
    body = lines[1:]
    if len(body) != 2 * S:
        raise FormatError(f"header declares {S} samples but file holds {len(body)} blocks")
    x = np.empty((S, N))
    y = np.empty((S, M))
    for s in range(S):
        for offset, tag, dest, width in ((0, "x", x, N), (1, "y", y, M)):
            parts = body[2 * s + offset]
            if parts[0] != tag:
                raise FormatError(f"sample {s}: expected an {tag!r} block, got {parts[0]!r}")
            reader = TokenReader(" ".join(parts[1:]))
            dest[s] = reader.block(1, width)[0]
            reader.expect_end()
    return Dataset(x, y)


def save_dataset(path, dataset: Dataset) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
