"""Synthetic task generation and client data partitioning.

Generators run on numpy's PCG64 with explicit seeds; the protocol-critical
perturbation streams live in prng.py and never touch these generators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

TASKS = ("regression_quadratic", "classification_blobs")
PARTITION_MODES = ("iid", "dirichlet")

DIRICHLET_RETRIES = 10


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    task: str

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if len(self.labels) != len(self.inputs):
            raise ValueError("inputs and labels disagree on length")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class PartitionSpec:
    """How the dataset is split across clients."""

    mode: str = "iid"
    alpha: float = 1.0
    M: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PARTITION_MODES:
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and self.alpha <= 0:
            raise ValueError("dirichlet alpha must be positive")
        if self.M < 1:
            raise ValueError("need at least one client")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def make_classification_blobs(n: int, dim: int, classes: int, separation: float,
                              seed: int) -> Dataset:
    """Gaussian blobs around deterministic class centers, counts balanced +-1."""
    if not n >= classes >= 2:
        raise ValueError("need n >= classes >= 2")
    rng = _rng(seed)
    centers = rng.standard_normal((classes, dim)) * separation
    labels = np.arange(n, dtype=np.int64) % classes
    points = centers[labels] + rng.standard_normal((n, dim))
    perm = rng.permutation(n)
    return Dataset(points[perm], labels[perm], "classification_blobs")


def make_regression_quadratic(n: int, dim: int, out_dim: int = 1, seed: int = 0,
                              noise: float = 0.0) -> Dataset:
    """Linear-map targets so a linear model under squared error is a quadratic bowl."""
    if n < 1 or dim < 1 or out_dim < 1:
        raise ValueError("n, dim, out_dim must be positive")
    rng = _rng(seed)
    weights = rng.standard_normal((dim, out_dim)) / np.sqrt(dim)
    x = rng.standard_normal((n, dim))
    y = x @ weights
    if noise > 0:
        y = y + noise * rng.standard_normal(y.shape)
    return Dataset(x, y, "regression_quadratic")


def iid_partition(n: int, m: int, seed: int) -> list:
    """Random equal split of indices 0..n-1, sizes differing by at most one."""
    if m < 1:
        raise ValueError("need at least one shard")
    perm = _rng(seed).permutation(n)
    sizes = [n // m + (1 if i < n % m else 0) for i in range(m)]
    shards, off = [], 0
    for s in sizes:
        shards.append(np.sort(perm[off:off + s]))
        off += s
    return shards


def dirichlet_partition(labels, m: int, alpha: float, seed: int) -> list:
    """Label-skewed split: per-class client proportions drawn Dirichlet(alpha).

    Every index is assigned exactly once. If some shard comes out empty the
    draw is retried up to DIRICHLET_RETRIES times, then the skewed partition
    is kept with a warning.
    """
    if m < 1 or alpha <= 0:
        raise ValueError("need m >= 1 and alpha > 0")
    labels = np.asarray(labels)
    shards = None
    for attempt in range(DIRICHLET_RETRIES + 1):
        rng = _rng(seed + attempt)
        parts = [[] for _ in range(m)]
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(m, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
            for shard, chunk in zip(parts, np.split(idx, cuts)):
                shard.extend(chunk.tolist())
        shards = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
        if all(len(s) > 0 for s in shards):
            return shards
    warnings.warn(
        f"dirichlet partition left empty shards after {DIRICHLET_RETRIES} retries",
        stacklevel=2,
    )
    return shards


def partition_dataset(dataset: Dataset, spec: PartitionSpec) -> list:
    if spec.mode == "iid":
        return iid_partition(len(dataset), spec.M, spec.seed)
    return dirichlet_partition(dataset.labels, spec.M, spec.alpha, spec.seed)


# -----------------------------------------------------------------------------
# Delimited dump/load
# -----------------------------------------------------------------------------

def dump_dataset(dataset: Dataset, path, seed: int = 0):
    """Self-describing delimited text dump; floats use repr for exact round trips."""
    is_int = np.issubdtype(dataset.labels.dtype, np.integer)
    label_width = 1 if dataset.labels.ndim == 1 else dataset.labels.shape[1]
    with open(path, "w") as fh:
        fh.write(
            f"# task={dataset.task} n={len(dataset)} dim={dataset.inputs.shape[1]} "
            f"label_kind={'int' if is_int else 'float'} label_width={label_width} "
            f"seed={seed}\n"
        )
        for x, y in zip(dataset.inputs, np.atleast_2d(dataset.labels.T).T):
            cells = [repr(v) for v in x.tolist()]
            cells += [str(v) for v in np.atleast_1d(y).tolist()]
            fh.write(",".join(cells) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise ValueError("missing dataset header row")
        meta = dict(field.split("=", 1) for field in header[2:].split())
        dim = int(meta["dim"])
        width = int(meta["label_width"])
        is_int = meta["label_kind"] == "int"
        inputs, labels = [], []
        for line in fh:
            cells = line.strip().split(",")
            inputs.append([float(c) for c in cells[:dim]])
            raw = cells[dim:dim + width]
            labels.append([int(c) for c in raw] if is_int else [float(c) for c in raw])
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64 if is_int else np.float64)
    if width == 1 and is_int:
        labels = labels.ravel()
    return Dataset(inputs, labels, meta["task"])
