"""Synthetic Gaussian-blob datasets and IID / non-IID agent partitions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ContractViolation, PartitionInfeasible
from .nn import Batch


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractViolation("inputs must be M x d with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractViolation(f"labels must lie in [0, {self.num_classes})")
        if np.unique(self.labels).size != self.num_classes:
            raise ContractViolation("every class needs at least one sample")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray) -> Batch:
        return Batch(self.inputs[indices], self.labels[indices])

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label"] + [f"x{j + 1}" for j in range(self.dim)])
            for y, row in zip(self.labels, self.inputs):
                writer.writerow([int(y)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, num_classes: int | None = None) -> Dataset:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and rows[0] and rows[0][0].strip().lower() == "label":
            rows = rows[1:]
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        inputs = np.array([[float(v) for v in r[1:]] for r in rows])
        return cls(inputs, labels, num_classes if num_classes is not None else int(labels.max()) + 1)


@dataclass(frozen=True)
class PartitionSpec:
    num_agents: int
    classes_per_agent: tuple[int, int] = (5, 8)
    samples_per_agent: tuple[int, int] = (60, 80)
    iid: bool = False
    seed: int = 0


def make_gaussian_blobs(num_classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters around random unit directions.

    The means are scaled up, if needed, so that every pair is at least
    ``4 * spread`` apart.
    """
    if num_classes < 2 or dim < 2:
        raise ContractViolation("need at least 2 classes and 2 dimensions")
    if per_class < 1 or spread < 0:
        raise ContractViolation("per_class must be positive and spread nonnegative")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    min_gap = gaps[np.triu_indices(num_classes, 1)].min()
    if min_gap <= 1e-12:
        raise ContractViolation("class means coincide; increase dim or change seed")
    means *= max(1.0, 4.0 * spread / min_gap)
    labels = np.repeat(np.arange(num_classes), per_class)
    inputs = means[labels] + spread * rng.standard_normal((labels.size, dim))
    return Dataset(inputs, labels, num_classes)


def split_dataset(ds: Dataset, test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split holding out ``test_per_class`` samples of every class."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        if members.size <= test_per_class:
            raise PartitionInfeasible(f"class {c} has {members.size} samples, cannot hold out {test_per_class}")
        test_idx.append(rng.choice(members, test_per_class, replace=False))
    test_mask = np.zeros(len(ds), dtype=bool)
    test_mask[np.concatenate(test_idx)] = True
    train = Dataset(ds.inputs[~test_mask], ds.labels[~test_mask], ds.num_classes)
    test = Dataset(ds.inputs[test_mask], ds.labels[test_mask], ds.num_classes)
    return train, test


def partition(ds: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Disjoint per-agent index sets.

    Non-IID: each agent draws a class count, that many distinct classes and a
    sample count, takes one sample from every chosen class and fills the rest
    from the pooled remainder of its classes, all without replacement across
    agents.
    """
    k = spec.num_agents
    if k < 1:
        raise PartitionInfeasible("num_agents must be positive")
    rng = np.random.default_rng(spec.seed)
    m = len(ds)
    if spec.iid:
        if m < k:
            raise PartitionInfeasible(f"dataset size {m} < num_agents {k}")
        return [np.sort(part) for part in np.array_split(rng.permutation(m), k)]

    c_lo, c_hi = spec.classes_per_agent
    s_lo, s_hi = spec.samples_per_agent
    if not 1 <= c_lo <= c_hi <= ds.num_classes:
        raise PartitionInfeasible(f"classes_per_agent {spec.classes_per_agent} must satisfy 1 <= lo <= hi <= {ds.num_classes}")
    if not 1 <= s_lo <= s_hi:
        raise PartitionInfeasible(f"samples_per_agent {spec.samples_per_agent} must satisfy 1 <= lo <= hi")
    if s_lo < c_hi:
        raise PartitionInfeasible(f"samples_per_agent lo={s_lo} cannot cover classes_per_agent hi={c_hi}")
    if k * s_lo > m:
        raise PartitionInfeasible(f"total samples: {k} agents x {s_lo} > dataset size {m}")

    available = np.ones(m, dtype=bool)
    parts = []
    for agent in range(k):
        n_cls = int(rng.integers(c_lo, c_hi + 1))
        classes = rng.choice(ds.num_classes, n_cls, replace=False)
        n_samples = int(rng.integers(s_lo, s_hi + 1))
        chosen = []
        for c in classes:
            pool = np.flatnonzero(available & (ds.labels == c))
            if pool.size == 0:
                raise PartitionInfeasible(f"class {c} exhausted while sampling agent {agent}")
            pick = int(rng.choice(pool))
            available[pick] = False
            chosen.append(pick)
        pool = np.flatnonzero(available & np.isin(ds.labels, classes))
        extra = n_samples - n_cls
        if pool.size < extra:
            raise PartitionInfeasible(
                f"agent {agent} needs {extra} more samples from classes {sorted(classes.tolist())}, only {pool.size} left"
            )
        picks = rng.choice(pool, extra, replace=False)
        available[picks] = False
        parts.append(np.sort(np.concatenate([np.array(chosen, dtype=np.int64), picks])))
    return parts


def batch_indices(indices: Sequence[int] | np.ndarray, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded shuffle followed by contiguous chunks; the last chunk may be short."""
    if batch_size < 1:
        raise ContractViolation("batch_size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(np.asarray(indices))
    return [order[i : i + batch_size] for i in range(0, order.size, batch_size)]


def batches(ds: Dataset, indices, batch_size: int, epoch_seed) -> Iterator[Batch]:
    for chunk in batch_indices(indices, batch_size, epoch_seed):
        yield ds.subset(chunk)
