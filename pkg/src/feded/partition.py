"""Label-skewed client partitions: per-class Dirichlet splits and label shards."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from feded.errors import ConfigError, PartitionError, ReportIOError

MAX_RETRIES = 100


@dataclass
class Partition:
    assignments: list[np.ndarray]
    count_matrix: np.ndarray  # (N, C)

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    @property
    def num_classes(self) -> int:
        return self.count_matrix.shape[1]

    @classmethod
    def from_assignments(cls, assignments, labels, num_classes: int) -> "Partition":
        labels = np.asarray(labels)
        idx = [np.sort(np.asarray(a, dtype=np.int64)) for a in assignments]
        counts = np.stack([np.bincount(labels[a], minlength=num_classes) for a in idx])
        return cls(idx, counts.astype(np.int64))

    def to_dict(self) -> dict:
        return {
            "clients": [a.tolist() for a in self.assignments],
            "counts": self.count_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls([np.asarray(a, dtype=np.int64) for a in d["clients"]],
                   np.asarray(d["counts"], dtype=np.int64))

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict()))
        except OSError as e:
            raise ReportIOError(f"cannot write partition to {path}: {e}") from e


def _class_indices(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ConfigError("labels must be a non-empty vector")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return labels, num_classes


def dirichlet_partition(labels, num_clients: int, beta: float, seed: int = 0,
                        num_classes: int | None = None) -> Partition:
    """Split every class across clients by proportions drawn from Dir(beta).

    Classes are processed in ascending order. A draw that leaves a client with
    no samples is discarded and redrawn from the next sub-seed.
    """
    labels, num_classes = _class_indices(labels, num_classes)
    if not beta > 0:
        raise ConfigError(f"dirichlet beta must be positive, got {beta}")
    if num_clients < 1:
        raise ConfigError(f"num_clients must be >= 1, got {num_clients}")
    if num_clients > labels.size:
        raise PartitionError(f"{num_clients} clients cannot all get a sample out of {labels.size}")
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]

    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([seed, attempt])
        buckets = [[] for _ in range(num_clients)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.gamma(beta, 1.0, size=num_clients)
            total = props.sum()
            if total == 0.0:
                # every gamma draw underflowed; the limit is a one-hot vector
                props[rng.integers(num_clients)] = 1.0
                total = 1.0
            cuts = (np.cumsum(props / total) * idx.size).astype(np.int64)[:-1]
            for client, part in enumerate(np.split(idx, cuts)):
                buckets[client].append(part)
        assignments = [np.concatenate(b) if b else np.empty(0, np.int64) for b in buckets]
        if all(a.size for a in assignments):
            return Partition.from_assignments(assignments, labels, num_classes)
    raise PartitionError(
        f"no Dirichlet(beta={beta}) draw gave all {num_clients} clients a sample "
        f"after {MAX_RETRIES} attempts"
    )


def _shards_per_class(sizes: np.ndarray, total_shards: int) -> np.ndarray:
    # one shard per present class, then hand out the rest to the class whose
    # shards are currently largest (lowest index on ties)
    k = (sizes > 0).astype(np.int64)
    for _ in range(total_shards - int(k.sum())):
        load = np.where(k < sizes, sizes / np.maximum(k, 1), -1.0)
        k[int(np.argmax(load))] += 1
    return k


def quantity_shard_partition(labels, num_clients: int, shards_per_client: int, seed: int = 0,
                             num_classes: int | None = None) -> Partition:
    """Group data by label, cut it into ``N*s`` single-label shards, deal ``s`` per client."""
    labels, num_classes = _class_indices(labels, num_classes)
    if num_clients < 1 or shards_per_client < 1:
        raise ConfigError("num_clients and shards_per_client must be >= 1")
    total = num_clients * shards_per_client
    if total > labels.size:
        raise PartitionError(f"{total} shards requested from only {labels.size} samples")
    sizes = np.bincount(labels, minlength=num_classes)
    present = int(np.count_nonzero(sizes))
    if total < present:
        raise PartitionError(
            f"{total} single-label shards cannot cover {present} classes; "
            f"raise num_clients or shards_per_client"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(labels.size)
    order = perm[np.argsort(labels[perm], kind="stable")]

    shards = []
    start = 0
    for c, k in enumerate(_shards_per_class(sizes, total)):
        n = int(sizes[c])
        block = order[start:start + n]
        start += n
        if k == 0:
            continue
        base, rem = divmod(n, int(k))
        widths = [base] * (k - rem) + [base + 1] * rem  # larger shards at the tail
        shards.extend(np.split(block, np.cumsum(widths)[:-1]))

    shard_order = rng.permutation(len(shards))
    assignments = [
        np.concatenate([shards[j] for j in shard_order[i * shards_per_client:(i + 1) * shards_per_client]])
        for i in range(num_clients)
    ]
    return Partition.from_assignments(assignments, labels, num_classes)


def partition_stats(partition: Partition) -> dict:
    counts = partition.count_matrix
    return {
        "num_clients": partition.num_clients,
        "sample_counts": counts.sum(axis=1).tolist(),
        "empty_classes": [np.flatnonzero(row == 0).tolist() for row in counts],
        "num_empty": (counts == 0).sum(axis=1).tolist(),
        "distinct_labels": (counts > 0).sum(axis=1).tolist(),
        "count_matrix": counts.tolist(),
    }
