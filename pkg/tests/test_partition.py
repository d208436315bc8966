import json

import numpy as np
import pytest

from feded.errors import ConfigError, PartitionError
from feded.partition import (
    Partition,
    dirichlet_partition,
    partition_stats,
    quantity_shard_partition,
)


def balanced_labels(num_classes=10, per_class=500):
    return np.repeat(np.arange(num_classes), per_class)


def check_invariants(part, labels, num_classes):
    flat = np.concatenate(part.assignments)
    assert flat.size == labels.size
    assert np.array_equal(np.sort(flat), np.arange(labels.size))
    assert all(a.size > 0 for a in part.assignments)
    assert np.array_equal(part.count_matrix.sum(axis=1), [a.size for a in part.assignments])
    assert np.array_equal(part.count_matrix.sum(axis=0), np.bincount(labels, minlength=num_classes))


def test_random_draws_keep_invariants():
    rng = np.random.default_rng(7)
    exhausted = 0
    for _ in range(200):
        c = int(rng.integers(2, 11))
        labels = rng.integers(0, c, size=int(rng.integers(50, 400)))
        labels[:c] = np.arange(c)
        n = int(rng.integers(1, 16))
        seed = int(rng.integers(0, 2**31))
        if rng.random() < 0.5:
            try:
                part = dirichlet_partition(labels, n, float(10 ** rng.uniform(-1.5, 2)), seed, c)
            except PartitionError:
                exhausted += 1  # documented outcome for tiny beta with many clients
                continue
        else:
            s = int(rng.integers(1, 5))
            if n * s < c:
                with pytest.raises(PartitionError):
                    quantity_shard_partition(labels, n, s, seed, c)
                continue
            part = quantity_shard_partition(labels, n, s, seed, c)
            assert (part.count_matrix > 0).sum(axis=1).max() <= s
        check_invariants(part, labels, c)
    assert exhausted <= 10


def test_dirichlet_deterministic_and_seed_sensitive():
    labels = balanced_labels(per_class=100)
    a = dirichlet_partition(labels, 10, 0.5, seed=3)
    b = dirichlet_partition(labels, 10, 0.5, seed=3)
    c = dirichlet_partition(labels, 10, 0.5, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))
    assert any(x.size != y.size or not np.array_equal(x, y) for x, y in zip(a.assignments, c.assignments))


def test_dirichlet_large_beta_is_uniform():
    labels = balanced_labels()
    part = dirichlet_partition(labels, 10, 1e6, seed=0)
    props = part.count_matrix / part.count_matrix.sum(axis=1, keepdims=True)
    assert np.all(np.abs(props - 0.1) <= 0.05 * 0.1)


def test_dirichlet_small_beta_has_empty_classes():
    labels = balanced_labels()
    medians = [np.median((dirichlet_partition(labels, 10, 0.05, seed=s).count_matrix == 0).sum(axis=1))
               for s in range(20)]
    assert np.median(medians) >= 3


def test_dirichlet_errors():
    labels = balanced_labels(per_class=3)
    with pytest.raises(ConfigError):
        dirichlet_partition(labels, 3, 0.0)
    with pytest.raises(ConfigError):
        dirichlet_partition(labels, 0, 1.0)
    with pytest.raises(PartitionError):
        dirichlet_partition(labels, labels.size + 1, 1.0)
    with pytest.raises(PartitionError):
        # one sample per class, far fewer than needed to feed 10 clients reliably at tiny beta
        dirichlet_partition(np.arange(10), 10, 1e-4, seed=0)


def test_quantity_two_shards_bound():
    labels = balanced_labels()
    for seed in range(5):
        part = quantity_shard_partition(labels, 10, 2, seed)
        check_invariants(part, labels, 10)
        assert (part.count_matrix > 0).sum(axis=1).max() <= 2


def test_quantity_single_client_holds_everything():
    labels = balanced_labels(per_class=20)
    part = quantity_shard_partition(labels, 1, 20, seed=1)
    stats = partition_stats(part)
    assert stats["num_empty"] == [0]
    assert stats["sample_counts"] == [200]


def test_quantity_remainder_goes_to_tail():
    labels = np.zeros(7, dtype=np.int64)
    part = quantity_shard_partition(labels, 3, 1, seed=0, num_classes=1)
    assert sorted(a.size for a in part.assignments) == [2, 2, 3]


def test_quantity_errors():
    labels = balanced_labels(per_class=2)
    with pytest.raises(PartitionError):
        quantity_shard_partition(labels, 11, 2)
    with pytest.raises(PartitionError):
        quantity_shard_partition(labels, 3, 2)  # 6 shards, 10 classes
    with pytest.raises(ConfigError):
        quantity_shard_partition(labels, 2, 0)


def test_stats_match_independent_recount():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 6, size=300)
    part = dirichlet_partition(labels, 5, 0.3, seed=9, num_classes=6)
    stats = partition_stats(part)
    for i, idx in enumerate(part.assignments):
        recount = [0] * 6
        for j in idx:
            recount[labels[j]] += 1
        assert stats["count_matrix"][i] == recount
        assert stats["empty_classes"][i] == [c for c in range(6) if recount[c] == 0]
        assert stats["num_empty"][i] == recount.count(0)
        assert stats["sample_counts"][i] == len(idx)
    json.dumps(stats)


def test_single_client_stats():
    labels = np.array([0, 1, 1, 2, 2, 2])
    stats = partition_stats(dirichlet_partition(labels, 1, 1.0))
    assert stats["num_empty"] == [0]
    assert stats["count_matrix"] == [[1, 2, 3]]


def test_json_round_trip(tmp_path):
    part = dirichlet_partition(balanced_labels(per_class=30), 4, 0.5, seed=1)
    path = tmp_path / "p.json"
    part.save(path)
    data = json.loads(path.read_text())
    assert set(data) == {"clients", "counts"}
    back = Partition.from_dict(data)
    assert all(np.array_equal(x, y) for x, y in zip(back.assignments, part.assignments))
    assert np.array_equal(back.count_matrix, part.count_matrix)
