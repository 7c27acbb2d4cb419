"""Density clustering and cluster-held-out split construction.

The DBSCAN here is deterministic by construction: points are scanned in
row order, neighbor lists are kept sorted by index, and a border point
reachable from several clusters goes to the lowest-numbered one.  Noise
rows get the label -1 and never participate in splits.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .rng import keyed_rng


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray
    k: int
    source: str

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.ndim != 1:
            raise DataError("cluster labels must be a 1-D array")
        if self.k < 0:
            raise DataError("cluster count cannot be negative")
        non_noise = labels[labels != -1]
        if non_noise.size and (non_noise.min() < 0 or non_noise.max() >= self.k):
            raise DataError("cluster labels must lie in [0, k) or be -1 for noise")
        present = set(non_noise.tolist())
        if present != set(range(self.k)):
            raise DataError("every cluster id in [0, k) must be non-empty")
        labels = labels.copy()
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> dict[int, int]:
        return {c: int((self.labels == c).sum()) for c in range(self.k)}


@dataclass(frozen=True)
class SplitSpec:
    """Index sets of one cluster-held-out split.

    Training and validation rows come from ``train_cluster``; test rows
    are every row of the other eligible clusters.
    """

    train_idx: np.ndarray
    valid_idx: np.ndarray
    test_idx: np.ndarray
    train_cluster: int
    seed: int

    def __post_init__(self):
        arrays = {}
        for name in ("train_idx", "valid_idx", "test_idx"):
            arr = np.asarray(getattr(self, name), dtype=int)
            arrays[name] = arr
        sets = [set(a.tolist()) for a in arrays.values()]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise DataError("split index sets must be pairwise disjoint")
        for name, arr in arrays.items():
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def dbscan(coordinates: np.ndarray, eps: float, min_pts: int) -> ClusterLabels:
    """Density-based clustering with deterministic label assignment.

    A point is core when its closed eps-ball contains at least min_pts
    points (itself included).  Clusters are connected components of core
    points; border points attach to the lowest-numbered claiming
    cluster; everything else is noise (-1).
    """
    X = np.asarray(coordinates, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError("dbscan expects a non-empty 2-D coordinate matrix")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ConfigError(f"min_pts must be >= 1, got {min_pts}")
    n = X.shape[0]
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    within = d2 <= eps * eps
    neighbors = [np.flatnonzero(within[i]) for i in range(n)]  # sorted by index
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    labels = np.full(n, -1, dtype=int)
    k = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = k
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if core[q] and labels[q] == -1:
                    labels[q] = k
                    queue.append(q)
        k += 1

    for i in range(n):
        if core[i]:
            continue
        claiming = [labels[j] for j in neighbors[i] if core[j]]
        if claiming:
            labels[i] = min(claiming)
    return ClusterLabels(labels=labels, k=k, source="dbscan")


def make_cluster_splits(
    data: Dataset,
    labels: ClusterLabels,
    train_n: int,
    valid_n: int,
    min_cluster_size: int,
    seed: int,
) -> list[SplitSpec]:
    """One split per eligible cluster.

    A cluster is eligible when its size reaches ``min_cluster_size``; an
    eligible cluster that still cannot supply train_n + valid_n rows is
    an error rather than a silent skip.  Sampling is without replacement
    from a stream keyed by the cluster's smallest row index, so
    relabeling clusters never changes the drawn index sets.
    """
    if len(labels.labels) != data.n:
        raise DataError("cluster labels are not aligned with the dataset rows")
    if train_n < 1 or valid_n < 0:
        raise ConfigError("train_n must be >= 1 and valid_n >= 0")
    if min_cluster_size < 1:
        raise ConfigError("min_cluster_size must be >= 1")

    sizes = labels.sizes()
    eligible = [c for c in range(labels.k) if sizes[c] >= min_cluster_size]
    for c in eligible:
        if sizes[c] < train_n + valid_n:
            raise DataError(
                f"cluster {c} has {sizes[c]} rows, fewer than train_n + valid_n = {train_n + valid_n}"
            )

    splits: list[SplitSpec] = []
    for c in eligible:
        members = labels.members(c)  # ascending row order
        rng = keyed_rng(seed, int(members[0]))
        perm = rng.permutation(members.size)
        chosen = members[perm[: train_n + valid_n]]
        train_idx = np.sort(chosen[:train_n])
        valid_idx = np.sort(chosen[train_n:])
        test_idx = np.sort(
            np.concatenate([labels.members(o) for o in eligible if o != c])
            if len(eligible) > 1
            else np.empty(0, dtype=int)
        )
        splits.append(
            SplitSpec(
                train_idx=train_idx,
                valid_idx=valid_idx,
                test_idx=test_idx,
                train_cluster=c,
                seed=seed,
            )
        )
    return splits


def load_external_labels(path: str | Path, data: Dataset) -> ClusterLabels:
    """Read an ``id,cluster`` file and align it to the dataset row order.

    Every dataset id must appear exactly once.  Non-noise cluster values
    are remapped, in sorted order, onto 0..K-1 so downstream code can
    rely on contiguous ids; -1 stays noise.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"labels file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "cluster"]:
            raise DataError(f"{path}: expected header 'id,cluster'")
        mapping: dict[str, int] = {}
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}: row {r}: expected 'id,cluster'")
            rid = row[0].strip()
            if rid in mapping:
                raise DataError(f"{path}: duplicate id {rid!r}")
            try:
                mapping[rid] = int(row[1])
            except ValueError:
                raise DataError(f"{path}: row {r}: non-integer cluster {row[1]!r}") from None

    unknown = set(mapping) - set(data.ids)
    if unknown:
        raise DataError(f"{path}: ids not present in dataset: {sorted(unknown)[:5]}")
    missing = [rid for rid in data.ids if rid not in mapping]
    if missing:
        raise DataError(f"{path}: missing labels for dataset ids: {missing[:5]}")

    raw = np.array([mapping[rid] for rid in data.ids], dtype=int)
    distinct = sorted(v for v in set(raw.tolist()) if v != -1)
    remap = {v: i for i, v in enumerate(distinct)}
    labels = np.array([remap.get(v, -1) for v in raw], dtype=int)
    return ClusterLabels(labels=labels, k=len(distinct), source="external")


def write_split_csv(split: SplitSpec, ids, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    roles = [("train", split.train_idx), ("valid", split.valid_idx), ("test", split.test_idx)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "role"])
        for role, idx in roles:
            for i in idx:
                writer.writerow([ids[int(i)], role])


def read_split_csv(path: str | Path, ids, train_cluster: int, seed: int) -> SplitSpec:
    path = Path(path)
    if not path.exists():
        raise DataError(f"split file not found: {path}")
    index_of = {rid: i for i, rid in enumerate(ids)}
    buckets: dict[str, list[int]] = {"train": [], "valid": [], "test": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "role"]:
            raise DataError(f"{path}: expected header 'id,role'")
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            rid, role = row[0].strip(), row[1].strip()
            if rid not in index_of:
                raise DataError(f"{path}: row {r}: unknown id {rid!r}")
            if role not in buckets:
                raise DataError(f"{path}: row {r}: unknown role {role!r}")
            buckets[role].append(index_of[rid])
    return SplitSpec(
        train_idx=np.sort(np.array(buckets["train"], dtype=int)),
        valid_idx=np.sort(np.array(buckets["valid"], dtype=int)),
        test_idx=np.sort(np.array(buckets["test"], dtype=int)),
        train_cluster=train_cluster,
        seed=seed,
    )
