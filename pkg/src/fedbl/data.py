"""Core data containers: weight vectors on the capped simplex and
per-node sample sets for a federated task.

Node 0 is always the validation set held by the coordinating center;
nodes 1..K hold the training shards.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DimensionMismatchError, EmptyFeasibleSetError

__all__ = [
    "WeightVector",
    "SamplePoint",
    "NodeDataset",
    "FederatedDataset",
    "as_vector",
    "as_matrix",
    "write_csv",
    "read_csv",
]

_SUM_TOL = 1e-9
_BOX_TOL = 1e-12


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 1-D float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 2-D float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class WeightVector:
    """Point on the capped simplex {w : sum(w) = 1, 0 <= w_k <= b}.

    Construction validates the sum to 1e-9 and clamps entries into
    [0, b] when the violation is below 1e-12; larger violations raise.
    """

    values: np.ndarray
    cap: float

    def __post_init__(self):
        v = as_vector(self.values, "weights")
        k = v.size
        if k < 1:
            raise ValueError("weight vector must have at least one entry")
        b = float(self.cap)
        if not (0.0 < b <= 1.0 + _BOX_TOL):
            raise ValueError(f"cap must lie in (0, 1], got {b}")
        if b * k < 1.0 - _BOX_TOL:
            raise EmptyFeasibleSetError(
                f"cap {b} with {k} nodes leaves the simplex empty (b*K < 1)"
            )
        if np.any(v < -_BOX_TOL) or np.any(v > b + _BOX_TOL):
            raise ValueError(
                f"weights must lie in [0, {b}] within {_BOX_TOL}; got range "
                f"[{v.min()}, {v.max()}]"
            )
        s = float(v.sum())
        if abs(s - 1.0) > _SUM_TOL:
            raise ValueError(f"weights must sum to 1 within {_SUM_TOL}; got {s}")
        v = np.clip(v, 0.0, b)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "cap", b)

    @property
    def k(self) -> int:
        return self.values.size

    @staticmethod
    def uniform(k: int, cap: float = 1.0) -> "WeightVector":
        return WeightVector(np.full(k, 1.0 / k), cap)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self) -> int:
        return self.values.size


class SamplePoint(NamedTuple):
    """One labelled example: feature vector and scalar target."""

    features: np.ndarray
    target: float


@dataclass(frozen=True)
class NodeDataset:
    """Sample shard held by one node.

    node_id 0 denotes the center's validation set.
    """

    node_id: int
    features: np.ndarray  # (n, d)
    targets: np.ndarray   # (n,)

    def __post_init__(self):
        X = as_matrix(self.features, f"node {self.node_id} features")
        y = as_vector(self.targets, f"node {self.node_id} targets")
        if self.node_id < 0:
            raise ValueError("node_id must be non-negative")
        if X.shape[0] != y.size:
            raise DimensionMismatchError(
                f"node {self.node_id}: {X.shape[0]} feature rows vs "
                f"{y.size} targets"
            )
        if X.shape[0] < 1:
            raise ValueError(f"node {self.node_id} holds no samples")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __getitem__(self, i: int) -> SamplePoint:
        return SamplePoint(self.features[i], float(self.targets[i]))

    def samples(self) -> Iterator[SamplePoint]:
        for i in range(self.n):
            yield self[i]


@dataclass(frozen=True)
class FederatedDataset:
    """Validation shard plus K training shards with a common feature dim."""

    validation: NodeDataset
    nodes: tuple[NodeDataset, ...]

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if not nodes:
            raise ValueError("a federated dataset needs at least one training node")
        if self.validation.node_id != 0:
            raise ValueError("validation shard must carry node_id 0")
        d = self.validation.dim
        for pos, nd in enumerate(nodes, start=1):
            if nd.node_id != pos:
                raise ValueError(
                    f"training shards must be numbered 1..K in order; "
                    f"position {pos} has node_id {nd.node_id}"
                )
            if nd.dim != d:
                raise DimensionMismatchError(
                    f"node {nd.node_id} feature dim {nd.dim} != validation dim {d}"
                )
        object.__setattr__(self, "nodes", nodes)

    @property
    def k(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.validation.dim

    @property
    def n_per_node(self) -> tuple[int, ...]:
        return tuple(nd.n for nd in self.nodes)

    def node(self, node_id: int) -> NodeDataset:
        """Shard by id; 0 is validation."""
        if node_id == 0:
            return self.validation
        if 1 <= node_id <= self.k:
            return self.nodes[node_id - 1]
        raise KeyError(f"no node {node_id} (have 0..{self.k})")

    def all_shards(self) -> tuple[NodeDataset, ...]:
        return (self.validation,) + self.nodes


def write_shards_csv(path, shards) -> None:
    """Serialize shards to one CSV with columns
    node_id, feature_0..feature_{d-1}, target."""
    shards = tuple(shards)
    d = shards[0].dim
    header = ["node_id"] + [f"feature_{j}" for j in range(d)] + ["target"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for shard in shards:
            for i in range(shard.n):
                row = [shard.node_id]
                row += [f"{v:.17g}" for v in shard.features[i]]
                row.append(f"{shard.targets[i]:.17g}")
                writer.writerow(row)


def write_csv(path, fed: FederatedDataset) -> None:
    write_shards_csv(path, fed.all_shards())


def read_csv(path) -> FederatedDataset:
    """Inverse of write_csv."""
    by_node: dict[int, list[tuple[list[float], float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "node_id" or header[-1] != "target":
            raise ValueError(f"unrecognized CSV header: {header}")
        for row in reader:
            nid = int(row[0])
            feats = [float(v) for v in row[1:-1]]
            by_node.setdefault(nid, []).append((feats, float(row[-1])))
    if 0 not in by_node:
        raise ValueError("CSV holds no validation rows (node_id 0)")
    shards = {}
    for nid, rows in by_node.items():
        X = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        shards[nid] = NodeDataset(nid, X, y)
    k = max(by_node)
    nodes = tuple(shards[i] for i in range(1, k + 1))
    return FederatedDataset(validation=shards[0], nodes=nodes)
