"""Simulated star topology: per-node random streams, communication
accounting, and the weighted aggregation primitive.

Randomness is counter-based: node k's stream for solver call c is keyed
by (global_seed, k, c) through numpy's Philox generator, so draws do not
depend on scheduling or on how many workers execute the node loop.  The
worker cap comes from the FEDBL_THREADS environment variable.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError

__all__ = ["RoundLedger", "FederatedNetwork", "thread_cap"]

# spawn-key namespaces; keep disjoint from datagen's (see datagen module)
_NS_NODE = 0
_NS_CENTER = 1


def thread_cap() -> int:
    """Worker cap from FEDBL_THREADS (default 1)."""
    raw = os.environ.get("FEDBL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"FEDBL_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"FEDBL_THREADS must be >= 1, got {n}")
    return n


@dataclass
class RoundLedger:
    """Running communication and work totals.

    comm_rounds counts synchronization rounds, scalars_sent counts real
    numbers moved over the network, wall_ops counts per-sample gradient
    (or Hessian-vector) evaluations anywhere in the system.
    """

    comm_rounds: int = 0
    scalars_sent: int = 0
    wall_ops: int = 0

    def add_round(self, scalars: int) -> None:
        self.comm_rounds += 1
        self.scalars_sent += int(scalars)

    def add_ops(self, n: int) -> None:
        self.wall_ops += int(n)

    def snapshot(self) -> dict:
        return {"comm_rounds": self.comm_rounds,
                "scalars_sent": self.scalars_sent,
                "wall_ops": self.wall_ops}


@dataclass
class FederatedNetwork:
    """Handle shared by the solvers: seeded randomness, the ledger, and
    the node-step executor."""

    seed: int
    n_nodes: int
    threads: int | None = None
    ledger: RoundLedger = field(default_factory=RoundLedger)
    _calls: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("need at least one node")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.threads is None:
            self.threads = thread_cap()

    def new_call(self) -> int:
        """Monotone solver-call counter; each call gets fresh node streams."""
        c = self._calls
        self._calls += 1
        return c

    def node_stream(self, node_id: int, call_id: int) -> np.random.Generator:
        """Stream for node node_id during solver call call_id.  The key
        (seed, node_id, call_id) fully determines every draw."""
        if not (1 <= node_id <= self.n_nodes):
            raise ValueError(f"node_id must be in 1..{self.n_nodes}, got {node_id}")
        seq = np.random.SeedSequence(self.seed,
                                     spawn_key=(_NS_NODE, node_id, call_id))
        return np.random.Generator(np.random.Philox(seq))

    def center_stream(self, tag: int) -> np.random.Generator:
        """Stream for center-side decisions (iterate selection etc.)."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(_NS_CENTER, int(tag)))
        return np.random.Generator(np.random.Philox(seq))

    # --- communication primitives -------------------------------------

    def weighted_aggregate(self, vectors: np.ndarray, w) -> np.ndarray:
        """One synchronization round: center receives a d-vector from each
        node and returns sum_k w_k * vectors[k].  w may be a WeightVector
        or a plain array."""
        V = np.asarray(vectors, dtype=float)
        wv = np.asarray(w, dtype=float)
        if V.ndim != 2 or V.shape[0] != wv.size or V.shape[0] != self.n_nodes:
            raise DimensionMismatchError(
                f"expected ({self.n_nodes}, d) stacked vectors with matching "
                f"weights, got vectors {V.shape} and {wv.size} weights")
        self.ledger.add_round(V.size)
        return wv @ V

    def record_broadcast(self, dim: int) -> None:
        """Center pushes one d-vector to the nodes."""
        self.ledger.add_round(dim)

    def record_gather(self, dim: int) -> None:
        """Every node pushes one d-vector to the center."""
        self.ledger.add_round(self.n_nodes * dim)

    # --- execution ----------------------------------------------------

    def map_nodes(self, fn: Callable, items: Sequence) -> list:
        """Apply fn to items (one per node), possibly on worker threads.
        Output order always matches input order."""
        if self.threads <= 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))
