"""Reference training modes: center-only training on the validation
shard, and federated averaging with frozen weights."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .data import FederatedDataset, NodeDataset, WeightVector
from .hypergrad import inner_instance
from .losses import LossModel
from .network import FederatedNetwork
from .svrg import SvrgConfig, SvrgResult, local_svrg_solve

__all__ = ["local_train", "fedavg_train", "single_node_fed"]


def single_node_fed(shard: NodeDataset) -> FederatedDataset:
    """View one shard as a 1-node federated task (it plays both the
    training node and the validation set)."""
    zero = shard if shard.node_id == 0 else NodeDataset(0, shard.features, shard.targets)
    one = NodeDataset(1, shard.features, shard.targets)
    return FederatedDataset(validation=zero, nodes=(one,))


def local_train(model: LossModel, validation: NodeDataset, cfg: SvrgConfig,
                net: Optional[FederatedNetwork] = None, seed: int = 0,
                x0=None, record_trajectory: bool = False) -> SvrgResult:
    """Train on the validation shard alone (the center's own model);
    no real communication happens, the pattern degenerates to K=1."""
    fed1 = single_node_fed(validation)
    if net is None:
        net = FederatedNetwork(seed, 1)
    inst = inner_instance(model, fed1)
    w = WeightVector(np.ones(1), 1.0)
    start = np.zeros(fed1.dim) if x0 is None else x0
    return local_svrg_solve(inst, w, start, cfg, net,
                            record_trajectory=record_trajectory)


def fedavg_train(model: LossModel, fed: FederatedDataset, cfg: SvrgConfig,
                 net: FederatedNetwork, w: Optional[WeightVector] = None,
                 x0=None, record_trajectory: bool = False) -> SvrgResult:
    """Federated training at frozen weights; uniform weights reproduce
    the plain all-nodes-equal baseline."""
    if w is None:
        w = WeightVector.uniform(fed.k)
    inst = inner_instance(model, fed)
    start = np.zeros(fed.dim) if x0 is None else x0
    return local_svrg_solve(inst, w, start, cfg, net,
                            record_trajectory=record_trajectory)
