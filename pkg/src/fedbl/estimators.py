"""scikit-learn style front ends over the solvers.

The estimators accept either a FederatedDataset (or TaskData) directly,
or plain (X, y) arrays plus a `nodes` integer column assigning each row
to a shard (0 marks validation rows).  After fit, theta_ holds the model
coefficients and predict/score follow the loss family: point predictions
and R^2 for the quadratic loss, class labels and accuracy for the
logistic one.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .data import FederatedDataset, NodeDataset, WeightVector, as_matrix, as_vector
from .datagen import TaskData
from .errors import ConfigError
from .losses import QuadraticRegressionLoss, RegularizedLogisticLoss
from .network import FederatedNetwork
from .outer import OuterConfig, solve_convex, solve_nonconvex
from .baselines import fedavg_train, local_train
from .schedules import gamma0
from .svrg import SvrgConfig

__all__ = ["BilevelFederatedEstimator", "FedAvgEstimator", "LocalEstimator"]

_LOSSES = {
    "quadratic": QuadraticRegressionLoss,
    "logistic": RegularizedLogisticLoss,
}


def _build_fed(X, y, nodes) -> FederatedDataset:
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    if nodes is None:
        raise ValueError(
            "array input needs a `nodes` column (0 = validation rows); "
            "alternatively pass a FederatedDataset")
    nodes = np.asarray(nodes)
    if nodes.shape != (X.shape[0],):
        raise ValueError(f"nodes must have shape ({X.shape[0]},), got {nodes.shape}")
    ids = np.unique(nodes)
    if 0 not in ids:
        raise ValueError("no validation rows (nodes == 0) present")
    shards = []
    for nid in ids:
        m = nodes == nid
        shards.append(NodeDataset(int(nid), X[m], y[m]))
    return FederatedDataset(validation=shards[0], nodes=tuple(shards[1:]))


class _FederatedEstimatorBase(BaseEstimator):
    """Shared plumbing: loss resolution, data coercion, prediction."""

    def _resolve_loss(self):
        try:
            cls = _LOSSES[self.loss]
        except KeyError:
            raise ConfigError(
                f"unknown loss {self.loss!r}; expected one of {sorted(_LOSSES)}")
        return cls(ridge=self.ridge)

    def _coerce(self, X, y, nodes) -> FederatedDataset:
        if isinstance(X, TaskData):
            return X.fed
        if isinstance(X, FederatedDataset):
            return X
        return _build_fed(X, y, nodes)

    def _inner_cfg(self, model, fed) -> SvrgConfig:
        consts = model.constants(fed)
        step = self.gamma
        if step is None:
            step = gamma0(consts.l1, consts.mu, self.period, self.refresh_prob)
        iters = self.inner_iters
        if iters is None:
            iters = max(1, self.epochs * round(float(np.mean(fed.n_per_node))))
        return SvrgConfig(step=step, period=self.period,
                          refresh_prob=self.refresh_prob, iters=int(iters))

    def predict(self, X):
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fit saw {self.n_features_in_}")
        return self.model_.predict(self.theta_, X)

    def decision_function(self, X):
        return as_matrix(X, "X") @ self.theta_

    def score(self, X, y):
        """Accuracy for the logistic loss, R^2 for the quadratic one."""
        y = as_vector(y, "y")
        pred = self.predict(X)
        if self.model_.is_classifier:
            return float(np.mean(pred == y))
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - np.mean(y)) ** 2))
        return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


class BilevelFederatedEstimator(_FederatedEstimatorBase):
    """Learn node weights and model jointly.

    solver "nonconvex" runs prox-linear descent on the weights,
    "convex" the accelerated variant.  After fit: weights_, theta_,
    trace_, ledger_.
    """

    def __init__(self, loss="quadratic", ridge=1e-3, cap=1.0 / 3.0,
                 solver="nonconvex", rounds=20, period=10,
                 refresh_prob=0.02, gamma=None, epochs=5, inner_iters=None,
                 eta=None, schedule="fixed", warm_start=False, seed=0):
        self.loss = loss
        self.ridge = ridge
        self.cap = cap
        self.solver = solver
        self.rounds = rounds
        self.period = period
        self.refresh_prob = refresh_prob
        self.gamma = gamma
        self.epochs = epochs
        self.inner_iters = inner_iters
        self.eta = eta
        self.schedule = schedule
        self.warm_start = warm_start
        self.seed = seed

    def fit(self, X, y=None, nodes=None):
        fed = self._coerce(X, y, nodes)
        model = self._resolve_loss()
        inner = self._inner_cfg(model, fed)
        cfg = OuterConfig(rounds=self.rounds, cap=self.cap, period=self.period,
                          refresh_prob=self.refresh_prob, schedule=self.schedule,
                          gamma=inner.step, inner_iters=inner.iters,
                          eta=self.eta, warm_start=self.warm_start)
        net = FederatedNetwork(self.seed, fed.k)
        w0 = WeightVector(np.clip(np.full(fed.k, 1.0 / fed.k), 0, self.cap), self.cap)
        solve = {"convex": solve_convex, "nonconvex": solve_nonconvex}.get(self.solver)
        if solve is None:
            raise ConfigError(f"unknown solver {self.solver!r}")
        w, trace = solve(model, fed, w0, cfg, net)
        final = fedavg_train(model, fed, inner, net, w=w)
        self.model_ = model
        self.weights_ = np.asarray(w)
        self.theta_ = final.x_avg
        self.trace_ = trace
        self.ledger_ = net.ledger
        self.n_features_in_ = fed.dim
        return self


class FedAvgEstimator(_FederatedEstimatorBase):
    """Federated averaging at frozen (default uniform) weights."""

    def __init__(self, loss="quadratic", ridge=1e-3, weights=None,
                 period=10, refresh_prob=0.02, gamma=None, epochs=5,
                 inner_iters=None, seed=0):
        self.loss = loss
        self.ridge = ridge
        self.weights = weights
        self.period = period
        self.refresh_prob = refresh_prob
        self.gamma = gamma
        self.epochs = epochs
        self.inner_iters = inner_iters
        self.seed = seed

    def fit(self, X, y=None, nodes=None):
        fed = self._coerce(X, y, nodes)
        model = self._resolve_loss()
        inner = self._inner_cfg(model, fed)
        net = FederatedNetwork(self.seed, fed.k)
        w = None if self.weights is None else WeightVector(
            np.asarray(self.weights, dtype=float), 1.0)
        out = fedavg_train(model, fed, inner, net, w=w)
        self.model_ = model
        self.theta_ = out.x_avg
        self.ledger_ = net.ledger
        self.n_features_in_ = fed.dim
        return self


class LocalEstimator(_FederatedEstimatorBase):
    """Center-only training on the validation shard.  With array input
    and no nodes column, all rows count as that shard."""

    def __init__(self, loss="quadratic", ridge=1e-3, period=10,
                 refresh_prob=0.02, gamma=None, epochs=5, inner_iters=None,
                 seed=0):
        self.loss = loss
        self.ridge = ridge
        self.period = period
        self.refresh_prob = refresh_prob
        self.gamma = gamma
        self.epochs = epochs
        self.inner_iters = inner_iters
        self.seed = seed

    def fit(self, X, y=None, nodes=None):
        if not isinstance(X, (TaskData, FederatedDataset)) and nodes is None and y is not None:
            shard = NodeDataset(0, as_matrix(X, "X"), as_vector(y, "y"))
        else:
            shard = self._coerce(X, y, nodes).validation
        from .baselines import single_node_fed
        fed1 = single_node_fed(shard)
        model = self._resolve_loss()
        inner = self._inner_cfg(model, fed1)
        out = local_train(model, shard, inner, seed=self.seed)
        self.model_ = model
        self.theta_ = out.x_avg
        self.n_features_in_ = shard.dim
        return self
