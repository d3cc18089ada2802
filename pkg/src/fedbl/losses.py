"""Per-sample loss families and empirical (finite-sum) evaluators.

Every family exposes the loss, gradient, and Hessian-vector product of a
single sample, vectorized batch versions used by the solvers, and the
smoothness / curvature constants the step-size rules need.  Both built-in
families have sample Hessians of the form a(theta; z) * x x^T + ridge * I,
which the curvature_coeffs hook exposes for the quadratic subproblem.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import FederatedDataset, NodeDataset, SamplePoint, WeightVector, as_vector
from .errors import DimensionMismatchError

__all__ = [
    "LossConstants",
    "LossModel",
    "QuadraticRegressionLoss",
    "RegularizedLogisticLoss",
    "empirical_loss",
    "empirical_grad",
    "empirical_hvp",
    "weighted_objective",
    "weighted_grad",
]

_DENSE_EIG_DIM = 200


@dataclass(frozen=True)
class LossConstants:
    """Constants of one task instance.

    l0 bounds the node gradient norms and is estimated from iterate
    trajectories (None until observed); l1 is the smoothness constant,
    l2 the Hessian Lipschitz constant, mu the strong-convexity constant
    of the weighted training objective.
    """

    l1: float
    l2: float
    mu: float
    l0: Optional[float] = None

    def with_l0(self, l0: float) -> "LossConstants":
        return replace(self, l0=float(l0))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # tanh form stays finite for large |t|
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _check_theta(theta, dim: int) -> np.ndarray:
    th = as_vector(theta, "theta")
    if th.size != dim:
        raise DimensionMismatchError(f"theta has {th.size} entries, data dim is {dim}")
    return th


class LossModel(ABC):
    """Sample-level loss with ridge term ridge/2 * ||theta||^2 included in
    every component, so node objectives are plain means of components."""

    is_classifier = False

    def __init__(self, ridge: float = 1e-3):
        if ridge < 0:
            raise ValueError(f"ridge must be non-negative, got {ridge}")
        self.ridge = float(ridge)

    # single-sample interface
    @abstractmethod
    def sample_loss(self, theta: np.ndarray, z: SamplePoint) -> float: ...

    @abstractmethod
    def sample_grad(self, theta: np.ndarray, z: SamplePoint) -> np.ndarray: ...

    @abstractmethod
    def sample_hvp(self, theta: np.ndarray, z: SamplePoint, v: np.ndarray) -> np.ndarray: ...

    # batch interface; defaults fall back to the sample-level methods
    def sample_losses(self, theta: np.ndarray, X: np.ndarray,
                      y: np.ndarray) -> np.ndarray:
        """Per-sample losses as a vector."""
        return np.array([self.sample_loss(theta, SamplePoint(X[i], float(y[i])))
                         for i in range(len(y))])

    def mean_loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.sample_losses(theta, X, y)))

    def mean_grad(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(np.asarray(theta, dtype=float))
        for i in range(len(y)):
            acc += self.sample_grad(theta, SamplePoint(X[i], float(y[i])))
        return acc / len(y)

    def mean_hvp(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                 v: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(np.asarray(v, dtype=float))
        for i in range(len(y)):
            acc += self.sample_hvp(theta, SamplePoint(X[i], float(y[i])), v)
        return acc / len(y)

    def mean_hessian(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = X.shape[1]
        H = np.empty((d, d))
        for j in range(d):
            H[:, j] = self.mean_hvp(theta, X, y, np.eye(d)[j])
        return 0.5 * (H + H.T)

    def batch_sample_grads(self, thetas: np.ndarray, X: np.ndarray,
                           y: np.ndarray) -> np.ndarray:
        """Row i: gradient of the sample (X[i], y[i]) at thetas[i]."""
        return np.stack([self.sample_grad(thetas[i], SamplePoint(X[i], float(y[i])))
                         for i in range(len(y))])

    def curvature_coeffs(self, theta: np.ndarray, X: np.ndarray,
                         y: np.ndarray) -> Optional[np.ndarray]:
        """a_i with sample Hessian a_i * x_i x_i^T + ridge * I, or None when
        the family has no such structure."""
        return None

    def validate_targets(self, y: np.ndarray) -> None:
        pass

    @abstractmethod
    def predict(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def constants(self, fed: FederatedDataset) -> LossConstants: ...


class QuadraticRegressionLoss(LossModel):
    """Ridge-regularized squared error 0.5*(x^T theta - y)^2 + ridge/2*||theta||^2."""

    def sample_loss(self, theta, z):
        th = _check_theta(theta, len(z.features))
        r = float(z.features @ th) - z.target
        return 0.5 * r * r + 0.5 * self.ridge * float(th @ th)

    def sample_grad(self, theta, z):
        th = _check_theta(theta, len(z.features))
        r = float(z.features @ th) - z.target
        return r * z.features + self.ridge * th

    def sample_hvp(self, theta, z, v):
        v = as_vector(v, "v")
        return float(z.features @ v) * z.features + self.ridge * v

    def sample_losses(self, theta, X, y):
        th = _check_theta(theta, X.shape[1])
        r = X @ th - y
        return 0.5 * r * r + 0.5 * self.ridge * float(th @ th)

    def mean_loss(self, theta, X, y):
        return float(np.mean(self.sample_losses(theta, X, y)))

    def mean_grad(self, theta, X, y):
        th = _check_theta(theta, X.shape[1])
        r = X @ th - y
        return (X.T @ r) / len(y) + self.ridge * th

    def mean_hvp(self, theta, X, y, v):
        v = as_vector(v, "v")
        return (X.T @ (X @ v)) / len(y) + self.ridge * v

    def mean_hessian(self, theta, X, y):
        return (X.T @ X) / len(y) + self.ridge * np.eye(X.shape[1])

    def batch_sample_grads(self, thetas, X, y):
        r = np.einsum("ij,ij->i", X, thetas) - y
        return r[:, None] * X + self.ridge * thetas

    def curvature_coeffs(self, theta, X, y):
        return np.ones(len(y))

    def predict(self, theta, X):
        return X @ as_vector(theta, "theta")

    def constants(self, fed):
        """l1 = max ||x||^2 + ridge over training samples, l2 = 0, and
        mu = ridge + min over nodes of the smallest empirical Hessian
        eigenvalue (dense eig only up to dim 200)."""
        sq = max(float(np.max(np.einsum("ij,ij->i", nd.features, nd.features)))
                 for nd in fed.nodes)
        l1 = sq + self.ridge
        if fed.dim <= _DENSE_EIG_DIM:
            lam_min = min(
                float(np.linalg.eigvalsh((nd.features.T @ nd.features) / nd.n)[0])
                for nd in fed.nodes)
            mu = self.ridge + max(lam_min, 0.0)
        else:
            mu = self.ridge
        return LossConstants(l1=l1, l2=0.0, mu=mu)


class RegularizedLogisticLoss(LossModel):
    """log(1 + exp(-y * x^T theta)) + ridge/2*||theta||^2 with labels in {-1, +1}."""

    is_classifier = True

    def __init__(self, ridge: float = 1e-3):
        # without the ridge the logistic objective is not strongly convex
        if ridge <= 0:
            raise ValueError(f"logistic loss needs ridge > 0, got {ridge}")
        super().__init__(ridge)

    def sample_loss(self, theta, z):
        th = _check_theta(theta, len(z.features))
        m = z.target * float(z.features @ th)
        return float(np.logaddexp(0.0, -m)) + 0.5 * self.ridge * float(th @ th)

    def sample_grad(self, theta, z):
        th = _check_theta(theta, len(z.features))
        m = z.target * float(z.features @ th)
        return (-z.target * _sigmoid(-m)) * z.features + self.ridge * th

    def sample_hvp(self, theta, z, v):
        v = as_vector(v, "v")
        th = as_vector(theta, "theta")
        m = z.target * float(z.features @ th)
        a = float(_sigmoid(m) * _sigmoid(-m))
        return a * float(z.features @ v) * z.features + self.ridge * v

    def sample_losses(self, theta, X, y):
        th = _check_theta(theta, X.shape[1])
        m = y * (X @ th)
        return np.logaddexp(0.0, -m) + 0.5 * self.ridge * float(th @ th)

    def mean_loss(self, theta, X, y):
        return float(np.mean(self.sample_losses(theta, X, y)))

    def mean_grad(self, theta, X, y):
        th = _check_theta(theta, X.shape[1])
        m = y * (X @ th)
        c = -y * _sigmoid(-m)
        return (X.T @ c) / len(y) + self.ridge * th

    def mean_hvp(self, theta, X, y, v):
        v = as_vector(v, "v")
        a = self.curvature_coeffs(theta, X, y)
        return (X.T @ (a * (X @ v))) / len(y) + self.ridge * v

    def mean_hessian(self, theta, X, y):
        a = self.curvature_coeffs(theta, X, y)
        return (X.T @ (a[:, None] * X)) / len(y) + self.ridge * np.eye(X.shape[1])

    def batch_sample_grads(self, thetas, X, y):
        m = y * np.einsum("ij,ij->i", X, thetas)
        c = -y * _sigmoid(-m)
        return c[:, None] * X + self.ridge * thetas

    def curvature_coeffs(self, theta, X, y):
        m = y * (X @ as_vector(theta, "theta"))
        return _sigmoid(m) * _sigmoid(-m)

    def validate_targets(self, y):
        if not np.all(np.isin(y, (-1.0, 1.0))):
            bad = y[~np.isin(y, (-1.0, 1.0))][:3]
            raise ValueError(f"logistic targets must be -1 or +1; saw {bad}")

    def predict(self, theta, X):
        s = X @ as_vector(theta, "theta")
        return np.where(s >= 0.0, 1.0, -1.0)

    def constants(self, fed):
        """l1 = max ||x||^2 / 4 + ridge, l2 = max ||x||^3 / (6*sqrt(3)),
        mu = ridge, all over training samples."""
        for nd in fed.nodes:
            self.validate_targets(nd.targets)
        sq = max(float(np.max(np.einsum("ij,ij->i", nd.features, nd.features)))
                 for nd in fed.nodes)
        l1 = 0.25 * sq + self.ridge
        l2 = sq ** 1.5 / (6.0 * np.sqrt(3.0))
        return LossConstants(l1=l1, l2=l2, mu=self.ridge)


def _check_shard(model: LossModel, shard: NodeDataset, theta) -> np.ndarray:
    th = _check_theta(theta, shard.dim)
    model.validate_targets(shard.targets)
    return th


def empirical_loss(model: LossModel, shard: NodeDataset, theta) -> float:
    """Mean loss of one shard at theta."""
    th = _check_shard(model, shard, theta)
    return model.mean_loss(th, shard.features, shard.targets)


def empirical_grad(model: LossModel, shard: NodeDataset, theta) -> np.ndarray:
    th = _check_shard(model, shard, theta)
    return model.mean_grad(th, shard.features, shard.targets)


def empirical_hvp(model: LossModel, shard: NodeDataset, theta, v) -> np.ndarray:
    th = _check_shard(model, shard, theta)
    return model.mean_hvp(th, shard.features, shard.targets, v)


def weighted_objective(model: LossModel, fed: FederatedDataset, w: WeightVector,
                       theta) -> float:
    """sum_k w_k * (node-k mean loss)(theta) over the training nodes."""
    wv = np.asarray(w)
    if wv.size != fed.k:
        raise DimensionMismatchError(f"{wv.size} weights for {fed.k} nodes")
    return float(sum(wk * empirical_loss(model, nd, theta)
                     for wk, nd in zip(wv, fed.nodes)))


def weighted_grad(model: LossModel, fed: FederatedDataset, w: WeightVector,
                  theta) -> np.ndarray:
    wv = np.asarray(w)
    if wv.size != fed.k:
        raise DimensionMismatchError(f"{wv.size} weights for {fed.k} nodes")
    g = np.zeros(fed.dim)
    for wk, nd in zip(wv, fed.nodes):
        g += wk * empirical_grad(model, nd, theta)
    return g
