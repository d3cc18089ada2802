"""Synthetic federated tasks with known population structure.

Three generators: a two-node Gaussian mean-estimation toy, linear
regression with a per-node optimum table, and 2-D Gaussian-mixture
classification where a majority group's shards are corrupted (skewed
class prior, flipped labels, rotated features, or a combination).
Nodes 1..n_similar always share the validation distribution p0.

All draws come from Philox streams keyed by (seed, namespace, node),
so regeneration is reproducible and order-independent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import FederatedDataset, NodeDataset
from .losses import RegularizedLogisticLoss
from .metrics import GroundTruth

__all__ = [
    "TaskSpec",
    "TaskData",
    "gen_mean_estimation",
    "gen_linear_regression",
    "gen_hetero_classification",
    "generate",
]

_NS_DATA = 2      # shard draws; GroundTruth uses namespace 3, theta* fit uses 4
_NS_THETA = 4
_TEST_TAG = 10_000

KINDS = ("mean_estimation", "linear_regression", "hetero_classification")

# +90 degrees, the feature corruption of the rotated settings
ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class TaskSpec:
    """Declarative description of one synthetic task.

    n_similar counts the leading nodes whose distribution equals p0.
    Fields beyond the shared block only apply to their kind: shift to
    mean estimation; dim, noise_std, theta_scale to linear regression;
    class_sep, priors and the corruption flags to classification.
    """

    kind: str
    n_nodes: int
    n_train: int
    n_valid: int
    n_test: int = 0
    seed: int = 0
    n_similar: int = 0
    shift: float = 1.0
    dim: int = 2
    noise_std: float = 0.1
    theta_scale: float = 1.0
    class_sep: float = 2.0
    prior_similar: float = 0.5
    prior_other: float = 0.5
    flip_labels: bool = False
    rotate: bool = False
    ridge: float = 1e-3
    mc_samples: int = 100_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if self.n_nodes < 1 or self.n_train < 1 or self.n_valid < 1 or self.n_test < 0:
            raise ValueError("node and sample counts must be positive")
        if not (0 <= self.n_similar <= self.n_nodes):
            raise ValueError(f"n_similar must lie in 0..{self.n_nodes}")
        if self.kind == "mean_estimation" and self.n_nodes != 2:
            raise ValueError("mean estimation is a two-node task")
        for p in (self.prior_similar, self.prior_other):
            if not (0.0 < p < 1.0):
                raise ValueError(f"class priors must lie in (0, 1), got {p}")


def _stream(seed: int, ns: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(ns, tag))))


@dataclass(frozen=True)
class TaskData:
    """Training-time dataset plus the optional held-out test shard (kept
    outside the node list so solvers never touch it)."""

    fed: FederatedDataset
    test: Optional[NodeDataset]


def generate(spec: TaskSpec) -> tuple[TaskData, GroundTruth]:
    """Dispatch on spec.kind."""
    return {
        "mean_estimation": gen_mean_estimation,
        "linear_regression": gen_linear_regression,
        "hetero_classification": gen_hetero_classification,
    }[spec.kind](spec)


def _test_shard(spec: TaskSpec, draw) -> Optional[NodeDataset]:
    if spec.n_test == 0:
        return None
    X, y = draw(_stream(spec.seed, _NS_DATA, _TEST_TAG), spec.n_test)
    return NodeDataset(0, X, y)


def gen_mean_estimation(spec: TaskSpec) -> tuple[TaskData, GroundTruth]:
    """Two nodes observe N(+a, 1) and N(-a, 1); the center observes
    N(0, 1).  Features are the constant 1, so the quadratic loss reduces
    to mean estimation and the population optimum is theta = 0 at
    weights (1/2, 1/2)."""
    if spec.kind != "mean_estimation":
        raise ValueError(f"spec kind is {spec.kind!r}")
    a = spec.shift

    def draw(rng, n, mean=0.0):
        return np.ones((n, 1)), mean + rng.standard_normal(n)

    Xv, yv = draw(_stream(spec.seed, _NS_DATA, 0), spec.n_valid)
    X1, y1 = draw(_stream(spec.seed, _NS_DATA, 1), spec.n_train, mean=a)
    X2, y2 = draw(_stream(spec.seed, _NS_DATA, 2), spec.n_train, mean=-a)
    shards = [NodeDataset(0, Xv, yv), NodeDataset(1, X1, y1), NodeDataset(2, X2, y2)]
    fed = FederatedDataset(validation=shards[0], nodes=tuple(shards[1:]))
    test = _test_shard(spec, lambda rng, n: draw(rng, n))

    truth = GroundTruth(
        n_nodes=2,
        similar_nodes=(),
        theta_star=np.zeros(1),
        theta_table=np.array([[a], [-a]]),
        second_moment=np.ones((1, 1)),
        noise_vars=np.ones(3),
        seed=spec.seed,
        w_star=np.array([0.5, 0.5]),
        f_star=0.5,
    )
    return _attach_test(fed, test), truth


def gen_linear_regression(spec: TaskSpec) -> tuple[TaskData, GroundTruth]:
    """y = x^T theta_k + noise with x ~ N(0, I).  Nodes 1..n_similar use
    the validation coefficient vector; the rest get distinct random
    coefficients at distance ~ theta_scale."""
    if spec.kind != "linear_regression":
        raise ValueError(f"spec kind is {spec.kind!r}")
    d, K = spec.dim, spec.n_nodes
    rng_t = _stream(spec.seed, _NS_THETA, 0)
    theta0 = rng_t.standard_normal(d)
    theta0 /= max(np.linalg.norm(theta0), 1e-12)
    table = np.tile(theta0, (K, 1))
    for k in range(spec.n_similar, K):
        delta = rng_t.standard_normal(d)
        table[k] = theta0 + spec.theta_scale * delta / max(np.linalg.norm(delta), 1e-12)

    def draw(rng, n, theta):
        X = rng.standard_normal((n, d))
        y = X @ theta + spec.noise_std * rng.standard_normal(n)
        return X, y

    shards = [NodeDataset(0, *draw(_stream(spec.seed, _NS_DATA, 0),
                                   spec.n_valid, theta0))]
    for k in range(1, K + 1):
        shards.append(NodeDataset(k, *draw(_stream(spec.seed, _NS_DATA, k),
                                           spec.n_train, table[k - 1])))
    fed = FederatedDataset(validation=shards[0], nodes=tuple(shards[1:]))
    test = _test_shard(spec, lambda rng, n: draw(rng, n, theta0))

    noise = np.full(K + 1, spec.noise_std ** 2)
    truth = GroundTruth(
        n_nodes=K,
        similar_nodes=tuple(range(1, spec.n_similar + 1)),
        theta_star=theta0,
        theta_table=table,
        second_moment=np.eye(d),
        noise_vars=noise,
        seed=spec.seed,
        f_star=0.5 * spec.noise_std ** 2 if spec.n_similar > 0 else None,
    )
    return _attach_test(fed, test), truth


def gen_hetero_classification(spec: TaskSpec) -> tuple[TaskData, GroundTruth]:
    """Binary labels, 2-D features x ~ N(y * m, I) with m on the first
    axis.  Nodes past n_similar form the corrupted group: their class
    prior is prior_other and, per the flags, their labels are flipped
    and/or their features rotated by 90 degrees.  Validation and test
    follow the similar group exactly."""
    if spec.kind != "hetero_classification":
        raise ValueError(f"spec kind is {spec.kind!r}")
    K = spec.n_nodes
    m = np.array([0.5 * spec.class_sep, 0.0])

    def draw(rng, n, corrupted: bool):
        prior = spec.prior_other if corrupted else spec.prior_similar
        y = np.where(rng.random(n) < prior, 1.0, -1.0)
        X = y[:, None] * m + rng.standard_normal((n, 2))
        if corrupted and spec.flip_labels:
            y = -y
        if corrupted and spec.rotate:
            X = X @ ROTATION.T
        return X, y

    shards = [NodeDataset(0, *draw(_stream(spec.seed, _NS_DATA, 0),
                                   spec.n_valid, False))]
    for k in range(1, K + 1):
        corrupted = k > spec.n_similar
        shards.append(NodeDataset(k, *draw(_stream(spec.seed, _NS_DATA, k),
                                           spec.n_train, corrupted)))
    fed = FederatedDataset(validation=shards[0], nodes=tuple(shards[1:]))
    test = _test_shard(spec, lambda rng, n: draw(rng, n, False))

    loss = RegularizedLogisticLoss(ridge=spec.ridge)

    def sampler(node_id, n, rng):
        return draw(rng, n, node_id > spec.n_similar if node_id > 0 else False)

    theta_star = _fit_population_logistic(spec, loss)
    truth = GroundTruth(
        n_nodes=K,
        similar_nodes=tuple(range(1, spec.n_similar + 1)),
        theta_star=theta_star,
        sampler=sampler,
        loss_model=loss,
        mc_samples=spec.mc_samples,
        seed=spec.seed,
    )
    return _attach_test(fed, test), truth


def _fit_population_logistic(spec: TaskSpec, loss: RegularizedLogisticLoss) -> np.ndarray:
    """Newton fit of the regularized logistic loss on a large frozen draw
    from p0; stands in for the population minimizer."""
    rng = _stream(spec.seed, _NS_THETA, 0)
    m = np.array([0.5 * spec.class_sep, 0.0])
    y = np.where(rng.random(spec.mc_samples) < spec.prior_similar, 1.0, -1.0)
    X = y[:, None] * m + rng.standard_normal((spec.mc_samples, 2))
    theta = np.zeros(2)
    for _ in range(50):
        g = loss.mean_grad(theta, X, y)
        if float(np.linalg.norm(g)) < 1e-12:
            break
        H = loss.mean_hessian(theta, X, y)
        theta = theta - np.linalg.solve(H, g)
    return theta


def _attach_test(fed: FederatedDataset, test: Optional[NodeDataset]) -> TaskData:
    return TaskData(fed=fed, test=test)
