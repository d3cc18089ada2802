"""Frozen-weight training modes used for comparisons."""
import numpy as np
import pytest

from fedbl import (FederatedDataset, FederatedNetwork, NodeDataset,
                   QuadraticRegressionLoss, SvrgConfig, WeightVector)
from fedbl.baselines import fedavg_train, local_train, single_node_fed

from conftest import exact_moment_features


def _cfg(iters=2500, gamma=0.018):
    return SvrgConfig(gamma, 1, 0.5, iters)


def test_single_node_fed_view():
    shard = NodeDataset(3, np.ones((2, 1)), np.array([1.0, 3.0]))
    fed = single_node_fed(shard)
    assert fed.k == 1
    assert fed.validation.node_id == 0
    assert fed.nodes[0].node_id == 1
    np.testing.assert_array_equal(fed.validation.targets, shard.targets)
    np.testing.assert_array_equal(fed.nodes[0].features, shard.features)


def test_local_train_single_sample_closed_form():
    # one sample (x=1, y=2), no ridge: the minimizer is theta = 2
    shard = NodeDataset(0, np.array([[1.0]]), np.array([2.0]))
    out = local_train(QuadraticRegressionLoss(ridge=0.0), shard,
                      SvrgConfig(0.03, 1, 0.5, 1500))
    np.testing.assert_allclose(out.x_avg, [2.0], atol=1e-6)


def test_local_train_equals_full_weight_on_validation(rng):
    # training locally is the w = e_1 federated problem whose only node
    # replicates the validation shard
    X = exact_moment_features(2, 2)
    y = X @ np.array([0.4, -0.7]) + 0.1 * rng.standard_normal(len(X))
    shard = NodeDataset(0, X, y)
    model = QuadraticRegressionLoss(ridge=0.01)
    out = local_train(model, shard, _cfg(), seed=5)

    H = X.T @ X / len(y) + 0.01 * np.eye(2)
    b = X.T @ y / len(y)
    np.testing.assert_allclose(out.x_avg, np.linalg.solve(H, b), atol=1e-6)


def test_fedavg_identical_nodes_matches_local(rng):
    X = exact_moment_features(2, 2)
    y = X @ np.array([0.4, -0.7]) + 0.1 * rng.standard_normal(len(X))
    model = QuadraticRegressionLoss(ridge=0.01)
    fed = FederatedDataset(
        validation=NodeDataset(0, X, y),
        nodes=tuple(NodeDataset(k + 1, X, y) for k in range(3)))
    avg = fedavg_train(model, fed, _cfg(), FederatedNetwork(1, 3))
    loc = local_train(model, fed.validation, _cfg(), seed=1)
    np.testing.assert_allclose(avg.x_avg, loc.x_avg, atol=1e-6)


def test_fedavg_point_mass_reduces_to_one_node(rng):
    X = exact_moment_features(2, 2)
    thetas = rng.standard_normal((3, 2))
    fed = FederatedDataset(
        validation=NodeDataset(0, X, X @ thetas[0]),
        nodes=tuple(NodeDataset(k + 1, X, X @ thetas[k]) for k in range(3)))
    model = QuadraticRegressionLoss(ridge=0.01)
    w = WeightVector(np.array([0.0, 1.0, 0.0]), 1.0)
    out = fedavg_train(model, fed, _cfg(4000), FederatedNetwork(2, 3), w=w)
    solo = local_train(model, fed.nodes[1], _cfg(4000), seed=2)
    np.testing.assert_allclose(out.x_avg, solo.x_avg, atol=1e-8)


def test_fedavg_uniform_equal_sizes_matches_pooled_solve(rng):
    # uniform weights over equal shards minimize the pooled objective
    X = exact_moment_features(2, 2)
    n = len(X)
    thetas = rng.standard_normal((2, 2))
    ys = [X @ thetas[k] + 0.05 * rng.standard_normal(n) for k in range(2)]
    fed = FederatedDataset(
        validation=NodeDataset(0, X, ys[0]),
        nodes=(NodeDataset(1, X, ys[0]), NodeDataset(2, X, ys[1])))
    model = QuadraticRegressionLoss(ridge=0.02)
    out = fedavg_train(model, fed, _cfg(3000), FederatedNetwork(3, 2))

    Xp = np.vstack([X, X])
    yp = np.concatenate(ys)
    H = Xp.T @ Xp / (2 * n) + 0.02 * np.eye(2)
    b = Xp.T @ yp / (2 * n)
    np.testing.assert_allclose(out.x_avg, np.linalg.solve(H, b), atol=1e-5)


def test_baselines_accept_warm_starts(rng):
    X = exact_moment_features(2, 2)
    y = X @ np.array([1.0, 1.0])
    shard = NodeDataset(0, X, y)
    model = QuadraticRegressionLoss(ridge=0.0)
    cold = local_train(model, shard, _cfg(60), seed=4)
    warm = local_train(model, shard, _cfg(60), seed=4, x0=np.array([1.0, 1.0]))
    # starting at the optimum keeps every iterate there
    np.testing.assert_allclose(warm.x_avg, [1.0, 1.0], atol=1e-12)
    assert np.linalg.norm(cold.x_avg - np.array([1.0, 1.0])) > 1e-3


def test_local_train_ledger_is_isolated():
    shard = NodeDataset(0, np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    net = FederatedNetwork(0, 1)
    local_train(QuadraticRegressionLoss(ridge=0.1), shard,
                SvrgConfig(0.02, 1, 0.5, 10), net=net)
    assert net.ledger.comm_rounds == 11
