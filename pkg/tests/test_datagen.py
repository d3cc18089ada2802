"""Synthetic task generators: distributional sanity of the shards, exact
agreement between the declared ground truth and large-sample behavior,
and reproducibility of the keyed streams."""
import math

import numpy as np
import pytest

from fedbl import QuadraticRegressionLoss
from fedbl.datagen import (TaskSpec, gen_hetero_classification,
                           gen_linear_regression, gen_mean_estimation,
                           generate)
from fedbl.hypergrad import solve_inner_dense
from fedbl.losses import empirical_loss


def _phi(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _axis_accuracy(shard, direction):
    pred = np.sign(shard.features @ direction)
    return float(np.mean(pred == shard.targets))


# ---------------------------------------------------------------- mean toy

def test_mean_estimation_shapes_and_truth():
    spec = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=100,
                    n_valid=50, n_test=30, seed=4, shift=1.0)
    data, truth = generate(spec)
    assert data.fed.k == 2 and data.fed.dim == 1
    assert data.fed.validation.n == 50
    assert data.test is not None and data.test.n == 30
    np.testing.assert_array_equal(data.fed.nodes[0].features, 1.0)
    np.testing.assert_array_equal(truth.theta_table, [[1.0], [-1.0]])
    np.testing.assert_array_equal(truth.w_star, [0.5, 0.5])
    assert truth.f_star == 0.5
    assert truth.similar_nodes == ()


def test_mean_estimation_sample_means_track_the_shift():
    spec = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=10_000,
                    n_valid=10_000, seed=0, shift=1.0)
    data, _ = generate(spec)
    assert 0.96 <= float(np.mean(data.fed.nodes[0].targets)) <= 1.04
    assert -1.04 <= float(np.mean(data.fed.nodes[1].targets)) <= -0.96
    assert abs(float(np.mean(data.fed.validation.targets))) <= 0.04


def test_mean_estimation_population_values():
    spec = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=10,
                    n_valid=10, seed=0, shift=1.0)
    _, truth = generate(spec)
    # excess validation risk of theta=1 over theta=0 is 0.5 * 1^2
    gap = truth.population_loss(np.ones(1)) - truth.population_loss(np.zeros(1))
    assert gap == pytest.approx(0.5)
    assert truth.outer_value([0.5, 0.5]) == pytest.approx(truth.f_star)
    assert truth.outer_value([1.0, 0.0]) == pytest.approx(1.0)


def test_mean_estimation_zero_shift_flattens_the_objective():
    spec = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=10,
                    n_valid=10, shift=0.0)
    _, truth = generate(spec)
    np.testing.assert_array_equal(truth.theta_table, np.zeros((2, 1)))
    for w in ([1.0, 0.0], [0.3, 0.7], [0.5, 0.5]):
        assert truth.outer_value(w) == pytest.approx(0.5)


# ---------------------------------------------------------------- regression

def test_linear_regression_similar_nodes_share_the_optimum():
    spec = TaskSpec(kind="linear_regression", n_nodes=5, n_similar=2,
                    n_train=50, n_valid=50, dim=3, seed=1)
    _, truth = generate(spec)
    assert truth.similar_nodes == (1, 2)
    np.testing.assert_array_equal(truth.theta_table[0], truth.theta_star)
    np.testing.assert_array_equal(truth.theta_table[1], truth.theta_star)
    for k in (2, 3, 4):
        assert np.linalg.norm(truth.theta_table[k] - truth.theta_star) > 0.1
    assert np.linalg.norm(truth.theta_star) == pytest.approx(1.0)


def test_linear_regression_all_similar_is_flat():
    spec = TaskSpec(kind="linear_regression", n_nodes=3, n_similar=3,
                    n_train=20, n_valid=20, noise_std=0.2, seed=2)
    _, truth = generate(spec)
    vals = [truth.outer_value(w) for w in
            ([1.0, 0.0, 0.0], [0.2, 0.3, 0.5], [1 / 3.0] * 3)]
    assert vals == pytest.approx([0.5 * 0.04] * 3)


def test_linear_regression_empirical_outer_tracks_population(rng):
    spec = TaskSpec(kind="linear_regression", n_nodes=4, n_similar=2,
                    n_train=10_000, n_valid=10_000, dim=2, noise_std=0.5,
                    theta_scale=1.0, seed=3)
    data, truth = generate(spec)
    model = QuadraticRegressionLoss(ridge=1e-3)
    for _ in range(10):
        w = rng.dirichlet(np.ones(4))
        theta = solve_inner_dense(model, data.fed, w)
        f_hat = empirical_loss(model, data.fed.validation, theta)
        assert abs(f_hat - truth.outer_value(w)) < 0.05


def test_linear_regression_similar_shards_agree_at_the_optimum():
    spec = TaskSpec(kind="linear_regression", n_nodes=3, n_similar=1,
                    n_train=10_000, n_valid=10_000, dim=2, noise_std=0.3,
                    seed=5)
    data, truth = generate(spec)
    model = QuadraticRegressionLoss(ridge=0.0)
    lv = empirical_loss(model, data.fed.validation, truth.theta_star)
    l1 = empirical_loss(model, data.fed.nodes[0], truth.theta_star)
    assert abs(lv - l1) < 5.0 / math.sqrt(10_000)
    assert lv == pytest.approx(0.5 * 0.09, abs=0.01)


# ------------------------------------------------------------ classification

def test_classification_clean_nodes_match_the_axis_rule():
    spec = TaskSpec(kind="hetero_classification", n_nodes=3, n_similar=3,
                    n_train=5000, n_valid=5000, class_sep=2.0, seed=6)
    data, _ = generate(spec)
    want = _phi(1.0)
    e1 = np.array([1.0, 0.0])
    for shard in (data.fed.validation,) + data.fed.nodes:
        assert abs(_axis_accuracy(shard, e1) - want) < 0.02


def test_classification_flipped_nodes_invert_the_rule():
    spec = TaskSpec(kind="hetero_classification", n_nodes=4, n_similar=2,
                    n_train=5000, n_valid=5000, class_sep=2.0,
                    flip_labels=True, seed=7)
    data, truth = generate(spec)
    e1 = np.array([1.0, 0.0])
    assert truth.similar_nodes == (1, 2)
    for shard in data.fed.nodes[:2]:
        assert _axis_accuracy(shard, e1) > 0.8
    for shard in data.fed.nodes[2:]:
        acc = _axis_accuracy(shard, e1)
        assert acc < 0.5
        assert abs(acc - (1.0 - _phi(1.0))) < 0.02


def test_classification_rotation_moves_the_signal_axis():
    spec = TaskSpec(kind="hetero_classification", n_nodes=2, n_similar=1,
                    n_train=5000, n_valid=100, class_sep=2.0, rotate=True,
                    seed=8)
    data, _ = generate(spec)
    rotated = data.fed.nodes[1]
    e1 = np.array([1.0, 0.0])
    # on the first axis the rotated shard is pure noise
    assert abs(_axis_accuracy(rotated, e1) - 0.5) < 0.03
    # undoing the 90-degree rotation restores the clean geometry
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    restored = rotated.features @ R
    acc = float(np.mean(np.sign(restored @ e1) == rotated.targets))
    assert abs(acc - _phi(1.0)) < 0.02


def test_classification_prior_skew_shifts_label_frequency():
    spec = TaskSpec(kind="hetero_classification", n_nodes=2, n_similar=1,
                    n_train=5000, n_valid=100, prior_other=0.9, seed=9)
    data, _ = generate(spec)
    assert abs(float(np.mean(data.fed.nodes[0].targets))) < 0.05
    assert abs(float(np.mean(data.fed.nodes[1].targets)) - 0.8) < 0.04


def test_classification_truth_is_sampled_with_a_minimizer():
    spec = TaskSpec(kind="hetero_classification", n_nodes=2, n_similar=1,
                    n_train=50, n_valid=50, seed=10, mc_samples=20_000)
    _, truth = generate(spec)
    assert not truth.is_closed_form
    # the fitted stand-in minimizer points along the class-mean axis
    assert truth.theta_star[0] > 0.5
    assert abs(truth.theta_star[1]) < 0.1
    g = truth.population_grad(truth.theta_star, 0)
    assert float(np.linalg.norm(g)) < 0.05


# ------------------------------------------------------------- reproducibility

def test_regeneration_is_bit_identical():
    spec = TaskSpec(kind="linear_regression", n_nodes=3, n_similar=1,
                    n_train=40, n_valid=30, n_test=20, seed=11)
    a, _ = generate(spec)
    b, _ = generate(spec)
    np.testing.assert_array_equal(a.fed.validation.features,
                                  b.fed.validation.features)
    for sa, sb in zip(a.fed.nodes, b.fed.nodes):
        np.testing.assert_array_equal(sa.features, sb.features)
        np.testing.assert_array_equal(sa.targets, sb.targets)
    np.testing.assert_array_equal(a.test.features, b.test.features)

    c, _ = generate(TaskSpec(kind="linear_regression", n_nodes=3, n_similar=1,
                             n_train=40, n_valid=30, n_test=20, seed=12))
    assert not np.array_equal(a.fed.validation.targets, c.fed.validation.targets)


def test_test_shard_is_optional_and_distinct():
    spec = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=30, n_valid=30,
                    seed=13)
    data, _ = generate(spec)
    assert data.test is None
    with_test = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=30,
                         n_valid=30, n_test=30, seed=13)
    data2, _ = generate(with_test)
    assert not np.array_equal(data2.test.targets, data2.fed.validation.targets)


# ----------------------------------------------------------------- validation

def test_spec_rejects_bad_fields():
    with pytest.raises(ValueError, match="kind"):
        TaskSpec(kind="mystery", n_nodes=2, n_train=10, n_valid=10)
    with pytest.raises(ValueError, match="two-node"):
        TaskSpec(kind="mean_estimation", n_nodes=3, n_train=10, n_valid=10)
    with pytest.raises(ValueError, match="n_similar"):
        TaskSpec(kind="linear_regression", n_nodes=2, n_similar=3,
                 n_train=10, n_valid=10)
    with pytest.raises(ValueError, match="positive"):
        TaskSpec(kind="linear_regression", n_nodes=2, n_train=0, n_valid=10)
    with pytest.raises(ValueError, match="prior"):
        TaskSpec(kind="hetero_classification", n_nodes=2, n_train=10,
                 n_valid=10, prior_other=1.0)


def test_generators_check_the_kind_tag():
    spec = TaskSpec(kind="linear_regression", n_nodes=2, n_train=10, n_valid=10)
    with pytest.raises(ValueError, match="kind"):
        gen_mean_estimation(spec)
    with pytest.raises(ValueError, match="kind"):
        gen_hetero_classification(spec)
    spec2 = TaskSpec(kind="mean_estimation", n_nodes=2, n_train=10, n_valid=10)
    with pytest.raises(ValueError, match="kind"):
        gen_linear_regression(spec2)
