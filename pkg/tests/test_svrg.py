import numpy as np
import pytest

from fedbl import (DivergenceError, FederatedDataset, FederatedNetwork,
                   FiniteSumInstance, NodeDataset, QuadraticRegressionLoss,
                   SvrgConfig, WeightVector, inner_instance, local_svrg_solve)
from fedbl.svrg import svrg_component_estimate

from conftest import make_fed


def quad_instance(A_list, c_list, mu=None, smooth=None):
    """K nodes; node k holds components f_{k,i}(x) = a_i/2 ||x - c_i||^2."""
    dim = len(c_list[0][0])
    n_per_node = tuple(len(a) for a in A_list)

    def grad_component(k, i, x):
        return A_list[k][i] * (x - np.asarray(c_list[k][i]))

    def grad_full_node(k, x):
        g = np.zeros(dim)
        for i in range(n_per_node[k]):
            g += grad_component(k, i, x)
        return g / n_per_node[k]

    all_a = [a for node in A_list for a in node]
    return FiniteSumInstance(
        dim=dim, n_per_node=n_per_node,
        mu=min(all_a) if mu is None else mu,
        smooth=max(all_a) if smooth is None else smooth,
        grad_component=grad_component, grad_full_node=grad_full_node)


def quad_optimum(A_list, c_list, w):
    """argmin sum_k w_k mean_i a_i/2 ||x-c_i||^2 in closed form."""
    num = 0.0
    den = 0.0
    for k, wk in enumerate(np.asarray(w)):
        n = len(A_list[k])
        for a, c in zip(A_list[k], c_list[k]):
            num = num + wk * a * np.asarray(c) / n
            den = den + wk * a / n
    return num / den


def test_estimator_unbiased_exhaustively(rng):
    inst = quad_instance(
        [[1.0, 2.0, 0.5], [1.5, 3.0]],
        [[rng.standard_normal(2) for _ in range(3)],
         [rng.standard_normal(2) for _ in range(2)]])
    for k in range(2):
        x = rng.standard_normal(2)
        y = rng.standard_normal(2)
        gy = inst.grad_full_node(k, y)
        mean = np.mean([svrg_component_estimate(inst, k, i, x, y, gy)
                        for i in range(inst.n_per_node[k])], axis=0)
        np.testing.assert_allclose(mean, inst.grad_full_node(k, x),
                                   rtol=1e-12, atol=1e-12)


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_identical_samples_equal_weighted_gd():
    # every node holds copies of one sample: the control variate is exact
    # and the run must match plain weighted gradient descent step for step
    A = [[2.0, 2.0], [0.5, 0.5]]
    C = [[np.array([1.0, -1.0])] * 2, [np.array([-3.0, 2.0])] * 2]
    inst = quad_instance(A, C)
    w = WeightVector(np.array([0.3, 0.7]), 1.0)
    gamma, T = 0.05, 40
    net = FederatedNetwork(0, 2)
    out = local_svrg_solve(inst, w, np.zeros(2),
                           SvrgConfig(gamma, 1, 0.1, T), net,
                           record_trajectory=True)

    x = np.zeros(2)
    path = [x]
    for _ in range(T):
        g = sum(wk * inst.grad_full_node(k, x)
                for k, wk in enumerate(np.asarray(w)))
        x = x - gamma * g
        path.append(x)
    np.testing.assert_allclose(out.trajectory, np.stack(path),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_scalar_hand_recursion():
    # single node, single component f(x) = x^2/2, x0=1, gamma=0.1, T=3
    inst = quad_instance([[1.0]], [[np.array([0.0])]])
    net = FederatedNetwork(0, 1)
    q = 1.0
    out = local_svrg_solve(inst, WeightVector(np.ones(1), 1.0),
                           np.array([1.0]), SvrgConfig(0.1, 1, q, 3), net,
                           record_trajectory=True)
    np.testing.assert_allclose(out.trajectory[:, 0],
                               [1.0, 0.9, 0.81, 0.729], rtol=1e-15)
    np.testing.assert_allclose(out.x_final, [0.729], rtol=1e-15)

    rho = min(0.1 * 1.0, q / 4.0)
    u = (1.0 - rho) ** -(np.arange(4) + 1.0)
    want = np.sum(u * np.array([1.0, 0.9, 0.81, 0.729])) / np.sum(u)
    np.testing.assert_allclose(out.x_avg, [want], rtol=1e-13)


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_converges_to_closed_form_optimum(rng):
    A = [[1.0, 2.0], [0.5, 1.5], [3.0, 1.0]]
    C = [[rng.standard_normal(3) for _ in range(2)] for _ in range(3)]
    inst = quad_instance(A, C)
    w = WeightVector(np.array([0.5, 0.2, 0.3]), 1.0)
    net = FederatedNetwork(11, 3)
    # tau=1: aggregation every step, so no local-drift bias floor
    cfg = SvrgConfig(step=0.05, period=1, refresh_prob=0.2, iters=4000)
    out = local_svrg_solve(inst, w, np.zeros(3), cfg, net)
    want = quad_optimum(A, C, w)
    assert np.linalg.norm(out.x_avg - want) <= 1e-6
    # weighted stationarity at the returned point
    g = sum(wk * inst.grad_full_node(k, out.x_avg)
            for k, wk in enumerate(np.asarray(w)))
    assert np.linalg.norm(g) <= 1e-5


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_loss_backed_instance_reaches_dense_solution(rng):
    model = QuadraticRegressionLoss(0.1)
    fed = make_fed(rng, k=2, n=12, d=3)
    inst = inner_instance(model, fed)
    w = WeightVector(np.array([0.4, 0.6]), 1.0)
    net = FederatedNetwork(3, 2)
    out = local_svrg_solve(inst, w, np.zeros(3),
                           SvrgConfig(0.02, 1, 0.1, 6000), net)
    # dense normal equations for the weighted ridge objective
    H = 0.1 * np.eye(3)
    b = np.zeros(3)
    for wk, nd in zip([0.4, 0.6], fed.nodes):
        H += wk * nd.features.T @ nd.features / nd.n
        b += wk * nd.features.T @ nd.targets / nd.n
    want = np.linalg.solve(H, b)
    assert np.linalg.norm(out.x_avg - want) <= 1e-6


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_ledger_five_rounds_for_t20_tau5():
    inst = quad_instance([[1.0], [1.0]],
                         [[np.array([0.0])], [np.array([1.0])]])
    net = FederatedNetwork(0, 2)
    local_svrg_solve(inst, WeightVector(np.array([0.5, 0.5]), 1.0),
                     np.zeros(1), SvrgConfig(0.05, 5, 0.1, 20), net)
    # 4 aggregations plus the output gather
    assert net.ledger.comm_rounds == 5


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_names_iteration():
    inst = quad_instance([[1.0]], [[np.array([0.0])]])
    net = FederatedNetwork(0, 1)
    with pytest.raises(DivergenceError, match=r"iteration \d+") as err:
        local_svrg_solve(inst, WeightVector(np.ones(1), 1.0),
                         np.array([1.0]), SvrgConfig(1e6, 1, 0.1, 500), net)
    assert err.value.iteration >= 0


def test_unsafe_step_warns(rng):
    inst = quad_instance([[1.0, 0.5]], [[np.zeros(1), np.ones(1)]])
    net = FederatedNetwork(0, 1)
    with pytest.warns(RuntimeWarning, match="step"):
        local_svrg_solve(inst, WeightVector(np.ones(1), 1.0), np.zeros(1),
                         SvrgConfig(0.9, 1, 0.5, 10), net)


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_trajectory_is_virtual_weighted_average():
    # tau=3: between barriers nodes drift apart; the recorded trajectory
    # must still be the weighted average at every t
    A = [[1.0, 1.0], [2.0, 2.0]]
    C = [[np.array([1.0]), np.array([1.0])],
         [np.array([-1.0]), np.array([-1.0])]]
    inst = quad_instance(A, C)
    w = np.array([0.25, 0.75])
    net = FederatedNetwork(5, 2)
    out = local_svrg_solve(inst, WeightVector(w, 1.0), np.zeros(1),
                           SvrgConfig(0.05, 3, 0.2, 9), net,
                           record_trajectory=True)
    assert out.trajectory.shape == (10, 1)

    # identical components per node: reproduce the per-node recursions
    x = np.zeros((2, 1))
    virtual = [w @ x]
    for t in range(9):
        for k in range(2):
            x[k] = x[k] - 0.05 * inst.grad_full_node(k, x[k])
        if (t + 1) % 3 == 0:
            x[:] = w @ x
        virtual.append(w @ x)
    np.testing.assert_allclose(out.trajectory, np.stack(virtual),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_vectorized_and_generic_paths_agree(rng):
    model = QuadraticRegressionLoss(0.05)
    fed = make_fed(rng, k=3, n=6, d=2)
    inst = inner_instance(model, fed)
    # strip the batch hook to force the per-node generic path
    generic = FiniteSumInstance(
        dim=inst.dim, n_per_node=inst.n_per_node, mu=inst.mu,
        smooth=inst.smooth, grad_component=inst.grad_component,
        grad_full_node=inst.grad_full_node)
    assert generic.batch_grad_components is None
    w = WeightVector(np.array([0.2, 0.5, 0.3]), 1.0)
    cfg = SvrgConfig(0.03, 4, 0.15, 60)
    res_v = local_svrg_solve(inst, w, np.zeros(2),
                             cfg, FederatedNetwork(9, 3),
                             record_trajectory=True)
    res_g = local_svrg_solve(generic, w, np.zeros(2),
                             cfg, FederatedNetwork(9, 3),
                             record_trajectory=True)
    np.testing.assert_allclose(res_v.trajectory, res_g.trajectory,
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(res_v.x_avg, res_g.x_avg, rtol=1e-12,
                               atol=1e-12)


@pytest.mark.filterwarnings("ignore:step .* exceeds:RuntimeWarning")
def test_threaded_run_matches_sequential(rng):
    model = QuadraticRegressionLoss(0.05)
    fed = make_fed(rng, k=4, n=5, d=2)
    inst = inner_instance(model, fed)
    generic = FiniteSumInstance(
        dim=inst.dim, n_per_node=inst.n_per_node, mu=inst.mu,
        smooth=inst.smooth, grad_component=inst.grad_component,
        grad_full_node=inst.grad_full_node)
    w = WeightVector.uniform(4)
    cfg = SvrgConfig(0.03, 5, 0.1, 50)
    seq = local_svrg_solve(generic, w, np.zeros(2), cfg,
                           FederatedNetwork(2, 4, threads=1))
    par = local_svrg_solve(generic, w, np.zeros(2), cfg,
                           FederatedNetwork(2, 4, threads=4))
    np.testing.assert_array_equal(seq.x_avg, par.x_avg)
    np.testing.assert_array_equal(seq.x_final, par.x_final)


def test_config_validation():
    with pytest.raises(ValueError):
        SvrgConfig(step=0.0, period=1, refresh_prob=0.1, iters=10)
    with pytest.raises(ValueError):
        SvrgConfig(step=0.1, period=0, refresh_prob=0.1, iters=10)
    with pytest.raises(ValueError):
        SvrgConfig(step=0.1, period=1, refresh_prob=1.5, iters=10)
    with pytest.raises(ValueError):
        SvrgConfig(step=0.1, period=1, refresh_prob=0.1, iters=0)
