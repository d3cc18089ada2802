"""Federated training with learned node weights.

The center holds a small validation set and treats the per-node weights
of the training objective as outer variables of a bilevel problem: inner
federated SVRG solves the weighted objective, implicit differentiation
supplies the outer gradient, and projected (optionally accelerated)
steps move the weights on a capped simplex.
"""

from .data import FederatedDataset, NodeDataset, SamplePoint, WeightVector
from .errors import (ConfigError, DimensionMismatchError, DivergenceError,
                     EmptyFeasibleSetError, SingularSystemError)
from .losses import (LossConstants, LossModel, QuadraticRegressionLoss,
                     RegularizedLogisticLoss, empirical_grad, empirical_hvp,
                     empirical_loss, weighted_grad, weighted_objective)
from .simplex import ProjectionResult, project, prox_linear_step
from .network import FederatedNetwork, RoundLedger
from .schedules import gamma0, inner_schedule
from .svrg import FiniteSumInstance, SvrgConfig, SvrgResult, local_svrg_solve
from .hypergrad import (HypergradResult, approx_hypergrad,
                        dense_hypergrad_oracle, inner_instance, lipschitz_LF,
                        qp_instance, solve_inner_dense)
from .outer import (OuterConfig, OuterTrace, solve_convex, solve_nonconvex,
                    stationarity)
from .baselines import fedavg_train, local_train
from .metrics import (GapEstimate, GroundTruth, dist_to_Wstar,
                      generalization_gap, metric_G, metric_G_population,
                      verify_error_bound)
from .datagen import (TaskData, TaskSpec, gen_hetero_classification,
                      gen_linear_regression, gen_mean_estimation, generate)
from .estimators import (BilevelFederatedEstimator, FedAvgEstimator,
                         LocalEstimator)
from .experiment import (ExperimentResult, check_hypergrad, run_experiment,
                         run_id_of)

__version__ = "0.1.0"

__all__ = [
    "FederatedDataset", "NodeDataset", "SamplePoint", "WeightVector",
    "ConfigError", "DimensionMismatchError", "DivergenceError",
    "EmptyFeasibleSetError", "SingularSystemError",
    "LossConstants", "LossModel", "QuadraticRegressionLoss",
    "RegularizedLogisticLoss", "empirical_grad", "empirical_hvp",
    "empirical_loss", "weighted_grad", "weighted_objective",
    "ProjectionResult", "project", "prox_linear_step",
    "FederatedNetwork", "RoundLedger",
    "gamma0", "inner_schedule",
    "FiniteSumInstance", "SvrgConfig", "SvrgResult", "local_svrg_solve",
    "HypergradResult", "approx_hypergrad", "dense_hypergrad_oracle",
    "inner_instance", "lipschitz_LF", "qp_instance", "solve_inner_dense",
    "OuterConfig", "OuterTrace", "solve_convex", "solve_nonconvex",
    "stationarity",
    "fedavg_train", "local_train",
    "GapEstimate", "GroundTruth", "dist_to_Wstar", "generalization_gap",
    "metric_G", "metric_G_population", "verify_error_bound",
    "TaskData", "TaskSpec", "gen_hetero_classification",
    "gen_linear_regression", "gen_mean_estimation", "generate",
    "BilevelFederatedEstimator", "FedAvgEstimator", "LocalEstimator",
    "ExperimentResult", "check_hypergrad", "run_experiment", "run_id_of",
]
