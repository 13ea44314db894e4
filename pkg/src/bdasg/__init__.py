"""Bilevel distributed aggregated stochastic gradient (BDASG) simulator."""

__version__ = "0.1.0"

from .baselines import (  # noqa: E402
    CentralizedSolution,
    min_norm_least_squares,
    proximal_gradient_lasso,
    regularization_path_check,
    ridge_solution,
    soft_threshold,
)
from .engine import (  # noqa: E402
    AgentNetworkState,
    DivergenceError,
    StepSizeInterval,
    TrajectoryRecord,
    bdasg_init,
    bdasg_step,
    gradient_reduction_envelope,
    run_trajectory,
    step_size_interval,
    theta,
)
from .problems import (  # noqa: E402
    BilevelProblem,
    NoiseModel,
    aggregated_grad,
    grad_f_i,
    grad_g_i,
    make_regression_problem,
    make_sensor_problem,
    sample_stochastic_grad,
)
from .topology import GraphSpec, MixingGraph, build_graph, consensus_projection, second_singular_value  # noqa: E402
