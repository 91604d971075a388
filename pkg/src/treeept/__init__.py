"""Entropy partial transport between unequal-mass measures on tree metrics."""

from .closed_form import (
    BoundStatus,
    alpha_lipschitz_gap,
    bound_certificate,
    d_alpha,
    regularized_ept,
)
from .exact import (
    DualFunction,
    calibrate_lambda,
    dual_value,
    exact_ept,
    extend_problem,
    partial_transport_value,
    plan_mass,
    restrict_plan,
    solve_exact,
)
from .kernel import GramMatrix, Which, gram_matrix, psd_check, quantile_bandwidth, sliced_distance
from .params import EptParams, ParameterError, WeightFn
from .sampling import SamplingConfig, Scheme, TreeEnsemble, measure_on_sampled_tree, sample_ensemble, sample_tree
from .tree import (
    RootedTree,
    TreeError,
    TreeMeasure,
    build_tree,
    measures_equal_by_subtrees,
    subtree_cumulative_masses,
    tree_distance,
)

__version__ = "0.1.0"

__all__ = [
    "BoundStatus",
    "alpha_lipschitz_gap",
    "bound_certificate",
    "d_alpha",
    "regularized_ept",
    "DualFunction",
    "calibrate_lambda",
    "dual_value",
    "exact_ept",
    "extend_problem",
    "partial_transport_value",
    "plan_mass",
    "restrict_plan",
    "solve_exact",
    "GramMatrix",
    "Which",
    "gram_matrix",
    "psd_check",
    "quantile_bandwidth",
    "sliced_distance",
    "EptParams",
    "ParameterError",
    "WeightFn",
    "SamplingConfig",
    "Scheme",
    "TreeEnsemble",
    "measure_on_sampled_tree",
    "sample_ensemble",
    "sample_tree",
    "RootedTree",
    "TreeError",
    "TreeMeasure",
    "build_tree",
    "measures_equal_by_subtrees",
    "subtree_cumulative_masses",
    "tree_distance",
]
