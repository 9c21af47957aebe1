"""Shapley value explanations for dependent mixed tabular data.

The pieces compose bottom-up: tabular schemas and coalitions, the exact
kernel-weight solver, four conditional samplers (independence,
empirical, Gaussian, conditional-inference-tree), an exact oracle for
threshold-Gaussian generative models, and a simulation lab measuring
estimator error against that oracle.
"""

from ._version import __version__
from .ctree import CtreeConfig, CtreeModel, fit_ctree, independence_test
from .gaussian import (
    MvnSpec,
    Rectangle,
    conditional_mvn,
    equicorrelation,
    mvn_rectangle_prob,
    sample_mvn,
)
from .linmodel import LinearModelSpec, load_model, save_model
from .oracle import (
    CategoricalOracle,
    MixedOracle,
    ThresholdGaussianSpec,
    weighted_mae,
    write_truth_csv,
)
from .samplers import FittedSampler, SamplerSpec, fit
from .shapley import (
    ContributionVector,
    ShapleyResult,
    group_shapley,
    kernel_shap_solve,
    shapley_direct,
    shapley_kernel_weight,
)
from .simlab import (
    ExperimentSpec,
    ExperimentResult,
    MethodSpec,
    explain_test_set,
    run_experiment,
    run_grid,
)
from .tabular import (
    Coalition,
    FeatureSchema,
    FeatureSpec,
    MixedTable,
    enumerate_coalitions,
    load_schema,
    one_hot_encode,
    read_csv_table,
    write_csv_table,
)

__all__ = [
    "__version__",
    "CtreeConfig",
    "CtreeModel",
    "fit_ctree",
    "independence_test",
    "MvnSpec",
    "Rectangle",
    "conditional_mvn",
    "equicorrelation",
    "mvn_rectangle_prob",
    "sample_mvn",
    "LinearModelSpec",
    "load_model",
    "save_model",
    "CategoricalOracle",
    "MixedOracle",
    "ThresholdGaussianSpec",
    "weighted_mae",
    "write_truth_csv",
    "FittedSampler",
    "SamplerSpec",
    "fit",
    "ContributionVector",
    "ShapleyResult",
    "group_shapley",
    "kernel_shap_solve",
    "shapley_direct",
    "shapley_kernel_weight",
    "ExperimentSpec",
    "ExperimentResult",
    "MethodSpec",
    "explain_test_set",
    "run_experiment",
    "run_grid",
    "Coalition",
    "FeatureSchema",
    "FeatureSpec",
    "MixedTable",
    "enumerate_coalitions",
    "load_schema",
    "one_hot_encode",
    "read_csv_table",
    "write_csv_table",
]
