"""Attribution for nonnegatively homogeneous (bias-free) neural networks.

A small reverse-mode autodiff engine, piecewise-linear networks, gradient
based attribution methods, an axiom test suite, attribution-prior training
and masking benchmarks.
"""

from .attribution import (
    Attribution,
    NotHomogeneousError,
    attribute,
    closed_form_ig_degree_k,
    expected_gradients,
    grad_attr,
    ig_convergence,
    input_x_grad,
    integrated_gradients,
    mean_abs_rel_diff,
    rrr_attr,
    x_gradient,
)
from .axioms import contrast_equivariance_probe, run_suite
from .data import DatasetHandle, generate_synthetic, ingest_csv
from .estimators import AttributionTransformer, XDNNClassifier
from .metrics import MaskFn, MetricResult, benchmark_table
from .network import Network, NetworkSpec, classify_homogeneity, init_network, mlp_spec, strip_bias
from .priors import PriorConfig, TrainConfig, gini_prior, roc_auc, subsample_experiment, train

__version__ = "0.1.0"

__all__ = [
    "Attribution",
    "AttributionTransformer",
    "DatasetHandle",
    "MaskFn",
    "MetricResult",
    "Network",
    "NetworkSpec",
    "NotHomogeneousError",
    "PriorConfig",
    "TrainConfig",
    "XDNNClassifier",
    "attribute",
    "benchmark_table",
    "classify_homogeneity",
    "closed_form_ig_degree_k",
    "contrast_equivariance_probe",
    "expected_gradients",
    "generate_synthetic",
    "gini_prior",
    "grad_attr",
    "ig_convergence",
    "ingest_csv",
    "init_network",
    "input_x_grad",
    "integrated_gradients",
    "mean_abs_rel_diff",
    "mlp_spec",
    "roc_auc",
    "rrr_attr",
    "run_suite",
    "strip_bias",
    "subsample_experiment",
    "train",
    "x_gradient",
]
