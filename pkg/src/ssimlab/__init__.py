"""SSIM, weighted SSIM and their equivalence with the L2 distance, for
interpolated functions and images on rectangular grids."""

__version__ = "0.1.0"

from .bounds import (
    BoundCheck,
    BoundConstants,
    BoundPreconditionError,
    EquivalenceReport,
    check_lower_bound,
    check_upper_bound,
    compute_constants,
    lemma_identities,
    run_sweep,
)
from .grid import (
    Domain2D,
    GridSpec,
    NodeLayout,
    ScalarField2D,
    SincConvention,
    TestFunction,
    f1,
    f2,
    l1_distance,
    l2_distance,
    sample,
)
from .harness import ConvergenceRun, ExperimentConfig, fit_optimal_constant, fit_rate
from .imageio import load_image, save_image
from .interpolate import (
    DerivativeSource,
    Method,
    NodeSet,
    bicubic_fit,
    bilinear_fit,
    cubic_matern,
    kernel_fit,
    wendland21,
)
from .similarity import (
    Anchor,
    BoundaryPolicy,
    StabilityConstants,
    WeightWindow,
    dissimilarity,
    ssim_global,
    wssim,
)

__all__ = [
    "__version__",
    "ConvergenceRun",
    "ExperimentConfig",
    "fit_optimal_constant",
    "fit_rate",
    "load_image",
    "save_image",
    "BoundCheck",
    "BoundConstants",
    "BoundPreconditionError",
    "EquivalenceReport",
    "check_lower_bound",
    "check_upper_bound",
    "compute_constants",
    "lemma_identities",
    "run_sweep",
    "Domain2D",
    "GridSpec",
    "NodeLayout",
    "ScalarField2D",
    "SincConvention",
    "TestFunction",
    "f1",
    "f2",
    "l1_distance",
    "l2_distance",
    "sample",
    "DerivativeSource",
    "Method",
    "NodeSet",
    "bicubic_fit",
    "bilinear_fit",
    "cubic_matern",
    "kernel_fit",
    "wendland21",
    "Anchor",
    "BoundaryPolicy",
    "StabilityConstants",
    "WeightWindow",
    "dissimilarity",
    "ssim_global",
    "wssim",
]
