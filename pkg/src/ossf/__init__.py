"""Operator-self-similar Gaussian random fields.

Closed-form Hausdorff dimensions of range and graph, spectral synthesis of
the fields from their stochastic-integral representations, and empirical
cross-checks via box counting and variogram regression.
"""

from .errors import (
    DimensionError,
    DomainError,
    NumericError,
    OssfError,
    ValidationError,
)
from .matcalc import EigenStructure, eigen_real_parts, matrix_power, solve_linear
from .anisotropy import (
    PolarPoint,
    SpectralDecomposition,
    averaged_norm,
    decompose,
    homogeneous_phi,
    polar,
    polar_many,
    subspace_exponent_fit,
    tau_quasi_metric,
)
from .exponents import (
    DimensionReport,
    ScalingPair,
    TildeView,
    dim_case_form,
    dim_graph,
    dim_range,
    rescaling_invariance_check,
    validate_and_normalize,
    verify_integral_I,
    verify_integral_J,
)
from .synthesis import (
    FieldSample,
    FrequencySpec,
    GridSpec,
    HarmonizableSynthesizer,
    MovingAverageSynthesizer,
    TruncationSpec,
    gaussian_stream,
    harmonizable_sample,
    moving_average_sample,
)
from .estimation import (
    BoxCountCurve,
    HolderReport,
    box_count,
    covariance_scaling_check,
    graph_dimension_estimate,
    holder_exponent,
    range_dimension_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "OssfError", "DimensionError", "DomainError", "ValidationError", "NumericError",
    "EigenStructure", "matrix_power", "eigen_real_parts", "solve_linear",
    "SpectralDecomposition", "PolarPoint", "decompose", "averaged_norm",
    "polar", "polar_many", "homogeneous_phi", "tau_quasi_metric",
    "subspace_exponent_fit",
    "ScalingPair", "TildeView", "DimensionReport", "validate_and_normalize",
    "dim_range", "dim_graph", "dim_case_form", "rescaling_invariance_check",
    "verify_integral_I", "verify_integral_J",
    "GridSpec", "FrequencySpec", "TruncationSpec", "FieldSample",
    "HarmonizableSynthesizer", "MovingAverageSynthesizer",
    "gaussian_stream", "harmonizable_sample", "moving_average_sample",
    "BoxCountCurve", "HolderReport", "box_count", "graph_dimension_estimate",
    "range_dimension_estimate", "holder_exponent", "covariance_scaling_check",
]
