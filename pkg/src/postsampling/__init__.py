"""Spatial cleaning and post-sampling reweighting of crowdsourced observations."""

__version__ = "0.1.0"

from .designs import (
    DesignAllocation,
    InclusionProbabilities,
    Lpm2Sampler,
    design_allocation_from_sample,
    lpm2_sample,
    pps_allocation,
    srs_sample,
)
from .domain import (
    DistanceMatrix,
    GeoPoint,
    NeighborRule,
    Observation,
    WeightMatrix,
    build_distance_matrix,
    build_weight_matrix,
    spatial_lag,
)
from .poststrat import (
    EstimateReport,
    PostSamplingWeights,
    ht_estimate,
    post_sampling_ratios,
    weighted_estimate,
)
from .preprocess import (
    OutlierReport,
    detect_global_outliers,
    detect_spatial_outliers,
    impute_missing,
    replace_spatial_outliers,
)

__all__ = [
    "DesignAllocation", "InclusionProbabilities", "Lpm2Sampler", "design_allocation_from_sample",
    "lpm2_sample", "pps_allocation", "srs_sample",
    "DistanceMatrix", "GeoPoint", "NeighborRule", "Observation", "WeightMatrix",
    "build_distance_matrix", "build_weight_matrix", "spatial_lag",
    "EstimateReport", "PostSamplingWeights", "ht_estimate", "post_sampling_ratios", "weighted_estimate",
    "OutlierReport", "detect_global_outliers", "detect_spatial_outliers", "impute_missing",
    "replace_spatial_outliers",
]
