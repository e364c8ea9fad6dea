"""Comparison methods: color clustering, multiscale Fisher vectors, bilinear pooling."""

from .clustering import (
    FEATURE_DIM,
    cluster_segment,
    default_thresholds,
    lbp_codes,
    mean_disease_color,
    region_features,
)
from .deep import DEFAULT_SCALES, DEFAULT_TAP, bilinear_pool, extract_deep_features, tap_maps
from .fisher import GmmModel, fisher_blocks, fisher_encode, gmm_fit, power_l2_normalize
from .runner import METHODS, BaselineConfig, run_baseline
from .svm import LinearClassifier, train_linear_classifier

__all__ = [
    "FEATURE_DIM", "cluster_segment", "default_thresholds", "lbp_codes", "mean_disease_color",
    "region_features", "DEFAULT_SCALES", "DEFAULT_TAP", "bilinear_pool", "extract_deep_features",
    "tap_maps", "GmmModel", "fisher_blocks", "fisher_encode", "gmm_fit", "power_l2_normalize",
    "METHODS", "BaselineConfig", "run_baseline", "LinearClassifier", "train_linear_classifier",
]
