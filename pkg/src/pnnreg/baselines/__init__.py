"""Classical estimators used as comparisons."""

from .common import CSV_HEADER, FitResult
from .smoothing_spline import smoothing_spline
from .trend_filter import ConvergenceWarning, TrendFilterSpec, trend_filter
from .twolayer import TwoLayerConfig, TwoLayerTruncPowNet, fit_two_layer_truncpow, two_layer_path
from .wavelet import universal_threshold, wavelet_denoise

__all__ = ["CSV_HEADER", "FitResult", "smoothing_spline", "ConvergenceWarning", "TrendFilterSpec",
           "trend_filter", "TwoLayerConfig", "TwoLayerTruncPowNet", "fit_two_layer_truncpow",
           "two_layer_path", "universal_threshold", "wavelet_denoise"]
