"""Depth metrics, LiDAR-pattern sparsification and result reports."""

from .metrics import DepthMetrics, EvalProtocol, MetricAccumulator, compute_metrics, regionwise_rmse
from .sparsify import SparseDepth, sparsify
