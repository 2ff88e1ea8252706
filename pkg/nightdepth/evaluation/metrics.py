"""
Depth metric suite with capping and median scaling.

All arithmetic runs in float64 numpy. Frame-level metrics are averaged over
frames; region RMSE pools squared errors over every pixel of the region.
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from .sparsify import SparseDepth
from ..utils.validation import ParameterValidator, ValidationError

logger = logging.getLogger(__name__)

GT_MODES = ("dense", "sparse")
METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def mean(cls, items: Sequence['DepthMetrics']) -> 'DepthMetrics':
        if not items:
            raise ValidationError("cannot average an empty metric list", field="metrics")
        return cls(**{f.name: float(np.mean([getattr(m, f.name) for m in items])) for f in fields(cls)})


@dataclass(frozen=True)
class EvalProtocol:
    """Valid GT lies in (min_depth, max_depth]."""
    max_depth: float = 60.0
    min_depth: float = 0.1
    median_scaling: bool = True
    gt_mode: str = "dense"

    def __post_init__(self):
        if not (0 <= self.min_depth < self.max_depth):
            raise ValidationError(
                f"evaluation needs 0 <= min_depth < max_depth, got {self.min_depth}, {self.max_depth}",
                field="min_depth,max_depth",
                value=[self.min_depth, self.max_depth],
            )
        ParameterValidator.validate_choice(self.gt_mode, GT_MODES, "gt_mode")


def as_numpy(values: ArrayLike) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().double().numpy()
    values = np.asarray(values, dtype=np.float64)
    while values.ndim > 2 and values.shape[0] == 1:
        values = values[0]
    return values


def _valid_points(pred: ArrayLike, gt: Union[ArrayLike, SparseDepth],
                  protocol: EvalProtocol):
    """(pred values, gt values) at the capped valid set."""
    pred = as_numpy(pred)
    if isinstance(gt, SparseDepth):
        if pred.shape != gt.shape:
            raise ValidationError(
                f"prediction {pred.shape} does not match sparse GT image {gt.shape}",
                field="pred",
                value=[list(pred.shape), list(gt.shape)],
            )
        g = gt.depths.astype(np.float64)
        p = pred[gt.rows, gt.cols]
    else:
        gt = as_numpy(gt)
        if pred.shape != gt.shape:
            raise ValidationError(
                f"prediction {pred.shape} does not match GT {gt.shape}",
                field="pred",
                value=[list(pred.shape), list(gt.shape)],
            )
        g, p = gt.ravel(), pred.ravel()
    keep = np.isfinite(g) & (g > protocol.min_depth) & (g <= protocol.max_depth)
    return p[keep], g[keep]


def valid_count(gt: Union[ArrayLike, SparseDepth], protocol: EvalProtocol) -> int:
    g = gt.depths if isinstance(gt, SparseDepth) else as_numpy(gt).ravel()
    return int(np.count_nonzero(np.isfinite(g) & (g > protocol.min_depth) & (g <= protocol.max_depth)))


def median_scale(p: np.ndarray, g: np.ndarray) -> float:
    return float(np.median(g) / np.median(p))


def compute_errors(g: np.ndarray, p: np.ndarray) -> DepthMetrics:
    """Metric suite on already matched, valid point sets."""
    thresh = np.maximum(g / p, p / g)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(thresh < 1.25)),
        a2=float(np.mean(thresh < 1.25 ** 2)),
        a3=float(np.mean(thresh < 1.25 ** 3)),
    )


def _prepare(pred: ArrayLike, gt: Union[ArrayLike, SparseDepth], protocol: EvalProtocol):
    p, g = _valid_points(pred, gt, protocol)
    if g.size == 0:
        raise ValidationError(
            f"no valid ground-truth point in ({protocol.min_depth}, {protocol.max_depth}]",
            field="gt",
            suggestions=["Check the depth cap (max_depth) and the GT units"]
        )
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise ValidationError("predicted depth must be finite and positive on the valid set", field="pred")
    return p, g


def compute_metrics(pred: ArrayLike, gt: Union[ArrayLike, SparseDepth],
                    protocol: EvalProtocol = EvalProtocol()) -> DepthMetrics:
    """
    Standard depth metrics for one frame.

    Args:
        pred: H×W predicted depth (metres)
        gt: H×W dense GT or SparseDepth
        protocol: capping and median-scaling options

    Raises:
        ValidationError: empty valid set or non-positive prediction
    """
    p, g = _prepare(pred, gt, protocol)
    if protocol.median_scaling:
        p = p * median_scale(p, g)
    return compute_errors(g, p)


def regionwise_rmse(pred: ArrayLike, gt: ArrayLike, region_mask: ArrayLike,
                    protocol: EvalProtocol = EvalProtocol(), scale: Optional[float] = None) -> float:
    """
    RMSE restricted to ``region_mask``. The median scale is taken from the
    whole frame's valid set unless ``scale`` is given.

    Raises:
        ValidationError: the region holds no valid GT pixel
    """
    sq, _ = region_squared_errors(pred, gt, region_mask, protocol, scale)
    if sq.size == 0:
        raise ValidationError(
            "region holds no valid ground-truth pixel",
            field="region_mask",
            suggestions=["Skip frames whose region mask is empty"]
        )
    return float(np.sqrt(np.mean(sq)))


def region_squared_errors(pred: ArrayLike, gt: ArrayLike, region_mask: ArrayLike,
                          protocol: EvalProtocol = EvalProtocol(), scale: Optional[float] = None):
    """(squared errors inside the region, applied scale); ``scale`` overrides the frame median."""
    pred_np, gt_np = as_numpy(pred), as_numpy(gt)
    mask = as_numpy(region_mask).astype(bool)
    if mask.shape != gt_np.shape:
        raise ValidationError(
            f"region mask {mask.shape} does not match GT {gt_np.shape}",
            field="region_mask",
        )
    if not protocol.median_scaling:
        scale = 1.0
    elif scale is None:
        p, g = _prepare(pred_np, gt_np, protocol)
        scale = median_scale(p, g)
    valid = np.isfinite(gt_np) & (gt_np > protocol.min_depth) & (gt_np <= protocol.max_depth) & mask
    diff = pred_np[valid] * scale - gt_np[valid]
    return diff ** 2, scale


class MetricAccumulator:
    """Per-frame metrics plus pooled region errors over an evaluation run."""

    def __init__(self, protocol: EvalProtocol = EvalProtocol()):
        self.protocol = protocol
        self.frames: List[DepthMetrics] = []
        self.region_errors: Dict[str, List[np.ndarray]] = {}

    def add(self, pred: ArrayLike, gt: Union[ArrayLike, SparseDepth],
            regions: Optional[Dict[str, ArrayLike]] = None, dense_gt: Optional[ArrayLike] = None) -> DepthMetrics:
        """
        Score one frame. Region errors are measured on ``dense_gt`` when given
        (region masks are dense) and scaled by the median ratio of the
        headline valid set, i.e. of the sparse returns in sparse mode.
        """
        metrics = compute_metrics(pred, gt, self.protocol)
        self.frames.append(metrics)
        reference = dense_gt if dense_gt is not None else gt
        scale = None
        if regions and self.protocol.median_scaling:
            scale = median_scale(*_prepare(pred, gt, self.protocol))
        for name, mask in (regions or {}).items():
            sq, _ = region_squared_errors(pred, reference, mask, self.protocol, scale)
            self.region_errors.setdefault(name, []).append(sq)
        return metrics

    @property
    def count(self) -> int:
        return len(self.frames)

    def summary(self) -> DepthMetrics:
        return DepthMetrics.mean(self.frames)

    def region_rmse(self) -> Dict[str, float]:
        result = {}
        for name, chunks in self.region_errors.items():
            pooled = np.concatenate(chunks) if chunks else np.empty(0)
            result[f"rmse_{name}"] = float(np.sqrt(pooled.mean())) if pooled.size else float("nan")
        return result

    def as_row(self) -> Dict[str, float]:
        row = self.summary().as_dict()
        row.update(self.region_rmse())
        row["frames"] = self.count
        return row
