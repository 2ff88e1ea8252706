"""
Bridge-shaped uncertainty mask built from the illumination map.

    M(x) = 1 / (1 + p²(x − a)²)   x < a
           1                      a ≤ x ≤ b
           1 / (1 + q²(x − b)²)   x > b

The upper branch is centred on b so the mask is continuous at both knots.
``strict_printed=True`` evaluates the upper branch on (x − a) instead, which
jumps at x = b; it is kept only for auditing that variant.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple, Union

import numpy as np
import torch

from .sie import EPS_ILLUM
from ..utils.validation import RangeValidator, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_P = 10.0
DEFAULT_Q = 10.0
DEFAULT_LO_PCT = 0.15
DEFAULT_HI_PCT = 0.85
HISTOGRAM_BINS = 1000

Bound = Union[float, torch.Tensor]


@dataclass(frozen=True)
class BridgeParams:
    """Plateau bounds a < b inside [x_min, x_max] and attenuation p, q."""
    a: float
    b: float
    p: float = DEFAULT_P
    q: float = DEFAULT_Q
    x_min: float = EPS_ILLUM
    x_max: float = 1.0

    def __post_init__(self):
        if not (self.a < self.b):
            raise ValidationError(
                f"bridge bounds need a < b, got a={self.a}, b={self.b}",
                field="a,b",
                value=[self.a, self.b],
                suggestions=["Widen the calibration percentiles (lo_pct/hi_pct)"]
            )
        RangeValidator.validate_interval(self.a, self.x_min, self.x_max, "a")
        RangeValidator.validate_interval(self.b, self.x_min, self.x_max, "b")
        RangeValidator.validate_interval(self.p, 0.0, float("inf"), "p", low_open=True, high_open=True)
        RangeValidator.validate_interval(self.q, 0.0, float("inf"), "q", low_open=True, high_open=True)


def bridge_values(x: torch.Tensor, a: Bound, b: Bound, p: float, q: float,
                  strict_printed: bool = False) -> torch.Tensor:
    """Element-wise bridge function; a and b may be per-image tensors."""
    lower = 1.0 / (1.0 + (p ** 2) * (x - a) ** 2)
    upper_centre = a if strict_printed else b
    upper = 1.0 / (1.0 + (q ** 2) * (x - upper_centre) ** 2)
    ones = torch.ones_like(x)
    return torch.where(x < a, lower, torch.where(x > b, upper, ones))


def bridge_mask(x: torch.Tensor, params: BridgeParams, strict_printed: bool = False) -> torch.Tensor:
    """
    Uncertainty mask M_uc from an illumination map.

    Args:
        x: illumination map (any shape, typically B×1×H×W)
        params: plateau bounds and attenuation coefficients

    Returns:
        weights in (0, 1], exactly 1 on [a, b]
    """
    return bridge_values(x, params.a, params.b, params.p, params.q, strict_printed)


def luminance(image: torch.Tensor) -> torch.Tensor:
    """Channel-mean luminance, B×3×H×W → B×1×H×W."""
    return image.mean(dim=1, keepdim=True)


def histogram_mask(image: torch.Tensor, params: BridgeParams, strict_printed: bool = False) -> torch.Tensor:
    """Bridge mask evaluated on the raw night image's luminance instead of x."""
    return bridge_mask(luminance(image), params, strict_printed)


class IlluminationHistogram:
    """
    Streaming fixed-bin histogram over [low, high].

    Values outside the range are clipped into the end bins.
    """

    def __init__(self, bins: int = HISTOGRAM_BINS, value_range: Tuple[float, float] = (EPS_ILLUM, 1.0)):
        self.bins = bins
        self.low, self.high = value_range
        self.counts = np.zeros(bins, dtype=np.int64)

    @property
    def bin_width(self) -> float:
        return (self.high - self.low) / self.bins

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, values: Union[torch.Tensor, np.ndarray]) -> None:
        if isinstance(values, torch.Tensor):
            values = values.detach().cpu().double().numpy()
        values = np.clip(np.asarray(values, dtype=np.float64).ravel(), self.low, self.high)
        counts, _ = np.histogram(values, bins=self.bins, range=(self.low, self.high))
        self.counts += counts

    def quantile(self, q: float) -> float:
        """Quantile with linear interpolation inside the containing bin."""
        if self.total == 0:
            raise ValidationError("illumination histogram is empty", field="illum_samples")
        cdf = np.cumsum(self.counts) / self.total
        k = int(np.searchsorted(cdf, q, side="left"))
        k = min(k, self.bins - 1)
        below = cdf[k - 1] if k > 0 else 0.0
        inside = cdf[k] - below
        frac = (q - below) / inside if inside > 0 else 0.0
        return float(self.low + (k + frac) * self.bin_width)


def calibrate_bounds(illum_samples: Iterable[Union[torch.Tensor, np.ndarray]], lo_pct: float = DEFAULT_LO_PCT,
                     hi_pct: float = DEFAULT_HI_PCT, p: float = DEFAULT_P, q: float = DEFAULT_Q,
                     value_range: Tuple[float, float] = (EPS_ILLUM, 1.0),
                     bins: int = HISTOGRAM_BINS) -> BridgeParams:
    """
    Plateau bounds from quantiles of the pooled illumination histogram.

    Args:
        illum_samples: illumination maps (tensors or arrays)
        lo_pct, hi_pct: quantile fractions, 0 < lo_pct < hi_pct < 1
        p, q: attenuation coefficients copied into the result
        value_range: histogram domain (illumination domain by default)

    Raises:
        ValidationError: empty sample set, bad percentiles or a degenerate
            distribution (both quantiles in the same bin)
    """
    if not (0 < lo_pct < hi_pct < 1):
        raise ValidationError(
            f"need 0 < lo_pct < hi_pct < 1, got lo_pct={lo_pct}, hi_pct={hi_pct}",
            field="lo_pct,hi_pct",
            value=[lo_pct, hi_pct],
        )
    histogram = IlluminationHistogram(bins, value_range)
    for sample in illum_samples:
        histogram.update(sample)
    if histogram.total == 0:
        raise ValidationError(
            "calibrate_bounds needs at least one illumination sample",
            field="illum_samples",
        )
    a = histogram.quantile(lo_pct)
    b = histogram.quantile(hi_pct)
    if b - a < histogram.bin_width:
        raise ValidationError(
            f"degenerate illumination distribution: a={a:.5f}, b={b:.5f} fall in one histogram bin",
            field="illum_samples",
            value=[a, b],
            suggestions=["Use wider percentiles (e.g. lo_pct=0.05, hi_pct=0.95)",
                         "Calibrate on more varied images"]
        )
    logger.info(f"Calibrated bridge bounds a={a:.4f}, b={b:.4f} from {histogram.total} pixels")
    return BridgeParams(a=a, b=b, p=p, q=q, x_min=value_range[0], x_max=value_range[1])


def per_image_bounds(x: torch.Tensor, lo_pct: float = DEFAULT_LO_PCT,
                     hi_pct: float = DEFAULT_HI_PCT) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-image quantile bounds, each B×1×1×1; b is kept strictly above a."""
    flat = x.detach().flatten(1)
    qs = torch.tensor([lo_pct, hi_pct], dtype=flat.dtype, device=flat.device)
    bounds = torch.quantile(flat, qs, dim=1)
    a = bounds[0].reshape(-1, 1, 1, 1)
    b = torch.maximum(bounds[1], bounds[0] + 1e-6).reshape(-1, 1, 1, 1)
    return a, b


def uncertainty_mask(x: torch.Tensor, params: Optional[BridgeParams], statistics: str = "pooled",
                     lo_pct: float = DEFAULT_LO_PCT, hi_pct: float = DEFAULT_HI_PCT,
                     p: float = DEFAULT_P, q: float = DEFAULT_Q, strict_printed: bool = False) -> torch.Tensor:
    """Bridge mask with pooled (calibrated) or per-image bounds."""
    if statistics == "per_image":
        a, b = per_image_bounds(x, lo_pct, hi_pct)
        return bridge_values(x, a, b, p, q, strict_printed)
    if params is None:
        raise ValidationError(
            "pooled mask statistics need calibrated BridgeParams",
            field="mask_params",
            suggestions=["Run calibrate_bounds or set mask_a/mask_b in the config"]
        )
    return bridge_mask(x, params, strict_printed)


def mask_to_image(mask: torch.Tensor) -> np.ndarray:
    """H×W 8-bit grayscale rendering of a single mask (first batch element)."""
    values = mask.detach().cpu().double()
    while values.dim() > 2:
        values = values[0]
    return np.round(values.clamp(0, 1).numpy() * 255).astype(np.uint8)
