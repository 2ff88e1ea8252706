"""
Photometric reconstruction loss (SSIM + L1), edge-aware smoothness and their
mask-weighted reductions.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import torch
import torch.nn.functional as F

from ..geometry.camera import CameraIntrinsics, RigidPose
from ..geometry.reprojection import reconstruct
from ..utils.validation import ParameterValidator, RangeValidator, ShapeValidator, ValidationError

SMOOTHNESS_MODES = ("disparity", "depth")


@dataclass(frozen=True)
class PhotometricConfig:
    """SSIM/L1 mixing and SSIM window settings."""
    alpha: float = 0.85
    ssim_window: int = 3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2

    def __post_init__(self):
        RangeValidator.validate_interval(self.alpha, 0.0, 1.0, "alpha")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValidationError(
                f"ssim_window must be odd and >= 3, got {self.ssim_window}",
                field="ssim_window",
                value=self.ssim_window,
            )


def ssim(a: torch.Tensor, b: torch.Tensor, cfg: PhotometricConfig = PhotometricConfig()) -> torch.Tensor:
    """
    Local SSIM map with a uniform window and reflection padding.

    Args:
        a, b: B×C×H×W images in [0, 1]

    Returns:
        B×C×H×W per-pixel, per-channel SSIM in [-1, 1]
    """
    ShapeValidator.validate_same_shape(a, b, "ssim")
    pad = cfg.ssim_window // 2
    a = F.pad(a, (pad, pad, pad, pad), mode="reflect")
    b = F.pad(b, (pad, pad, pad, pad), mode="reflect")

    mu_a = F.avg_pool2d(a, cfg.ssim_window, 1)
    mu_b = F.avg_pool2d(b, cfg.ssim_window, 1)
    sigma_a = F.avg_pool2d(a ** 2, cfg.ssim_window, 1) - mu_a ** 2
    sigma_b = F.avg_pool2d(b ** 2, cfg.ssim_window, 1) - mu_b ** 2
    sigma_ab = F.avg_pool2d(a * b, cfg.ssim_window, 1) - mu_a * mu_b

    numerator = (2 * mu_a * mu_b + cfg.c1) * (2 * sigma_ab + cfg.c2)
    denominator = (mu_a ** 2 + mu_b ** 2 + cfg.c1) * (sigma_a + sigma_b + cfg.c2)
    return numerator / denominator


def photometric_loss(target: torch.Tensor, recon: torch.Tensor, validity: torch.Tensor = None,
                     cfg: PhotometricConfig = PhotometricConfig()) -> torch.Tensor:
    """
    Per-pixel α·(1−SSIM)/2 + (1−α)·L1, both channel-averaged.

    Args:
        target, recon: B×C×H×W images
        validity: optional B×H×W bool; invalid pixels are set to zero

    Returns:
        B×1×H×W non-negative loss map
    """
    ShapeValidator.validate_same_shape(target, recon, "photometric_loss")
    l1 = (target - recon).abs().mean(dim=1, keepdim=True)
    if cfg.alpha > 0:
        ssim_term = torch.clamp((1 - ssim(target, recon, cfg)) / 2, 0, 1).mean(dim=1, keepdim=True)
        loss = cfg.alpha * ssim_term + (1 - cfg.alpha) * l1
    else:
        loss = l1
    if validity is not None:
        loss = torch.where(validity.unsqueeze(1), loss, torch.zeros_like(loss))
    return loss


def min_reprojection(losses: Sequence[torch.Tensor],
                     validities: Sequence[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Per-pixel minimum over source frames, ignoring sources that are invalid
    at that pixel.

    Args:
        losses: per-source B×1×H×W loss maps
        validities: per-source B×H×W bool maps

    Returns:
        (B×1×H×W reduced loss, B×H×W validity: valid in at least one source)
    """
    stacked = torch.stack(list(losses), dim=0)
    valid = torch.stack(list(validities), dim=0).unsqueeze(2)
    masked = torch.where(valid, stacked, torch.full_like(stacked, float("inf")))
    reduced, _ = masked.min(dim=0)
    any_valid = valid.any(dim=0)
    reduced = torch.where(any_valid, reduced, torch.zeros_like(reduced))
    return reduced, any_valid.squeeze(1)


def reprojection_loss(target: torch.Tensor, sources: Sequence[torch.Tensor], depth: torch.Tensor,
                      poses: Sequence[RigidPose], K: CameraIntrinsics,
                      cfg: PhotometricConfig = PhotometricConfig()) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Warp every source into the target view with P_{t→s} and reduce the
    per-source photometric maps with min_reprojection.

    Returns:
        (B×1×H×W per-pixel loss, B×H×W validity)
    """
    losses, validities = [], []
    for source, pose in zip(sources, poses):
        recon, valid = reconstruct(source, depth, pose, K)
        losses.append(photometric_loss(target, recon, valid, cfg))
        validities.append(valid)
    return min_reprojection(losses, validities)


def _normalized_field(depth: torch.Tensor, mode: str) -> torch.Tensor:
    field = 1.0 / depth if mode == "disparity" else depth
    mean = field.mean(dim=(2, 3), keepdim=True)
    if bool((mean == 0).any()):
        raise ValidationError(
            "smoothness normalisation undefined: field has zero spatial mean",
            field="depth",
            suggestions=["Depth must be strictly positive"]
        )
    return field / mean


def smoothness_loss(depth: torch.Tensor, image: torch.Tensor, mode: str = "disparity") -> torch.Tensor:
    """
    Edge-aware smoothness of the mean-normalised disparity (or depth).

    Args:
        depth: B×1×H×W
        image: B×C×H×W, gradients are channel-averaged
        mode: "disparity" (1/depth) or "depth"

    Returns:
        scalar mean of |∂x d̃|·e^{−|∂x I|} plus mean of |∂y d̃|·e^{−|∂y I|}
    """
    ParameterValidator.validate_choice(mode, SMOOTHNESS_MODES, "smoothness_mode")
    ShapeValidator.validate_spatial_match(depth, image, "smoothness_loss")
    field = _normalized_field(depth, mode)

    grad_field_x = (field[:, :, :, :-1] - field[:, :, :, 1:]).abs()
    grad_field_y = (field[:, :, :-1, :] - field[:, :, 1:, :]).abs()
    grad_img_x = (image[:, :, :, :-1] - image[:, :, :, 1:]).abs().mean(1, keepdim=True)
    grad_img_y = (image[:, :, :-1, :] - image[:, :, 1:, :]).abs().mean(1, keepdim=True)

    grad_field_x = grad_field_x * torch.exp(-grad_img_x)
    grad_field_y = grad_field_y * torch.exp(-grad_img_y)
    return grad_field_x.mean() + grad_field_y.mean()


def masked_photometric(per_pixel_loss: torch.Tensor, mask: torch.Tensor,
                       validity: torch.Tensor) -> torch.Tensor:
    """
    Mean over valid pixels of mask·loss.

    The divisor is the valid-pixel count, not the mask sum, so down-weighted
    pixels lose their gradient share instead of re-amplifying the rest.

    Args:
        per_pixel_loss: B×1×H×W
        mask: B×1×H×W weights in (0, 1]
        validity: B×H×W bool

    Raises:
        ValidationError: no valid pixel
    """
    ShapeValidator.validate_same_shape(per_pixel_loss, mask, "masked_photometric")
    valid = validity.unsqueeze(1).to(per_pixel_loss.dtype)
    count = valid.sum()
    if float(count) == 0:
        raise ValidationError(
            "masked_photometric: zero valid pixels",
            field="validity",
            suggestions=["Check the predicted pose; every pixel projected outside the source image"]
        )
    return (mask * per_pixel_loss * valid).sum() / count
