"""
Depth-driven reprojection and differentiable bilinear warping.

``project`` maps every target pixel into the source image through
K · P_{t→s} · D_t(p) · K⁻¹ · p. ``warp`` samples the source image at the
resulting coordinates with bilinear weights computed directly from the
fractional parts, so integer coordinates reproduce pixels bit-exactly and the
output is differentiable with respect to both the image and the coordinates.
"""

from dataclasses import dataclass
from typing import Tuple

import torch

from .camera import CameraIntrinsics, RigidPose
from ..utils.validation import RangeValidator, ValidationError

# Source-frame depths at or below this are treated as behind the camera.
MIN_SOURCE_DEPTH = 1e-6


@dataclass
class SampleGrid:
    """Continuous source coordinates per target pixel."""
    coords: torch.Tensor      # B×H×W×2, (u, v) in pixels
    in_bounds: torch.Tensor   # B×H×W bool

    @property
    def shape(self) -> Tuple[int, int, int]:
        b, h, w, _ = self.coords.shape
        return b, h, w


def pixel_grid(height: int, width: int, dtype: torch.dtype = torch.float32,
               device=None) -> torch.Tensor:
    """Homogeneous pixel coordinates, 3×(H·W), row-major."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=dtype, device=device),
        torch.arange(width, dtype=dtype, device=device),
        indexing="ij",
    )
    ones = torch.ones_like(u)
    return torch.stack([u, v, ones], dim=0).reshape(3, -1)


def identity_grid(batch: int, height: int, width: int, dtype: torch.dtype = torch.float32,
                  device=None) -> SampleGrid:
    coords = pixel_grid(height, width, dtype, device)[:2].t().reshape(1, height, width, 2)
    coords = coords.expand(batch, -1, -1, -1).clone()
    return SampleGrid(coords, torch.ones(batch, height, width, dtype=torch.bool, device=device))


def bounds_mask(coords: torch.Tensor, height: int, width: int) -> torch.Tensor:
    u = coords[..., 0]
    v = coords[..., 1]
    return (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)


def project(depth: torch.Tensor, pose: RigidPose, K: CameraIntrinsics) -> SampleGrid:
    """
    Project target pixels into the source view.

    Args:
        depth: B×1×H×W strictly positive metric depth of the target view
        pose: relative pose P_{t→s}, batch B (or 1, broadcast)
        K: camera intrinsics shared by both views

    Returns:
        SampleGrid with source coordinates; pixels whose transformed point lies
        at non-positive source depth are flagged out of bounds.

    Raises:
        ValidationError: non-finite or non-positive depth, naming the pixel
    """
    if depth.dim() == 3:
        depth = depth.unsqueeze(1)
    if depth.dim() != 4 or depth.shape[1] != 1:
        raise ValidationError(
            f"depth must be B×1×H×W, got {tuple(depth.shape)}",
            field="depth",
            value=list(depth.shape),
        )
    RangeValidator.validate_finite_positive(depth.detach(), "depth")

    batch, _, height, width = depth.shape
    dtype, device = depth.dtype, depth.device
    matrix = pose.matrix.to(dtype=dtype, device=device)
    if matrix.shape[0] == 1 and batch > 1:
        matrix = matrix.expand(batch, -1, -1)
    if matrix.shape[0] != batch:
        raise ValidationError(
            f"pose batch {matrix.shape[0]} does not match depth batch {batch}",
            field="pose",
        )

    pix = pixel_grid(height, width, dtype, device)
    rays = K.inverse_matrix(dtype, device) @ pix                  # 3×N
    points = depth.reshape(batch, 1, -1) * rays.unsqueeze(0)      # B×3×N
    points = matrix[:, :3, :3] @ points + matrix[:, :3, 3:]
    cam = K.matrix(dtype, device) @ points

    z = cam[:, 2:3]
    in_front = z > MIN_SOURCE_DEPTH
    z_safe = torch.where(in_front, z, torch.ones_like(z))
    uv = cam[:, :2] / z_safe

    # D cancels under dehomogenisation for P = I; pin those coordinates to the
    # exact pixel grid while keeping the autograd path.
    exact = RigidPose(matrix).is_identity().reshape(batch, 1, 1)
    if bool(exact.any()):
        uv = torch.where(exact, pix[:2].unsqueeze(0) + (uv - uv.detach()), uv)

    coords = uv.permute(0, 2, 1).reshape(batch, height, width, 2)
    in_front = in_front.reshape(batch, height, width)
    coords = torch.where(in_front.unsqueeze(-1), coords, torch.full_like(coords, -1.0))
    return SampleGrid(coords, in_front & bounds_mask(coords, height, width))


def warp(source: torch.Tensor, grid: SampleGrid) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Bilinearly sample ``source`` at ``grid`` coordinates.

    Args:
        source: B×C×H×W image
        grid: SampleGrid of matching batch and spatial size

    Returns:
        (warped B×C×H×W, validity B×H×W). Out-of-bounds pixels are zero with
        validity false.

    Raises:
        ValidationError: grid/source size mismatch
    """
    if source.dim() != 4:
        raise ValidationError(
            f"source must be B×C×H×W, got {tuple(source.shape)}",
            field="source",
            value=list(source.shape),
        )
    batch, channels, height, width = source.shape
    if grid.shape != (batch, height, width):
        raise ValidationError(
            f"grid shape {grid.shape} does not match source {(batch, height, width)}",
            field="grid",
            value=[list(grid.shape), [batch, height, width]],
            suggestions=["Project with a depth map of the same resolution as the source"]
        )

    valid = grid.in_bounds & bounds_mask(grid.coords, height, width)
    coords = torch.where(valid.unsqueeze(-1), grid.coords, torch.zeros_like(grid.coords))
    u = coords[..., 0]
    v = coords[..., 1]
    u0 = torch.floor(u.detach())
    v0 = torch.floor(v.detach())
    wu = (u - u0).unsqueeze(1)
    wv = (v - v0).unsqueeze(1)

    u0i = u0.long().clamp(0, width - 1)
    v0i = v0.long().clamp(0, height - 1)
    u1i = (u0i + 1).clamp(max=width - 1)
    v1i = (v0i + 1).clamp(max=height - 1)

    flat = source.reshape(batch, channels, -1)

    def gather(vi: torch.Tensor, ui: torch.Tensor) -> torch.Tensor:
        index = (vi * width + ui).reshape(batch, 1, -1).expand(-1, channels, -1)
        return flat.gather(2, index).reshape(batch, channels, height, width)

    out = ((1 - wu) * (1 - wv)) * gather(v0i, u0i) \
        + (wu * (1 - wv)) * gather(v0i, u1i) \
        + ((1 - wu) * wv) * gather(v1i, u0i) \
        + (wu * wv) * gather(v1i, u1i)
    out = torch.where(valid.unsqueeze(1), out, torch.zeros_like(out))
    return out, valid


def reconstruct(source: torch.Tensor, depth: torch.Tensor, pose: RigidPose,
                K: CameraIntrinsics) -> Tuple[torch.Tensor, torch.Tensor]:
    """Synthesise the target view from ``source`` (project then warp)."""
    return warp(source, project(depth, pose, K))
