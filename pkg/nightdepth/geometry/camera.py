"""
Pinhole camera model and rigid transforms.

Pixel convention: p = (u, v, 1) with u the column index and v the row index,
(0, 0) at the centre of the top-left pixel. Camera frame: x right, y down,
z forward.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch

from ..utils.validation import ValidationError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}",
                field="fx,fy",
                value=[self.fx, self.fy],
            )
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}",
                field="cx,cy",
                value=[self.cx, self.cy],
                suggestions=["Principal point is given in pixels, not normalised units"]
            )

    @classmethod
    def from_normalized(cls, fx: float, fy: float, cx: float, cy: float,
                        width: int, height: int) -> 'CameraIntrinsics':
        """Scale image-size-normalised intrinsics (KITTI style) to pixels."""
        return cls(fx * width, fy * height, cx * width, cy * height, width, height)

    def scaled(self, sx: float, sy: float) -> 'CameraIntrinsics':
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
            int(round(self.width * sx)), int(round(self.height * sy)),
        )

    def matrix(self, dtype: torch.dtype = torch.float32,
               device: Optional[torch.device] = None) -> torch.Tensor:
        """3×3 matrix K."""
        return torch.tensor(
            [[self.fx, 0.0, self.cx],
             [0.0, self.fy, self.cy],
             [0.0, 0.0, 1.0]],
            dtype=dtype, device=device,
        )

    def inverse_matrix(self, dtype: torch.dtype = torch.float32,
                       device: Optional[torch.device] = None) -> torch.Tensor:
        """Closed-form K⁻¹."""
        return torch.tensor(
            [[1.0 / self.fx, 0.0, -self.cx / self.fx],
             [0.0, 1.0 / self.fy, -self.cy / self.fy],
             [0.0, 0.0, 1.0]],
            dtype=dtype, device=device,
        )

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.fx, self.fy, self.cx, self.cy)


def skew(w: torch.Tensor) -> torch.Tensor:
    """Batched cross-product matrix of B×3 vectors."""
    zero = torch.zeros_like(w[:, 0])
    return torch.stack([
        torch.stack([zero, -w[:, 2], w[:, 1]], dim=-1),
        torch.stack([w[:, 2], zero, -w[:, 0]], dim=-1),
        torch.stack([-w[:, 1], w[:, 0], zero], dim=-1),
    ], dim=1)


def axis_angle_to_matrix(axis_angle: torch.Tensor) -> torch.Tensor:
    """
    Rodrigues exponential map, B×3 → B×3×3.

    A zero vector maps to the identity exactly; the angle is regularised so the
    map stays differentiable there.
    """
    theta_sq = (axis_angle ** 2).sum(dim=-1, keepdim=True)
    theta = torch.sqrt(theta_sq + 1e-24)
    k = skew(axis_angle)
    a = (torch.sin(theta) / theta).unsqueeze(-1)
    b = ((1.0 - torch.cos(theta)) / (theta ** 2)).unsqueeze(-1)
    eye = torch.eye(3, dtype=axis_angle.dtype, device=axis_angle.device).expand_as(k)
    return eye + a * k + b * (k @ k)


class RigidPose:
    """
    Batched SE(3) transform stored as B×4×4 homogeneous matrices.

    For a relative pose P_{t→s}, ``matrix`` maps target-camera coordinates to
    source-camera coordinates.
    """

    def __init__(self, matrix: Union[torch.Tensor, np.ndarray]):
        if isinstance(matrix, np.ndarray):
            matrix = torch.from_numpy(matrix)
        if matrix.dim() == 2:
            matrix = matrix.unsqueeze(0)
        if matrix.shape[-2:] != (4, 4):
            raise ValidationError(
                f"pose must be a (B×)4×4 matrix, got {tuple(matrix.shape)}",
                field="pose",
                value=list(matrix.shape),
            )
        self.matrix = matrix

    @classmethod
    def identity(cls, batch: int = 1, dtype: torch.dtype = torch.float32,
                 device: Optional[torch.device] = None) -> 'RigidPose':
        return cls(torch.eye(4, dtype=dtype, device=device).repeat(batch, 1, 1))

    @classmethod
    def from_rotation_translation(cls, rotation: torch.Tensor, translation: torch.Tensor) -> 'RigidPose':
        if rotation.dim() == 2:
            rotation = rotation.unsqueeze(0)
        if translation.dim() == 1:
            translation = translation.unsqueeze(0)
        batch = rotation.shape[0]
        top = torch.cat([rotation, translation.reshape(batch, 3, 1)], dim=2)
        bottom = torch.zeros(batch, 1, 4, dtype=rotation.dtype, device=rotation.device)
        bottom[:, 0, 3] = 1.0
        return cls(torch.cat([top, bottom], dim=1))

    @classmethod
    def from_axis_angle(cls, axis_angle: torch.Tensor, translation: torch.Tensor) -> 'RigidPose':
        return cls.from_rotation_translation(axis_angle_to_matrix(axis_angle), translation)

    @property
    def rotation(self) -> torch.Tensor:
        return self.matrix[:, :3, :3]

    @property
    def translation(self) -> torch.Tensor:
        return self.matrix[:, :3, 3]

    @property
    def batch_size(self) -> int:
        return self.matrix.shape[0]

    def inverse(self) -> 'RigidPose':
        r_t = self.rotation.transpose(1, 2)
        t = -(r_t @ self.translation.unsqueeze(-1)).squeeze(-1)
        return RigidPose.from_rotation_translation(r_t, t)

    def compose(self, other: 'RigidPose') -> 'RigidPose':
        """self ∘ other: apply ``other`` first."""
        return RigidPose(self.matrix @ other.matrix)

    def is_identity(self) -> torch.Tensor:
        """Per-batch flag, true where the matrix is exactly the identity."""
        eye = torch.eye(4, dtype=self.matrix.dtype, device=self.matrix.device)
        return (self.matrix == eye).flatten(1).all(dim=1)

    def validate(self, atol: float = 1e-5) -> None:
        """Check orthonormal rotation with determinant +1."""
        r = self.rotation.detach()
        eye = torch.eye(3, dtype=r.dtype, device=r.device)
        ortho_err = (r @ r.transpose(1, 2) - eye).abs().amax()
        det = torch.linalg.det(r)
        if float(ortho_err) > atol or bool(((det - 1.0).abs() > atol).any()):
            raise ValidationError(
                f"pose rotation is not a proper rotation (orthonormality error {float(ortho_err):.2e})",
                field="pose.rotation",
                suggestions=["Build rotations with RigidPose.from_axis_angle"]
            )

    def to(self, *args, **kwargs) -> 'RigidPose':
        return RigidPose(self.matrix.to(*args, **kwargs))

    def __repr__(self):
        return f"RigidPose(batch={self.batch_size})"


def relative_pose(cam_to_world_target: np.ndarray, cam_to_world_source: np.ndarray) -> np.ndarray:
    """P_{t→s} = T_s⁻¹ · T_t for camera-to-world 4×4 poses."""
    return np.linalg.inv(cam_to_world_source) @ cam_to_world_target
