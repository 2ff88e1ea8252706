"""
Desk-scale depth, pose and patch-discriminator networks.

Depth is decoded from a per-pixel sigmoid s through
depth = 1 / (s·(1/min_depth − 1/max_depth) + 1/max_depth), so predictions
always lie inside (min_depth, max_depth).
"""

from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..geometry.camera import RigidPose
from ..utils.validation import ValidationError


@dataclass(frozen=True)
class DepthNetConfig:
    encoder_channels: Tuple[int, ...] = (8, 16, 32, 64)
    min_depth: float = 0.1
    max_depth: float = 100.0

    def __post_init__(self):
        if not (0 < self.min_depth < self.max_depth):
            raise ValidationError(
                f"need 0 < min_depth < max_depth, got {self.min_depth}, {self.max_depth}",
                field="min_depth,max_depth",
                value=[self.min_depth, self.max_depth],
            )


@dataclass(frozen=True)
class PoseNetConfig:
    hidden_channels: Tuple[int, ...] = (16, 32, 64, 64)
    # Pose outputs are scaled down so an untrained net starts near identity.
    output_scale: float = 0.01


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: Tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 4

    @property
    def patch_receptive_field(self) -> int:
        return PatchDiscriminator.receptive_field_of(self)


def disp_to_depth(s: torch.Tensor, min_depth: float, max_depth: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """Sigmoid output → (scaled disparity, depth)."""
    min_disp = 1.0 / max_depth
    max_disp = 1.0 / min_depth
    scaled_disp = min_disp + (max_disp - min_disp) * s
    return scaled_disp, 1.0 / scaled_disp


def normalized_disparity(depth: torch.Tensor, min_depth: float, max_depth: float) -> torch.Tensor:
    """Disparity mapped to [0, 1] by the conversion bounds."""
    min_disp = 1.0 / max_depth
    max_disp = 1.0 / min_depth
    return ((1.0 / depth) - min_disp) / (max_disp - min_disp)


def _conv_block(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, padding_mode="reflect"),
        nn.ELU(inplace=True),
    )


class DepthNet(nn.Module):
    """Four-level encoder-decoder with skip connections, sigmoid head."""

    def __init__(self, config: DepthNetConfig = DepthNetConfig()):
        super().__init__()
        self.config = config
        chans = list(config.encoder_channels)
        self.encoder = nn.ModuleList()
        in_ch = 3
        for ch in chans:
            self.encoder.append(nn.Sequential(_conv_block(in_ch, ch, stride=2), _conv_block(ch, ch)))
            in_ch = ch
        self.decoder = nn.ModuleList()
        skip_chans = [3] + chans[:-1]
        for level in reversed(range(len(chans))):
            out_ch = chans[level - 1] if level > 0 else chans[0]
            self.decoder.append(nn.Sequential(
                _conv_block(in_ch + skip_chans[level], out_ch),
                _conv_block(out_ch, out_ch),
            ))
            in_ch = out_ch
        self.head = nn.Conv2d(in_ch, 1, 3, padding=1, padding_mode="reflect")

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Returns the per-pixel sigmoid s, B×1×H×W."""
        skips = [image]
        x = image
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        skips.pop()
        for block in self.decoder:
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        return torch.sigmoid(self.head(x))


class PoseNet(nn.Module):
    """Six-channel frame pair → axis-angle (3) + translation (3)."""

    def __init__(self, config: PoseNetConfig = PoseNetConfig()):
        super().__init__()
        self.config = config
        layers: List[nn.Module] = []
        in_ch = 6
        for ch in config.hidden_channels:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
            in_ch = ch
        self.encoder = nn.Sequential(*layers)
        self.head = nn.Conv2d(in_ch, 6, 1)

    def forward(self, frame_a: torch.Tensor, frame_b: torch.Tensor) -> torch.Tensor:
        x = self.encoder(torch.cat([frame_a, frame_b], dim=1))
        return self.config.output_scale * self.head(x).mean(dim=(2, 3))


class PatchDiscriminator(nn.Module):
    """
    Least-squares patch critic on normalised disparity.

    No normalisation layers: each score depends only on its receptive field.
    """

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        k = config.kernel_size
        layers: List[nn.Module] = []
        in_ch = 1
        for ch in config.channels:
            layers += [nn.Conv2d(in_ch, ch, k, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            in_ch = ch
        layers.append(nn.Conv2d(in_ch, 1, k, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, disparity: torch.Tensor) -> torch.Tensor:
        return self.model(disparity)

    @staticmethod
    def _layer_specs(config: DiscriminatorConfig) -> List[Tuple[int, int, int]]:
        k = config.kernel_size
        return [(k, 2, 1)] * len(config.channels) + [(k, 1, 1)]

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        """Score-map size from conv arithmetic."""
        for k, s, p in self._layer_specs(self.config):
            height = (height + 2 * p - k) // s + 1
            width = (width + 2 * p - k) // s + 1
        return height, width

    @classmethod
    def receptive_field_of(cls, config: DiscriminatorConfig) -> int:
        rf, jump = 1, 1
        for k, s, _ in cls._layer_specs(config):
            rf += (k - 1) * jump
            jump *= s
        return rf

    @property
    def receptive_field(self) -> int:
        return self.receptive_field_of(self.config)

    @property
    def total_stride(self) -> int:
        stride = 1
        for _, s, _ in self._layer_specs(self.config):
            stride *= s
        return stride


def predict_depth(net: DepthNet, image: torch.Tensor) -> torch.Tensor:
    """Metric depth in (min_depth, max_depth), B×1×H×W."""
    _, depth = disp_to_depth(net(image), net.config.min_depth, net.config.max_depth)
    return depth


def predict_pose(net: PoseNet, frame_a: torch.Tensor, frame_b: torch.Tensor) -> RigidPose:
    """Relative pose from frame_a's camera to frame_b's camera."""
    vec = net(frame_a, frame_b)
    return RigidPose.from_axis_angle(vec[:, :3], vec[:, 3:])


def discriminate(net: PatchDiscriminator, depth: torch.Tensor, min_depth: float = 0.1,
                 max_depth: float = 100.0) -> torch.Tensor:
    """Patch scores for a depth map (converted to normalised disparity first)."""
    return net(normalized_disparity(depth, min_depth, max_depth))
