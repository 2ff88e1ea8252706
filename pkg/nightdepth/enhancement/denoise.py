"""
Fixed denoising stage applied to enhanced frames before the photometric
comparison. None of the denoisers owns trainable parameters; kernels are
registered as buffers.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..utils.filters import gaussian_kernel2d
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)


class DenoiserKind(Enum):
    IDENTITY = "identity"
    GAUSSIAN = "gaussian"
    BILATERAL = "bilateral"
    EXTERNAL = "external"


@dataclass(frozen=True)
class DenoiserHandle:
    kind: DenoiserKind = DenoiserKind.GAUSSIAN
    kernel_size: int = 3
    sigma_spatial: float = 0.8
    sigma_range: float = 0.1
    weights_path: Optional[str] = None

    @classmethod
    def from_name(cls, name: str, **params: Any) -> 'DenoiserHandle':
        try:
            kind = DenoiserKind(name)
        except ValueError:
            raise ValidationError(
                f"unknown denoiser kind '{name}'",
                field="denoiser",
                value=name,
                suggestions=[f"Use one of: {[k.value for k in DenoiserKind]}"]
            )
        return cls(kind=kind, **params)


class IdentityDenoiser(nn.Module):
    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return image


class GaussianDenoiser(nn.Module):
    """Depthwise Gaussian blur with reflection padding."""

    def __init__(self, kernel_size: int = 3, sigma: float = 0.8):
        super().__init__()
        self.register_buffer("kernel", gaussian_kernel2d(kernel_size, sigma).reshape(1, 1, kernel_size, kernel_size))
        self.pad = kernel_size // 2

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        channels = image.shape[1]
        kernel = self.kernel.to(image.dtype).expand(channels, 1, -1, -1)
        padded = F.pad(image, (self.pad,) * 4, mode="reflect")
        return torch.clamp(F.conv2d(padded, kernel, groups=channels), 0.0, 1.0)


class BilateralDenoiser(nn.Module):
    """Edge-preserving bilateral filter; range weights use the channel-mean intensity."""

    def __init__(self, kernel_size: int = 5, sigma_spatial: float = 1.0, sigma_range: float = 0.1):
        super().__init__()
        self.kernel_size = kernel_size
        self.register_buffer("spatial", gaussian_kernel2d(kernel_size, sigma_spatial).reshape(1, 1, -1, 1))
        self.sigma_range = sigma_range

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        b, c, h, w = image.shape
        k = self.kernel_size
        pad = k // 2
        padded = F.pad(image, (pad,) * 4, mode="reflect")
        patches = F.unfold(padded, k).reshape(b, c, k * k, h * w)
        intensity = patches.mean(dim=1, keepdim=True)
        centre = image.mean(dim=1, keepdim=True).reshape(b, 1, 1, h * w)
        range_w = torch.exp(-((intensity - centre) ** 2) / (2 * self.sigma_range ** 2))
        weights = self.spatial.to(image.dtype) * range_w
        weights = weights / weights.sum(dim=2, keepdim=True)
        out = (patches * weights).sum(dim=2).reshape(b, c, h, w)
        return torch.clamp(out, 0.0, 1.0)


class ExternalDenoiser(nn.Module):
    """
    User-supplied TorchScript denoiser, frozen and applied straight-through:
    the forward value is the network output, the gradient is the identity.
    """

    def __init__(self, weights_path: str):
        super().__init__()
        self.network = torch.jit.load(weights_path, map_location="cpu")
        self.network.eval()
        for param in self.network.parameters():
            param.requires_grad_(False)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            denoised = torch.clamp(self.network(image), 0.0, 1.0)
        return image + (denoised - image).detach()


def create_denoiser(handle: DenoiserHandle) -> nn.Module:
    """
    Build a fixed denoiser from its handle.

    Raises:
        ValidationError: external kind without an existing weights file
    """
    if handle.kind is DenoiserKind.IDENTITY:
        module: nn.Module = IdentityDenoiser()
    elif handle.kind is DenoiserKind.GAUSSIAN:
        module = GaussianDenoiser(handle.kernel_size, handle.sigma_spatial)
    elif handle.kind is DenoiserKind.BILATERAL:
        module = BilateralDenoiser(max(handle.kernel_size, 3), handle.sigma_spatial, handle.sigma_range)
    else:
        if not handle.weights_path or not Path(handle.weights_path).is_file():
            raise ValidationError(
                f"external denoiser weights not found: {handle.weights_path}",
                field="denoiser_weights",
                value=handle.weights_path,
                suggestions=["Export the denoiser with torch.jit.save and point denoiser_weights at it"]
            )
        module = ExternalDenoiser(handle.weights_path)
    logger.debug(f"Created {handle.kind.value} denoiser")
    return module.eval()


def denoise(handle_or_module, image: torch.Tensor) -> torch.Tensor:
    """Apply a denoiser given either its handle or an already built module."""
    module = create_denoiser(handle_or_module) if isinstance(handle_or_module, DenoiserHandle) else handle_or_module
    return module(image)
