"""
Self-calibrated, stage-wise Retinex illumination estimator.

Each stage n estimates an illumination map xⁿ = Φ_E(Iⁿ), enhances
I'ⁿ = clip(Iⁿ ⊘ xⁿ), and the calibration network produces a residual that
re-generates a pseudo night image Iⁿ⁺¹ = clip(Iⁿ ⊕ Φ_C(I'ⁿ)). Φ_E and Φ_C are
shared by every stage. Only the first stage feeds depth and pose.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..utils.filters import gaussian_kernel2d
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)

EPS_ILLUM = 1e-4
SMOOTHNESS_WINDOW = 5
SMOOTHNESS_SIGMA = 1.0


def _conv_stack(in_channels: int, hidden: int, out_channels: int, layers: int = 3) -> nn.Sequential:
    modules: List[nn.Module] = []
    channels = in_channels
    for _ in range(layers - 1):
        modules += [nn.Conv2d(channels, hidden, 3, padding=1, padding_mode="replicate"), nn.ReLU(inplace=True)]
        channels = hidden
    modules.append(nn.Conv2d(channels, out_channels, 3, padding=1, padding_mode="replicate"))
    return nn.Sequential(*modules)


class IlluminationNet(nn.Module):
    """Φ_E: image → raw (pre-squash) single-channel illumination."""

    def __init__(self, hidden: int = 16, layers: int = 3):
        super().__init__()
        self.body = _conv_stack(3, hidden, 1, layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.body(image)


class CalibrationNet(nn.Module):
    """Φ_C: enhanced image → signed 3-channel residual."""

    def __init__(self, hidden: int = 16, layers: int = 3):
        super().__init__()
        self.body = _conv_stack(3, hidden, 3, layers)

    def forward(self, enhanced: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.body(enhanced))


class SelfCalibratedEnhancer(nn.Module):
    """Enhancer state: shared Φ_E, Φ_C and the stage count."""

    def __init__(self, illum_net: Optional[nn.Module] = None, calib_net: Optional[nn.Module] = None,
                 num_stages: int = 3, hidden: int = 16):
        super().__init__()
        if num_stages < 1:
            raise ValidationError(
                f"num_stages must be >= 1, got {num_stages}",
                field="num_stages",
                value=num_stages,
            )
        self.illum_net = illum_net if illum_net is not None else IlluminationNet(hidden)
        self.calib_net = calib_net if calib_net is not None else CalibrationNet(hidden)
        self.num_stages = num_stages

    def forward(self, image: torch.Tensor) -> 'SieOutput':
        return sie_forward(self, image)


@dataclass
class StageRecord:
    input: torch.Tensor         # Iⁿ, B×3×H×W
    illumination: torch.Tensor  # xⁿ, B×1×H×W
    enhanced: torch.Tensor      # I'ⁿ, B×3×H×W
    residual: torch.Tensor      # resⁿ, B×3×H×W


@dataclass
class SieOutput:
    per_stage: List[StageRecord] = field(default_factory=list)

    @property
    def enhanced_first_stage(self) -> torch.Tensor:
        return self.per_stage[0].enhanced

    @property
    def illum_first_stage(self) -> torch.Tensor:
        return self.per_stage[0].illumination


def estimate_illumination(state: SelfCalibratedEnhancer, image: torch.Tensor) -> torch.Tensor:
    """
    Illumination map in [EPS_ILLUM, 1]: sigmoid squash then clamp below.

    Args:
        state: enhancer holding Φ_E
        image: B×3×H×W in [0, 1]

    Returns:
        B×1×H×W illumination map
    """
    return torch.clamp(torch.sigmoid(state.illum_net(image)), EPS_ILLUM, 1.0)


def sie_forward(state: SelfCalibratedEnhancer, image: torch.Tensor) -> SieOutput:
    """Run all stages and record every intermediate."""
    out = SieOutput()
    current = image
    for _ in range(state.num_stages):
        x = estimate_illumination(state, current)
        enhanced = torch.clamp(current / x, 0.0, 1.0)
        residual = state.calib_net(enhanced)
        out.per_stage.append(StageRecord(current, x, enhanced, residual))
        current = torch.clamp(current + residual, 0.0, 1.0)
    return out


def fidelity_loss(out: SieOutput) -> torch.Tensor:
    """Mean over stages of the per-pixel squared distance between xⁿ and Iⁿ."""
    terms = [((s.illumination - s.input) ** 2).mean() for s in out.per_stage]
    return torch.stack(terms).mean()


def _neighbour_weights(dtype: torch.dtype, device) -> torch.Tensor:
    kernel = gaussian_kernel2d(SMOOTHNESS_WINDOW, SMOOTHNESS_SIGMA, dtype, device)
    return kernel.reshape(1, -1, 1)


def illumination_smoothness_loss(out: SieOutput) -> torch.Tensor:
    """
    Mean over stages and pixels of Σ_j κ_ij·|x(i) − x(j)| over the 5×5
    Gaussian-weighted neighbourhood, replicate-padded at the borders.
    """
    half = SMOOTHNESS_WINDOW // 2
    terms = []
    for stage in out.per_stage:
        x = stage.illumination
        b, c, h, w = x.shape
        padded = F.pad(x, (half, half, half, half), mode="replicate")
        neighbours = F.unfold(padded, SMOOTHNESS_WINDOW)               # B×(C·25)×(H·W)
        neighbours = neighbours.reshape(b, c, SMOOTHNESS_WINDOW ** 2, h * w)
        centre = x.reshape(b, c, 1, h * w)
        weights = _neighbour_weights(x.dtype, x.device).unsqueeze(0)    # 1×1×25×1
        terms.append(((neighbours - centre).abs() * weights).sum(dim=2).mean())
    return torch.stack(terms).mean()


def sie_loss(out: SieOutput, beta: float = 1.0, gamma: float = 0.1) -> torch.Tensor:
    """β·L_f + γ·L_es."""
    return beta * fidelity_loss(out) + gamma * illumination_smoothness_loss(out)


def pretrain_enhancer(enhancer: SelfCalibratedEnhancer, images: Iterable[torch.Tensor], steps: int,
                      lr: float = 1e-3, beta: float = 1.0, gamma: float = 0.1) -> List[float]:
    """
    SIE-only optimisation over a cycling sequence of image batches.

    Returns:
        per-step L_f history
    """
    batches: Sequence[torch.Tensor] = list(images)
    if not batches:
        raise ValidationError("pretrain_enhancer needs at least one image batch", field="images")
    optimizer = torch.optim.Adam(enhancer.parameters(), lr=lr)
    history: List[float] = []
    for step in range(steps):
        out = sie_forward(enhancer, batches[step % len(batches)])
        fidelity = fidelity_loss(out)
        loss = beta * fidelity + gamma * illumination_smoothness_loss(out)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(fidelity.detach()))
    if history:
        logger.info(f"Enhancer pretraining: {steps} steps, L_f {history[0]:.5f} -> {history[-1]:.5f}")
    return history
