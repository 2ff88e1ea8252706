"""
Least-squares GAN losses for the daytime depth prior.

Real label 1 (daytime prior depth), fake label 0 (nighttime prediction); means
run over batch and patches.
"""

import torch

from ..utils.validation import require_non_empty


def discriminator_loss(scores_day: torch.Tensor, scores_night: torch.Tensor) -> torch.Tensor:
    """½·mean((scores_day − 1)²) + ½·mean(scores_night²)."""
    require_non_empty(scores_day.numel(), "scores_day")
    require_non_empty(scores_night.numel(), "scores_night")
    return 0.5 * ((scores_day - 1) ** 2).mean() + 0.5 * (scores_night ** 2).mean()


def generator_loss(scores_night: torch.Tensor) -> torch.Tensor:
    """½·mean((scores_night − 1)²)."""
    require_non_empty(scores_night.numel(), "scores_night")
    return 0.5 * ((scores_night - 1) ** 2).mean()
