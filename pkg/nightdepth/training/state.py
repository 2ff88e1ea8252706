"""Model, optimiser and bookkeeping state shared by the trainer and checkpoints."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import torch
import torch.nn as nn

from .config import TrainConfig
from ..enhancement.denoise import create_denoiser
from ..enhancement.sie import EPS_ILLUM, SelfCalibratedEnhancer
from ..enhancement.uncertainty_mask import BridgeParams
from ..losses.photometric import PhotometricConfig
from ..models.daytime_prior import DaytimePrior
from ..models.networks import DepthNet, DepthNetConfig, PatchDiscriminator, PoseNet
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    config: TrainConfig
    enhancer: SelfCalibratedEnhancer
    depth_net: DepthNet
    pose_net: PoseNet
    discriminator: PatchDiscriminator
    denoiser: nn.Module
    prior: Optional[DaytimePrior]
    gen_optimizer: torch.optim.Optimizer
    disc_optimizer: torch.optim.Optimizer
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    mask_params: Optional[BridgeParams] = None
    step: int = 0
    epoch: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def enhancer_trainable(self) -> bool:
        return self.config.enhancer_mode == "joint"

    def modules(self) -> Dict[str, nn.Module]:
        """Modules whose weights a checkpoint stores."""
        return {
            "enhancer": self.enhancer,
            "depth_net": self.depth_net,
            "pose_net": self.pose_net,
            "discriminator": self.discriminator,
        }

    def generator_parameters(self) -> List[nn.Parameter]:
        params = list(self.depth_net.parameters()) + list(self.pose_net.parameters())
        if self.enhancer_trainable:
            params = list(self.enhancer.parameters()) + params
        return params

    def named_generator_parameters(self):
        groups = [("depth_net", self.depth_net), ("pose_net", self.pose_net)]
        if self.enhancer_trainable:
            groups.insert(0, ("enhancer", self.enhancer))
        for prefix, module in groups:
            for name, param in module.named_parameters():
                yield f"{prefix}.{name}", param

    def train(self) -> None:
        for name, module in self.modules().items():
            module.train(name != "enhancer" or self.enhancer_trainable)

    def eval(self) -> None:
        for module in self.modules().values():
            module.eval()

    @property
    def device(self) -> torch.device:
        return next(self.depth_net.parameters()).device


def _load_enhancer_weights(enhancer: SelfCalibratedEnhancer, path: str) -> None:
    if not Path(path).is_file():
        raise ValidationError(
            f"enhancer checkpoint not found: {path}",
            field="enhancer_checkpoint",
            value=path,
        )
    payload = torch.load(path, map_location="cpu", weights_only=True)
    weights = payload.get("models", {}).get("enhancer", payload) if isinstance(payload, dict) else payload
    enhancer.load_state_dict(weights)
    logger.info(f"Loaded enhancer weights from {path}")


def build_state(config: TrainConfig) -> TrainState:
    """Fresh models and optimisers; parameter init is seeded by ``config.seed``."""
    torch.manual_seed(config.seed)
    device = torch.device(config.device)
    enhancer = SelfCalibratedEnhancer(num_stages=config.num_stages)
    if config.enhancer_checkpoint:
        _load_enhancer_weights(enhancer, config.enhancer_checkpoint)
    depth_net = DepthNet(DepthNetConfig(min_depth=config.min_depth, max_depth=config.max_depth))
    pose_net = PoseNet()
    discriminator = PatchDiscriminator()
    denoiser = create_denoiser(config.denoiser_handle())

    for module in (enhancer, depth_net, pose_net, discriminator, denoiser):
        module.to(device)
    if config.enhancer_mode != "joint":
        enhancer.requires_grad_(False)

    prior = None
    if config.rho > 0:
        prior = DaytimePrior(
            config.prior_source,
            checkpoint_path=config.daytime_checkpoint,
            noise=config.prior_noise,
            seed=config.seed,
            min_depth=config.min_depth,
            max_depth=config.max_depth,
        ).to(device)

    mask_params = None
    if config.mask_a is not None:
        x_min = 0.0 if config.mask_mode == "histogram" else EPS_ILLUM
        mask_params = BridgeParams(config.mask_a, config.mask_b, config.mask_p, config.mask_q, x_min=x_min)

    state = TrainState(
        config=config,
        enhancer=enhancer,
        depth_net=depth_net,
        pose_net=pose_net,
        discriminator=discriminator,
        denoiser=denoiser,
        prior=prior,
        gen_optimizer=None,
        disc_optimizer=None,
        photometric=PhotometricConfig(alpha=config.ssim_alpha),
        mask_params=mask_params,
    )
    state.gen_optimizer = torch.optim.Adam(state.generator_parameters(), lr=config.lr)
    state.disc_optimizer = torch.optim.Adam(discriminator.parameters(), lr=config.lr_disc, betas=(0.5, 0.999))
    return state
