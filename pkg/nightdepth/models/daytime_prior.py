"""
Source of daytime depth samples D_d for the adversarial prior.

Two modes:
    trained_daytime_model  frozen DepthNet trained beforehand on the clean
                           (daytime) frames by ``train_daytime_model``
    synthetic_oracle       ground-truth depth with multiplicative Gaussian
                           noise, clamped to the depth conversion bounds
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from .networks import DepthNet, DepthNetConfig, PoseNet, predict_depth, predict_pose
from ..data.dataset_io import NightSequenceDataset, SequenceRecord, collate_triplets
from ..losses.photometric import PhotometricConfig, reprojection_loss, smoothness_loss
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)

DAYTIME_CHECKPOINT_KIND = "daytime_depth"
DEFAULT_ORACLE_NOISE = 0.05


class PriorSource(Enum):
    TRAINED_DAYTIME_MODEL = "trained_daytime_model"
    SYNTHETIC_ORACLE = "synthetic_oracle"


@dataclass
class DaytimePriorBatch:
    depths: torch.Tensor        # B×1×H×W, no autograd history

    @property
    def batch_size(self) -> int:
        return self.depths.shape[0]


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    module.eval()
    for param in module.parameters():
        param.requires_grad_(False)
    return module


def load_daytime_model(path: Union[str, Path], map_location: str = "cpu") -> DepthNet:
    """
    Load a frozen daytime DepthNet.

    Raises:
        ValidationError: missing file or a checkpoint of another kind
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(
            f"daytime checkpoint not found: {path}",
            field="daytime_checkpoint",
            value=str(path),
            suggestions=["Train one first with `nightdepth train-day`",
                         "Or set prior_source=synthetic_oracle"]
        )
    payload = torch.load(path, map_location=map_location, weights_only=True)
    if payload.get("kind") != DAYTIME_CHECKPOINT_KIND:
        raise ValidationError(
            f"{path} is not a daytime depth checkpoint (kind={payload.get('kind')!r})",
            field="daytime_checkpoint",
            value=str(path),
        )
    config = payload["depth_config"]
    net = DepthNet(DepthNetConfig(
        encoder_channels=tuple(config["encoder_channels"]),
        min_depth=config["min_depth"],
        max_depth=config["max_depth"],
    ))
    net.load_state_dict(payload["depth_net"])
    return freeze(net)


class DaytimePrior:
    """Produces D_d batches; never exposes trainable parameters."""

    def __init__(self, source: Union[str, PriorSource] = PriorSource.SYNTHETIC_ORACLE,
                 checkpoint_path: Optional[str] = None, model: Optional[DepthNet] = None,
                 noise: float = DEFAULT_ORACLE_NOISE, seed: int = 0,
                 min_depth: float = 0.1, max_depth: float = 100.0):
        try:
            self.source = PriorSource(source)
        except ValueError:
            raise ValidationError(
                f"unknown prior source '{source}'",
                field="prior_source",
                value=source,
                suggestions=[f"Use one of: {[s.value for s in PriorSource]}"]
            )
        self.noise = noise
        self.min_depth = min_depth
        self.max_depth = max_depth
        self.generator = torch.Generator().manual_seed(seed)
        self.model: Optional[DepthNet] = None
        if self.source is PriorSource.TRAINED_DAYTIME_MODEL:
            if model is not None:
                self.model = freeze(model)
            elif checkpoint_path:
                self.model = load_daytime_model(checkpoint_path)
            else:
                raise ValidationError(
                    "trained_daytime_model prior needs a daytime checkpoint",
                    field="daytime_checkpoint",
                    suggestions=["Set daytime_checkpoint in the config"]
                )

    def to(self, device) -> 'DaytimePrior':
        if self.model is not None:
            self.model.to(device)
        return self

    def sample(self, day_images: Optional[torch.Tensor] = None,
               gt_depth: Optional[torch.Tensor] = None) -> DaytimePriorBatch:
        if self.source is PriorSource.TRAINED_DAYTIME_MODEL:
            if day_images is None:
                raise ValidationError("daytime model prior needs daytime images", field="day_images")
            with torch.no_grad():
                depths = predict_depth(self.model, day_images)
            return DaytimePriorBatch(depths.detach())

        if gt_depth is None:
            raise ValidationError("synthetic oracle prior needs ground-truth depth", field="gt_depth")
        depths = gt_depth.detach()
        if self.noise > 0:
            noise = torch.randn(depths.shape, generator=self.generator, dtype=depths.dtype)
            depths = depths * (1.0 + self.noise * noise.to(depths.device))
            depths = depths.clamp(self.min_depth, self.max_depth)
        return DaytimePriorBatch(depths)


def daytime_prior(source: DaytimePrior, day_images: Optional[torch.Tensor] = None,
                  gt_depth: Optional[torch.Tensor] = None) -> DaytimePriorBatch:
    """Draw one D_d batch from ``source``."""
    return source.sample(day_images, gt_depth)


@dataclass(frozen=True)
class DaytimeTrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    smoothness_weight: float = 0.001
    seed: int = 0


def train_daytime_model(sequences: Sequence[SequenceRecord], output_path: Union[str, Path],
                        config: DaytimeTrainConfig = DaytimeTrainConfig(),
                        depth_config: DepthNetConfig = DepthNetConfig(),
                        device: str = "cpu", progress: bool = False) -> DepthNet:
    """
    Self-supervised depth/pose training on the clean frames, written as a
    daytime checkpoint for the ``trained_daytime_model`` prior.
    """
    dataset = NightSequenceDataset(sequences)
    if not all(record.day_frames for record in dataset.sequences):
        raise ValidationError("daytime training needs rgb_day frames", field="day_frames")
    torch.manual_seed(config.seed)
    depth_net = DepthNet(depth_config).to(device)
    pose_net = PoseNet().to(device)
    optimizer = torch.optim.Adam(list(depth_net.parameters()) + list(pose_net.parameters()), lr=config.lr)
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=True, collate_fn=collate_triplets,
                        generator=torch.Generator().manual_seed(config.seed), drop_last=len(dataset) > config.batch_size)
    photometric = PhotometricConfig()

    step = 0
    bar = tqdm(total=config.steps, desc="daytime", disable=not progress)
    while step < config.steps:
        for batch in loader:
            if step >= config.steps:
                break
            batch = batch.to(device)
            prev_frame, target, next_frame = batch.day
            depth = predict_depth(depth_net, target)
            poses = [predict_pose(pose_net, target, source) for source in (prev_frame, next_frame)]
            per_pixel, valid = reprojection_loss(target, (prev_frame, next_frame), depth, poses,
                                                 batch.intrinsics, photometric)
            count = valid.sum().clamp(min=1)
            loss = (per_pixel.squeeze(1) * valid).sum() / count
            loss = loss + config.smoothness_weight * smoothness_loss(depth, target)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            bar.update(1)
            if step % 100 == 0:
                logger.debug(f"daytime step {step}: loss {float(loss):.5f}")
    bar.close()

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    depth_net = depth_net.cpu()
    payload = {
        "kind": DAYTIME_CHECKPOINT_KIND,
        "depth_config": {
            "encoder_channels": list(depth_config.encoder_channels),
            "min_depth": depth_config.min_depth,
            "max_depth": depth_config.max_depth,
        },
        "train_config": asdict(config),
        "depth_net": depth_net.state_dict(),
    }
    torch.save(payload, output_path)
    logger.info(f"Daytime model trained for {config.steps} steps, saved to {output_path}")
    return freeze(depth_net)
