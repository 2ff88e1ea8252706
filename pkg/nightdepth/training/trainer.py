"""
Joint enhancement + depth training.

One step runs two phases. Phase 1 updates the enhancer, depth and pose
networks on η·L_SIE + ζ·L_DE + ξ·L_Gen with the discriminator frozen. Phase 2
updates the discriminator on ρ·L_Dis against a detached night depth.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, write_config
from .state import TrainState, build_state
from .visualize import dump_qualitative, qualitative_panels
from ..data.dataset_io import NightSequenceDataset, TripletBatch, collate_triplets
from ..enhancement.sie import EPS_ILLUM, fidelity_loss, illumination_smoothness_loss, pretrain_enhancer, sie_forward
from ..enhancement.uncertainty_mask import BridgeParams, calibrate_bounds, luminance, uncertainty_mask
from ..evaluation.metrics import EvalProtocol, MetricAccumulator, valid_count
from ..evaluation.report import CsvLog
from ..evaluation.sparsify import DEFAULT_AZIMUTH_STEP, sparsify
from ..geometry.camera import RigidPose
from ..losses.adversarial import discriminator_loss, generator_loss
from ..losses.photometric import masked_photometric, reprojection_loss, smoothness_loss
from ..models.networks import discriminate, predict_depth, predict_pose
from ..utils.validation import NonFiniteLossError, ValidationError

logger = logging.getLogger(__name__)

STEPS_LOG = "steps.csv"
EVAL_LOG = "eval.csv"
LAST_CHECKPOINT = "checkpoint_last.pt"


@dataclass
class LossBundle:
    """Every loss term of one forward pass plus the tensors they came from."""
    fidelity: torch.Tensor
    illum_smoothness: torch.Tensor
    photometric: torch.Tensor
    smoothness: torch.Tensor
    generator: torch.Tensor
    sie: torch.Tensor
    depth_loss: torch.Tensor
    total: torch.Tensor
    depth: torch.Tensor
    enhanced: torch.Tensor
    illumination: Optional[torch.Tensor]
    mask: torch.Tensor
    validity: torch.Tensor

    def terms(self) -> Dict[str, torch.Tensor]:
        return {
            "fidelity": self.fidelity,
            "illum_smoothness": self.illum_smoothness,
            "photometric": self.photometric,
            "smoothness": self.smoothness,
            "generator": self.generator,
            "sie": self.sie,
            "depth": self.depth_loss,
            "total": self.total,
        }

    def as_log(self) -> Dict[str, float]:
        return {name: float(value.detach()) for name, value in self.terms().items()}


def _split3(tensor: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return tuple(torch.chunk(tensor, 3, dim=0))


def compute_mask(state: TrainState, raw_target: torch.Tensor,
                 illumination: Optional[torch.Tensor]) -> torch.Tensor:
    """Photometric weights for the target frame, B×1×H×W."""
    config = state.config
    if config.mask_mode == "none":
        return torch.ones_like(raw_target[:, :1])
    x = illumination if config.mask_mode == "illumination" else luminance(raw_target)
    if x is None:
        raise ValidationError(
            "illumination mask needs the enhancer's illumination map",
            field="mask_mode",
            value=config.mask_mode,
        )
    mask = uncertainty_mask(x, state.mask_params, config.mask_statistics, config.mask_lo_pct,
                            config.mask_hi_pct, config.mask_p, config.mask_q, config.mask_strict_printed)
    return mask if config.mask_gradient else mask.detach()


def _enhance(state: TrainState, frames: torch.Tensor):
    """(enhanced, first-stage illumination, L_f, L_es) for a stacked frame batch."""
    config = state.config
    zero = frames.new_zeros(())
    if config.enhancer_mode == "none":
        return frames, None, zero, zero
    if state.enhancer_trainable:
        out = sie_forward(state.enhancer, frames)
        return out.enhanced_first_stage, out.illum_first_stage, fidelity_loss(out), illumination_smoothness_loss(out)
    with torch.no_grad():
        out = sie_forward(state.enhancer, frames)
        return out.enhanced_first_stage, out.illum_first_stage, fidelity_loss(out), illumination_smoothness_loss(out)


def forward_joint(batch: TripletBatch, state: TrainState,
                  depth_override: Optional[torch.Tensor] = None,
                  poses_override: Optional[Tuple[RigidPose, RigidPose]] = None) -> LossBundle:
    """
    Full generator-side forward pass on one triplet batch.

    ``depth_override`` / ``poses_override`` replace the network predictions
    (ground-truth injection for checking the warping path).

    Raises:
        ValidationError: a batch item mixes sequences
    """
    batch.check_single_sequence()
    config = state.config
    prev_raw, target_raw, next_raw = batch.night
    frames = torch.cat([prev_raw, target_raw, next_raw], dim=0)

    enhanced_all, illum_all, fidelity, illum_smooth = _enhance(state, frames)
    denoised_all = state.denoiser(enhanced_all)
    prev_frame, target, next_frame = _split3(denoised_all)
    enhanced_target = _split3(enhanced_all)[1]
    illumination = _split3(illum_all)[1] if illum_all is not None else None

    depth = depth_override if depth_override is not None else predict_depth(state.depth_net, target)
    if poses_override is not None:
        poses = tuple(poses_override)
    else:
        poses = tuple(predict_pose(state.pose_net, target, source) for source in (prev_frame, next_frame))

    per_pixel, validity = reprojection_loss(target, (prev_frame, next_frame), depth, poses,
                                            batch.intrinsics, state.photometric)
    mask = compute_mask(state, target_raw, illumination)
    photometric = masked_photometric(per_pixel, mask, validity)
    smoothness = smoothness_loss(depth, enhanced_target, config.smoothness_mode)
    gen = generator_loss(discriminate(state.discriminator, depth, config.min_depth, config.max_depth))

    # float64: total must equal the sum of the logged terms
    sie = config.beta * fidelity.double() + config.gamma * illum_smooth.double()
    depth_loss = config.lambda_ * photometric.double() + config.mu * smoothness.double()
    total = config.eta * sie + config.zeta * depth_loss + config.xi * gen.double()
    return LossBundle(
        fidelity=fidelity,
        illum_smoothness=illum_smooth,
        photometric=photometric,
        smoothness=smoothness,
        generator=gen,
        sie=sie,
        depth_loss=depth_loss,
        total=total,
        depth=depth,
        enhanced=enhanced_target,
        illumination=illumination,
        mask=mask,
        validity=validity,
    )


def _check_finite_terms(terms: Dict[str, torch.Tensor], step: int) -> None:
    for name, value in terms.items():
        if not bool(torch.isfinite(value.detach()).all()):
            raise NonFiniteLossError(
                f"loss term '{name}' is non-finite at step {step}: {float(value.detach())}",
                field=name,
                value=float(value.detach()),
                suggestions=["Lower the learning rate", "Check the input frames for NaN pixels"]
            )


def _check_finite_gradients(state: TrainState) -> None:
    for name, param in state.named_generator_parameters():
        if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
            bad = int((~torch.isfinite(param.grad)).sum())
            raise NonFiniteLossError(
                f"gradient of '{name}' has {bad} non-finite entries at step {state.step}",
                field=name,
                suggestions=["Lower the learning rate"]
            )


def generator_phase(batch: TripletBatch, state: TrainState) -> LossBundle:
    """Phase 1: one optimiser step on the enhancer, depth and pose networks."""
    bundle = forward_joint(batch, state)
    _check_finite_terms(bundle.terms(), state.step)
    state.discriminator.requires_grad_(False)
    try:
        state.gen_optimizer.zero_grad(set_to_none=True)
        bundle.total.backward()
        _check_finite_gradients(state)
        state.gen_optimizer.step()
    finally:
        state.discriminator.requires_grad_(True)
    return bundle


def discriminator_phase(batch: TripletBatch, night_depth: torch.Tensor, state: TrainState) -> float:
    """Phase 2: one optimiser step on the discriminator; returns L_Dis (0 when ρ = 0)."""
    config = state.config
    if config.rho <= 0 or state.prior is None:
        return 0.0
    day_target = batch.day[1] if batch.day is not None else None
    prior = state.prior.sample(day_target, batch.depth)
    scores_day = discriminate(state.discriminator, prior.depths, config.min_depth, config.max_depth)
    scores_night = discriminate(state.discriminator, night_depth.detach(), config.min_depth, config.max_depth)
    loss = discriminator_loss(scores_day, scores_night)
    _check_finite_terms({"discriminator": loss}, state.step)
    state.disc_optimizer.zero_grad(set_to_none=True)
    (config.rho * loss).backward()
    state.disc_optimizer.step()
    return float(loss.detach())


def train_step(batch: TripletBatch, state: TrainState) -> Dict[str, float]:
    """
    Both update phases on one batch.

    Returns:
        log record with every loss term, ``discriminator``, ``step`` and ``epoch``

    Raises:
        NonFiniteLossError: a loss term or generator gradient is non-finite
    """
    state.train()
    bundle = generator_phase(batch, state)
    dis = discriminator_phase(batch, bundle.depth, state)
    state.step += 1
    record: Dict[str, float] = {"step": state.step, "epoch": state.epoch}
    record.update(bundle.as_log())
    record["discriminator"] = dis
    logger.debug(f"step {state.step}: total {record['total']:.5f}, L_p {record['photometric']:.5f}, "
                 f"L_Dis {dis:.5f}")
    return record


def _ordered_loader(dataset: NightSequenceDataset, batch_size: int, num_workers: int = 0) -> DataLoader:
    return DataLoader(dataset, batch_size=batch_size, shuffle=False,
                      collate_fn=collate_triplets, num_workers=num_workers)


def needs_calibration(config: TrainConfig) -> bool:
    return (config.mask_mode != "none" and config.mask_statistics == "pooled"
            and config.mask_a is None)


def calibrate_mask(state: TrainState, dataset: NightSequenceDataset) -> BridgeParams:
    """Pooled bridge bounds from every target frame's illumination (or luminance)."""
    config = state.config
    histogram_mode = config.mask_mode == "histogram"
    state.eval()

    def samples():
        with torch.no_grad():
            for batch in _ordered_loader(dataset, config.batch_size, config.num_workers):
                target = batch.target.to(state.device)
                if histogram_mode:
                    yield luminance(target)
                else:
                    yield sie_forward(state.enhancer, target).illum_first_stage

    value_range = (0.0, 1.0) if histogram_mode else (EPS_ILLUM, 1.0)
    params = calibrate_bounds(samples(), config.mask_lo_pct, config.mask_hi_pct,
                              config.mask_p, config.mask_q, value_range=value_range)
    state.mask_params = params
    return params


def predict_frame_depth(state: TrainState, night: torch.Tensor):
    """(depth, enhanced, illumination) for B×3×H×W night frames, no gradients."""
    with torch.no_grad():
        enhanced, illumination, _, _ = _enhance(state, night)
        depth = predict_depth(state.depth_net, state.denoiser(enhanced))
    return depth, enhanced, illumination


def enhance_frame(state: TrainState, night: torch.Tensor):
    """(enhanced, illumination, mask) for B×3×H×W night frames."""
    state.eval()
    with torch.no_grad():
        enhanced, illumination, _, _ = _enhance(state, night)
        if state.config.mask_mode == "none" or (state.mask_params is None
                                                and state.config.mask_statistics == "pooled"):
            x = illumination if illumination is not None else luminance(night)
            mask = uncertainty_mask(x, None, "per_image", state.config.mask_lo_pct, state.config.mask_hi_pct,
                                    state.config.mask_p, state.config.mask_q)
        else:
            mask = compute_mask(state, night, illumination)
    return enhanced, illumination, mask


def evaluate(state: TrainState, dataset: NightSequenceDataset, protocol: EvalProtocol = EvalProtocol(),
             beam_count: int = 32, azimuth_step: float = DEFAULT_AZIMUTH_STEP) -> Dict[str, float]:
    """
    Metrics over every target frame of ``dataset``. In sparse mode a frame
    whose returns all fall outside the protocol caps is skipped with a warning.

    Returns:
        the seven standard metrics, ``rmse_under``/``rmse_over`` when the
        dataset carries region masks, and ``frames``
    """
    state.eval()
    accumulator = MetricAccumulator(protocol)
    skipped = 0
    for batch in _ordered_loader(dataset, state.config.batch_size):
        depth, _, _ = predict_frame_depth(state, batch.target.to(state.device))
        for i in range(batch.batch_size):
            gt_dense = batch.depth[i, 0].numpy()
            gt = sparsify(gt_dense, batch.intrinsics, beam_count, azimuth_step) \
                if protocol.gt_mode == "sparse" else gt_dense
            if protocol.gt_mode == "sparse" and valid_count(gt, protocol) == 0:
                logger.warning(f"Frame {accumulator.count + skipped} has no LiDAR return in range, skipped")
                skipped += 1
                continue
            regions = {}
            if batch.mask_under is not None:
                regions["under"] = batch.mask_under[i, 0].numpy()
            if batch.mask_over is not None:
                regions["over"] = batch.mask_over[i, 0].numpy()
            accumulator.add(depth[i, 0], gt, regions, dense_gt=gt_dense)
    row = accumulator.as_row()
    logger.info(f"Evaluated {accumulator.count} frames ({protocol.gt_mode} GT): "
                f"abs_rel {row['abs_rel']:.4f}, a1 {row['a1']:.4f}")
    return row


def evaluate_checkpoint(checkpoint: Union[str, Path], data_root: Union[str, Path],
                        protocol: EvalProtocol = EvalProtocol(), device: Optional[str] = None,
                        beam_count: int = 32) -> Dict[str, float]:
    state = load_checkpoint(checkpoint, device=device)
    return evaluate(state, NightSequenceDataset(data_root), protocol, beam_count)


def eval_protocol(config: TrainConfig) -> EvalProtocol:
    return EvalProtocol(max_depth=config.eval_max_depth, min_depth=config.min_depth,
                        median_scaling=config.eval_median_scaling, gt_mode=config.eval_gt_mode)


def _pretrain_enhancer(state: TrainState, dataset: NightSequenceDataset) -> None:
    """SIE-only warm start; the enhancer stays frozen afterwards unless training is joint."""
    config = state.config
    images = [batch.target.to(state.device)
              for batch in _ordered_loader(dataset, config.batch_size, config.num_workers)]
    state.enhancer.requires_grad_(True)
    state.enhancer.train()
    try:
        pretrain_enhancer(state.enhancer, images, config.enhancer_pretrain_steps,
                          beta=config.beta, gamma=config.gamma)
    finally:
        state.enhancer.requires_grad_(state.enhancer_trainable)
        state.enhancer.train(state.enhancer_trainable)


def _dump_samples(state: TrainState, dataset: NightSequenceDataset, output_dir: Path) -> None:
    batch = collate_triplets([dataset[0]]).to(state.device)
    state.eval()
    with torch.no_grad():
        enhanced, illumination, mask = enhance_frame(state, batch.target)
        depth = predict_depth(state.depth_net, state.denoiser(enhanced))
    panels = qualitative_panels(batch.target, enhanced, depth, illumination, mask,
                                state.config.min_depth, state.config.max_depth)
    dump_qualitative(output_dir, f"epoch{state.epoch:03d}", panels)


def train_loop(config: TrainConfig, dataset: NightSequenceDataset, run_dir: Union[str, Path],
               eval_dataset: Optional[NightSequenceDataset] = None, resume: Optional[Union[str, Path]] = None,
               allow_config_override: bool = False) -> TrainState:
    """
    Epoch loop with per-epoch mask calibration, periodic evaluation, CSV logs
    and a checkpoint after every epoch.

    Raises:
        ValidationError: resume with a mismatched config (unless overridden)
        NonFiniteLossError: training diverged
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(run_dir / "config.txt", config)
    if resume is not None:
        state = load_checkpoint(resume, config, allow_config_override)
    else:
        state = build_state(config)

    if (config.enhancer_mode != "none" and config.enhancer_pretrain_steps > 0
            and not config.enhancer_checkpoint and state.step == 0):
        _pretrain_enhancer(state, dataset)

    steps_log = CsvLog(run_dir / STEPS_LOG)
    eval_log = CsvLog(run_dir / EVAL_LOG)
    protocol = eval_protocol(config)
    logger.info(f"Training {config.epochs} epochs on {len(dataset)} triplets into {run_dir}")

    for epoch in range(state.epoch, config.epochs):
        if needs_calibration(config):
            calibrate_mask(state, dataset)
        loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=True, collate_fn=collate_triplets,
                            num_workers=config.num_workers,
                            generator=torch.Generator().manual_seed(config.seed + epoch))
        total_steps = len(loader) if config.max_steps_per_epoch is None else min(len(loader), config.max_steps_per_epoch)
        bar = tqdm(total=total_steps, desc=f"epoch {epoch + 1}/{config.epochs}", disable=not config.progress)
        for index, batch in enumerate(loader):
            if index >= total_steps:
                break
            record = train_step(batch.to(state.device), state)
            steps_log.append(record)
            bar.update(1)
            bar.set_postfix(total=f"{record['total']:.4f}")
        bar.close()
        state.epoch = epoch + 1

        if eval_dataset is not None and state.epoch % config.eval_every == 0:
            row = {"epoch": state.epoch, "step": state.step}
            row.update(evaluate(state, eval_dataset, protocol))
            state.history.append(row)
            eval_log.append(row)
        if config.dump_qualitative:
            _dump_samples(state, eval_dataset or dataset, Path(config.output_dir or run_dir) / "qualitative")
        save_checkpoint(run_dir / LAST_CHECKPOINT, state)
        logger.info(f"Epoch {state.epoch} finished at step {state.step}")
    return state
