import dataclasses

import pytest
import torch

from nightdepth.data.dataset_io import TripletBatch
from nightdepth.evaluation.metrics import METRIC_NAMES, EvalProtocol
from nightdepth.geometry.camera import RigidPose
from nightdepth.losses.photometric import masked_photometric, reprojection_loss, smoothness_loss
from nightdepth.tests.conftest import parameter_hash, same_parameters
from nightdepth.training.checkpoint import load_checkpoint
from nightdepth.training.config import TrainConfig
from nightdepth.training.state import build_state
from nightdepth.training.trainer import (
    EVAL_LOG,
    LAST_CHECKPOINT,
    STEPS_LOG,
    calibrate_mask,
    discriminator_phase,
    enhance_frame,
    evaluate,
    forward_joint,
    needs_calibration,
    train_loop,
    train_step,
)
from nightdepth.utils.validation import NonFiniteLossError, ValidationError

PLAIN = dict(enhancer_mode="none", mask_mode="none", denoiser="identity", rho=0.0, xi=0.0)


def _identity_poses(batch: TripletBatch):
    return (RigidPose.identity(batch.batch_size), RigidPose.identity(batch.batch_size))


def test_train_step_is_deterministic(fast_config, tiny_batch):
    records = [train_step(tiny_batch, build_state(fast_config)) for _ in range(2)]
    assert records[0] == records[1]
    assert set(records[0]) >= {"step", "epoch", "fidelity", "illum_smoothness", "photometric",
                               "smoothness", "generator", "sie", "depth", "total", "discriminator"}


def test_total_recombines_from_logged_terms(fast_config, tiny_batch):
    record = train_step(tiny_batch, build_state(fast_config))
    c = fast_config
    sie = c.beta * record["fidelity"] + c.gamma * record["illum_smoothness"]
    depth = c.lambda_ * record["photometric"] + c.mu * record["smoothness"]
    assert record["sie"] == pytest.approx(sie, abs=1e-9)
    assert record["depth"] == pytest.approx(depth, abs=1e-9)
    assert record["total"] == pytest.approx(c.eta * sie + c.zeta * depth + c.xi * record["generator"], abs=1e-9)


def test_without_adversarial_terms_discriminator_is_untouched(fast_config, tiny_batch):
    state = build_state(fast_config.with_overrides({"xi": 0.0, "rho": 0.0}))
    before = parameter_hash(state.discriminator)
    record = train_step(tiny_batch, state)
    assert state.prior is None
    assert record["discriminator"] == 0.0
    assert same_parameters(before, state.discriminator)


def test_generator_phase_leaves_discriminator_alone(fast_config, tiny_batch):
    state = build_state(fast_config)
    before = parameter_hash(state.discriminator)
    depth_before = parameter_hash(state.depth_net)
    bundle = forward_joint(tiny_batch, state)
    state.discriminator.requires_grad_(False)
    state.gen_optimizer.zero_grad()
    bundle.total.backward()
    state.gen_optimizer.step()
    assert same_parameters(before, state.discriminator)
    assert not same_parameters(depth_before, state.depth_net)


def test_discriminator_phase_only_moves_the_discriminator(fast_config, tiny_batch):
    state = build_state(fast_config)
    generator_before = [parameter_hash(m) for m in (state.enhancer, state.depth_net, state.pose_net)]
    disc_before = parameter_hash(state.discriminator)
    night_depth = torch.full_like(tiny_batch.depth, 10.0)
    loss = discriminator_phase(tiny_batch, night_depth, state)
    assert loss > 0
    for before, module in zip(generator_before, (state.enhancer, state.depth_net, state.pose_net)):
        assert same_parameters(before, module)
    assert not same_parameters(disc_before, state.discriminator)


@pytest.mark.parametrize("mode, moves", [("joint", True), ("separate", False)])
def test_enhancer_trains_only_in_joint_mode(fast_config, tiny_batch, mode, moves):
    state = build_state(fast_config.with_overrides({"enhancer_mode": mode}))
    before = parameter_hash(state.enhancer)
    train_step(tiny_batch, state)
    assert same_parameters(before, state.enhancer) is not moves


def test_plain_depth_loss_matches_direct_computation(tiny_batch):
    state = build_state(TrainConfig(**PLAIN))
    depth = tiny_batch.depth
    bundle = forward_joint(tiny_batch, state, depth_override=depth, poses_override=tiny_batch.poses)

    prev_frame, target, next_frame = tiny_batch.night
    per_pixel, validity = reprojection_loss(target, (prev_frame, next_frame), depth, tiny_batch.poses,
                                            tiny_batch.intrinsics, state.photometric)
    expected = masked_photometric(per_pixel, torch.ones_like(per_pixel), validity)
    assert float(bundle.photometric) == pytest.approx(float(expected), abs=1e-7)
    assert torch.equal(bundle.mask, torch.ones_like(bundle.mask))
    assert float(bundle.fidelity) == 0.0 and float(bundle.illum_smoothness) == 0.0

    lds = smoothness_loss(depth, target)
    assert float(bundle.depth_loss) == pytest.approx(float(expected) + 0.001 * float(lds), abs=1e-7)


def test_ground_truth_geometry_beats_identity_poses(day_batch):
    state = build_state(TrainConfig(**PLAIN))
    truth = forward_joint(day_batch, state, depth_override=day_batch.depth, poses_override=day_batch.poses)
    frozen = forward_joint(day_batch, state, depth_override=day_batch.depth,
                           poses_override=_identity_poses(day_batch))
    assert float(truth.photometric) < float(frozen.photometric)


def test_mixed_sequence_batch_is_rejected(fast_config, tiny_batch):
    ids = [("seq_000", "seq_000", "seq_001")] + tiny_batch.sequence_ids[1:]
    with pytest.raises(ValidationError):
        forward_joint(dataclasses.replace(tiny_batch, sequence_ids=ids), build_state(fast_config))


def test_random_frames_give_finite_non_negative_terms(fast_config, tiny_batch):
    generator = torch.Generator().manual_seed(0)
    state = build_state(fast_config)
    for _ in range(3):
        night = tuple(torch.rand(f.shape, generator=generator) for f in tiny_batch.night)
        bundle = forward_joint(dataclasses.replace(tiny_batch, night=night), state)
        for name, value in bundle.terms().items():
            assert bool(torch.isfinite(value)), name
            assert float(value) >= 0.0, name


def test_nan_discriminator_raises(fast_config, tiny_batch):
    state = build_state(fast_config)
    with torch.no_grad():
        state.discriminator.model[0].weight.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as excinfo:
        train_step(tiny_batch, state)
    assert excinfo.value.field == "generator"


def test_calibration_sets_pooled_bounds(tiny_dataset):
    config = TrainConfig(batch_size=4, mask_mode="histogram")
    assert needs_calibration(config)
    state = build_state(config)
    params = calibrate_mask(state, tiny_dataset)
    assert 0.0 <= params.a < params.b <= 1.0
    assert state.mask_params == params
    assert not needs_calibration(config.with_overrides({"mask_a": 0.1, "mask_b": 0.5}))


def test_illumination_calibration(tiny_dataset):
    state = build_state(TrainConfig(batch_size=4))
    params = calibrate_mask(state, tiny_dataset)
    assert params.a < params.b


def test_enhance_frame_outputs(fast_config, tiny_batch):
    state = build_state(fast_config)
    enhanced, illumination, mask = enhance_frame(state, tiny_batch.target)
    assert enhanced.shape == tiny_batch.target.shape
    assert illumination.shape == (2, 1, 32, 48)
    assert float(mask.min()) > 0.0 and float(mask.max()) <= 1.0


@pytest.mark.parametrize("gt_mode", ["dense", "sparse"])
def test_evaluate_reports_every_metric(fast_config, tiny_dataset, gt_mode):
    row = evaluate(build_state(fast_config), tiny_dataset, EvalProtocol(gt_mode=gt_mode))
    for name in METRIC_NAMES:
        assert name in row
    assert "rmse_under" in row and "rmse_over" in row
    assert row["frames"] == len(tiny_dataset)
    assert 0.0 <= row["a1"] <= 1.0


def _smoke_config():
    return TrainConfig(batch_size=2, epochs=1, max_steps_per_epoch=2, mask_a=0.2, mask_b=0.8, seed=0)


def test_train_loop_writes_logs_and_checkpoint(tmp_path, tiny_dataset):
    state = train_loop(_smoke_config(), tiny_dataset, tmp_path / "run", eval_dataset=tiny_dataset)
    run = tmp_path / "run"
    assert (run / "config.txt").is_file()
    assert len((run / STEPS_LOG).read_text().splitlines()) == 3
    assert len((run / EVAL_LOG).read_text().splitlines()) == 2
    assert (state.step, state.epoch) == (2, 1)
    reloaded = load_checkpoint(run / LAST_CHECKPOINT)
    assert (reloaded.step, reloaded.epoch) == (2, 1)
    assert len(reloaded.history) == len(state.history) == 1


def test_train_loop_is_reproducible(tmp_path, tiny_dataset):
    for name in ("a", "b"):
        train_loop(_smoke_config(), tiny_dataset, tmp_path / name)
    assert (tmp_path / "a" / STEPS_LOG).read_text() == (tmp_path / "b" / STEPS_LOG).read_text()


def test_resume_continues_from_checkpoint(tmp_path, tiny_dataset):
    run = tmp_path / "run"
    train_loop(_smoke_config(), tiny_dataset, run)
    longer = _smoke_config().with_overrides({"epochs": 2})
    state = train_loop(longer, tiny_dataset, run, resume=run / LAST_CHECKPOINT)
    assert (state.step, state.epoch) == (4, 2)
    assert len((run / STEPS_LOG).read_text().splitlines()) == 5

    with pytest.raises(ValidationError):
        train_loop(longer.with_overrides({"lr": 1e-3}), tiny_dataset, run, resume=run / LAST_CHECKPOINT)
