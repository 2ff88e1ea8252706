import logging

import numpy as np
import pytest
import torch

from nightdepth.data.synthdata import (
    Blob,
    NightDegradation,
    SyntheticSetConfig,
    _blob_tracks,
    degrade_night,
    generate_sequence,
    ground_plane_depth,
    is_degenerate_trajectory,
    make_scene,
    render_frame,
    render_sequence,
    visibility_mask,
)
from nightdepth.geometry.camera import RigidPose, relative_pose
from nightdepth.geometry.reprojection import reconstruct
from nightdepth.utils.validation import ValidationError


def _street(speed=0.5, frames=2, width=96, height=64, cars=0, poles=0):
    return make_scene(seed=3, frame_count=frames, width=width, height=height, speed=speed, cars=cars,
                      poles=poles, yaw_jitter_deg=0.0, lateral_jitter=0.0)


def test_same_seed_gives_identical_sequences():
    config = SyntheticSetConfig(num_sequences=1, frames_per_sequence=3, width=48, height=32)
    first = generate_sequence(config, 0, seed=42)
    second = generate_sequence(config, 0, seed=42)
    for a, b in zip(first.night_frames + first.depths, second.night_frames + second.depths):
        assert np.array_equal(a, b)
    assert np.array_equal(first.cam_to_world, second.cam_to_world)
    other = generate_sequence(config, 0, seed=43)
    assert not np.array_equal(first.night_frames[0], other.night_frames[0])


def test_depth_range_and_pairing(tiny_sequences):
    for record in tiny_sequences:
        assert len(record.day_frames) == len(record.night_frames) == len(record.depths)
        for depth in record.depths:
            assert depth.dtype == np.float32
            assert float(depth.min()) > 0.5 and float(depth.max()) < 120.0


def test_ground_rows_follow_pinhole_formula():
    spec = _street()
    K = spec.intrinsics
    _, depth = render_frame(spec, spec.cam_to_world[0])
    centre = int(K.cx)
    rows = np.arange(int(K.cy) + 8, K.height)
    expected = ground_plane_depth(rows, K, spec.camera_height)
    assert np.allclose(depth[rows, centre], expected, rtol=1e-5)


def test_static_camera_is_degenerate(caplog):
    spec = _street(speed=0.0, frames=2)
    assert is_degenerate_trajectory(spec.cam_to_world)
    with caplog.at_level(logging.WARNING):
        rendered = render_sequence(spec)
    assert "never moves" in caplog.text
    assert np.array_equal(rendered.frames[0], rendered.frames[1])
    assert np.allclose(relative_pose(rendered.cam_to_world[0], rendered.cam_to_world[1]), np.eye(4))


def test_forward_motion_on_ground_matches_plane_scaling():
    spec = _street(speed=1.0)
    K = spec.intrinsics
    _, depth0 = render_frame(spec, spec.cam_to_world[0])
    pose = relative_pose(spec.cam_to_world[0], spec.cam_to_world[1])
    assert np.allclose(pose[:3, 3], [0.0, 0.0, -1.0])
    # A ground point at target row v lands at row cy + (v − cy)·d/(d − 1) in the source.
    v = K.height - 1
    d = float(depth0[v, int(K.cx)])
    point = d * np.array([0.0, (v - K.cy) / K.fy, 1.0]) + pose[:3, 3]
    assert K.fy * point[1] / point[2] + K.cy == pytest.approx(K.cy + (v - K.cy) * d / (d - 1.0), rel=1e-9)


def test_ground_truth_warp_beats_perturbed_depth():
    spec = _street(speed=2.0, cars=3, poles=2)
    K = spec.intrinsics
    target, depth_t = render_frame(spec, spec.cam_to_world[0])
    source, depth_s = render_frame(spec, spec.cam_to_world[1])
    pose = relative_pose(spec.cam_to_world[0], spec.cam_to_world[1])
    visible = torch.from_numpy(visibility_mask(depth_t, depth_s, pose, K))

    src = torch.from_numpy(source).permute(2, 0, 1)[None].double()
    tgt = torch.from_numpy(target).permute(2, 0, 1)[None].double()
    rigid = RigidPose(torch.from_numpy(pose))

    def error(depth):
        recon, valid = reconstruct(src, torch.from_numpy(depth)[None, None].double(), rigid, K)
        keep = visible & valid[0]
        return float((recon - tgt).abs().mean(dim=1)[0][keep].mean())

    gt_error = error(depth_t.astype(np.float64))
    rng = np.random.default_rng(0)
    wins = 0
    for _ in range(20):
        factor = rng.choice([rng.uniform(0.7, 0.9), rng.uniform(1.1, 1.3)])
        wins += gt_error < error(depth_t.astype(np.float64) * factor)
    assert wins >= 19


def test_identity_degradation_is_a_no_op(tiny_sequences):
    frame = tiny_sequences[0].day_frames[0]
    night, under, over = degrade_night(frame, NightDegradation.identity())
    assert np.array_equal(night, frame)
    assert not under.any() and not over.any()


def test_square_blob_marks_its_square():
    frame = np.full((20, 24, 3), 0.2)
    blob = Blob(center=(10, 8), radius=3, shape="square")
    deg = NightDegradation(gamma=1.0, dark_floor=1.0, light_pools=0, noise_sigma=0.0, blobs=(blob,))
    night, _, over = degrade_night(frame, deg)
    expected = np.zeros((20, 24), dtype=bool)
    expected[5:12, 7:14] = True
    assert np.array_equal(over, expected)
    assert night[8, 10].min() >= 0.98


def test_darkening_field_lowers_luminance(tiny_sequences):
    frame = tiny_sequences[0].day_frames[1]
    deg = NightDegradation(gamma=1.0, dark_floor=0.3, light_pools=2, noise_sigma=0.0)
    assert deg.illumination_field(*frame.shape[:2]).max() <= 1.0 + 1e-12
    night, _, _ = degrade_night(frame, deg)
    assert night.mean() < frame.mean()
    assert 0.0 <= night.min() and night.max() <= 1.0


def test_generated_night_frames_are_dark_with_bright_blobs(tiny_sequences):
    record = tiny_sequences[0]
    assert np.mean(record.night_frames[0]) < np.mean(record.day_frames[0])
    over = record.over_masks[0]
    if over.any():
        assert record.night_frames[0][over].mean() >= 0.98


def test_read_noise_lands_on_saturated_blob_cores():
    frame = np.full((20, 24, 3), 0.5)
    blob = Blob(center=(10.0, 8.0), radius=4.0, shape="square")
    deg = NightDegradation(gamma=1.0, dark_floor=0.3, light_pools=0, noise_sigma=0.05, blobs=(blob,), seed=3)
    night, _, over = degrade_night(frame, deg)
    core = night[over]
    assert core.min() < 1.0
    assert core.mean() >= 0.97


def test_blob_tracks_keep_pace_and_stay_in_frame():
    config = SyntheticSetConfig(num_sequences=1, frames_per_sequence=40, height=32, width=48,
                                cars=1, poles=2, blobs_per_sequence=3)
    tracks = _blob_tracks(config, np.random.default_rng(0))
    for track in tracks:
        centres = np.array([track.at(k).center for k in range(config.frames_per_sequence)])
        steps = np.abs(np.diff(centres[:, 0]))
        assert np.median(steps) >= 0.025 * config.width - 1e-9
        assert centres[:, 0].min() >= 0.0 and centres[:, 0].max() <= config.width - 1
        assert centres[:, 1].min() >= 0.0 and centres[:, 1].max() <= config.height - 1


def test_blob_rejects_unknown_shape():
    with pytest.raises(ValidationError):
        Blob(center=(0, 0), radius=1, shape="star")
