import math

import numpy as np
import pytest

from nightdepth.data.synthdata import ground_plane_depth, make_scene, render_frame
from nightdepth.evaluation.metrics import (
    METRIC_NAMES,
    DepthMetrics,
    EvalProtocol,
    MetricAccumulator,
    compute_metrics,
    regionwise_rmse,
    valid_count,
)
from nightdepth.evaluation.report import CsvLog, format_metrics_table, write_metrics_csv
from nightdepth.evaluation.sparsify import LidarModel, SparseDepth, beam_directions, depth_edges, sparsify
from nightdepth.geometry.camera import CameraIntrinsics
from nightdepth.utils.validation import ValidationError

RAW = EvalProtocol(median_scaling=False)
IDEAL = LidarModel.ideal()
UNCAPPED = EvalProtocol(max_depth=100.0)
UNCAPPED_RAW = EvalProtocol(max_depth=100.0, median_scaling=False)


@pytest.fixture
def camera():
    return CameraIntrinsics.from_normalized(0.58, 1.92, 0.5, 0.5, 48, 32)


@pytest.fixture
def frame():
    rng = np.random.default_rng(0)
    gt = rng.uniform(1.0, 80.0, (32, 48))
    pred = gt * rng.uniform(0.7, 1.3, gt.shape)
    return pred, gt


def test_four_point_oracle():
    g = np.array([1.0, 2.0, 4.0, 8.0])
    p = np.array([1.0, 3.0, 4.0, 4.0])
    m = compute_metrics(p, g, RAW)
    assert m.abs_rel == pytest.approx(0.25, abs=1e-12)
    assert m.sq_rel == pytest.approx(0.625, abs=1e-12)
    assert m.rmse == pytest.approx(math.sqrt(4.25), abs=1e-12)
    assert m.rmse_log == pytest.approx(math.sqrt((math.log(1.5) ** 2 + math.log(2.0) ** 2) / 4), abs=1e-12)
    assert (m.a1, m.a2, m.a3) == (0.5, 0.75, 0.75)


def test_perfect_prediction(frame):
    _, gt = frame
    m = compute_metrics(gt.copy(), gt)
    assert m.abs_rel == pytest.approx(0.0, abs=1e-12)
    assert m.rmse == pytest.approx(0.0, abs=1e-12)
    assert (m.a1, m.a2, m.a3) == (1.0, 1.0, 1.0)


def test_median_scaling_removes_global_scale(frame):
    pred, gt = frame
    reference = compute_metrics(pred, gt)
    for scale in np.geomspace(0.01, 100.0, 10):
        scaled = compute_metrics(pred * scale, gt)
        for name in METRIC_NAMES:
            assert getattr(scaled, name) == pytest.approx(getattr(reference, name), rel=1e-9, abs=1e-12)


def test_empty_valid_set_is_rejected():
    gt = np.full((4, 4), 90.0)
    with pytest.raises(ValidationError):
        compute_metrics(np.ones((4, 4)), gt)


def test_non_positive_prediction_is_rejected(frame):
    pred, gt = frame
    pred = pred.copy()
    pred[0, 0] = 0.0
    with pytest.raises(ValidationError):
        compute_metrics(pred, gt)


def test_shape_mismatch_is_rejected(frame):
    pred, gt = frame
    with pytest.raises(ValidationError):
        compute_metrics(pred[:, :-1], gt)


def test_lower_cap_never_adds_points(frame):
    _, gt = frame
    counts = [valid_count(gt, EvalProtocol(max_depth=cap)) for cap in (80.0, 60.0, 40.0, 20.0, 5.0)]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] == gt.size


def test_protocol_validation():
    with pytest.raises(ValidationError):
        EvalProtocol(min_depth=10.0, max_depth=5.0)
    with pytest.raises(ValidationError):
        EvalProtocol(gt_mode="semi-dense")


def test_region_over_whole_frame_equals_rmse(frame):
    pred, gt = frame
    whole = np.ones_like(gt, dtype=bool)
    assert regionwise_rmse(pred, gt, whole) == pytest.approx(compute_metrics(pred, gt).rmse, abs=1e-12)


def test_single_pixel_region_is_absolute_error(frame):
    pred, gt = frame
    mask = np.zeros_like(gt, dtype=bool)
    mask[3, 7] = True
    expected = abs(pred[3, 7] - gt[3, 7])
    assert regionwise_rmse(pred, gt, mask, UNCAPPED_RAW) == pytest.approx(expected, abs=1e-12)


def test_regions_partition_the_frame(frame):
    pred, gt = frame
    left = np.zeros_like(gt, dtype=bool)
    left[:, :20] = True
    total = compute_metrics(pred, gt, UNCAPPED).rmse ** 2 * gt.size
    parts = (regionwise_rmse(pred, gt, left, UNCAPPED) ** 2 * left.sum()
             + regionwise_rmse(pred, gt, ~left, UNCAPPED) ** 2 * (~left).sum())
    assert parts == pytest.approx(total, rel=1e-9)


def test_empty_region_is_rejected(frame):
    pred, gt = frame
    with pytest.raises(ValidationError):
        regionwise_rmse(pred, gt, np.zeros_like(gt, dtype=bool))


def test_accumulator_averages_frames_and_pools_regions(frame):
    pred, gt = frame
    mask = np.zeros_like(gt, dtype=bool)
    mask[:4] = True
    acc = MetricAccumulator(UNCAPPED_RAW)
    first = acc.add(pred, gt, regions={"over": mask})
    second = acc.add(gt.copy(), gt, regions={"over": mask})
    assert acc.summary().rmse == pytest.approx((first.rmse + second.rmse) / 2)
    sq = (pred[mask] - gt[mask]) ** 2
    expected = math.sqrt(np.concatenate([sq, np.zeros_like(sq)]).mean())
    row = acc.as_row()
    assert row["rmse_over"] == pytest.approx(expected)
    assert row["frames"] == 2


def test_mean_of_nothing_is_rejected():
    with pytest.raises(ValidationError):
        DepthMetrics.mean([])


def test_sparse_points_are_read_from_dense(camera):
    gt = np.random.default_rng(1).uniform(1.0, 50.0, (camera.height, camera.width))
    sparse = sparsify(gt, camera, beam_count=16, model=IDEAL)
    assert len(sparse) > 0
    assert np.array_equal(sparse.depths, gt[sparse.rows, sparse.cols])
    dense = sparse.to_dense()
    assert np.count_nonzero(dense) == len(sparse)


def test_sparse_coverage_matches_brute_force(camera):
    gt = np.ones((camera.height, camera.width))
    sparse = sparsify(gt, camera, beam_count=32, azimuth_step=2.5, model=IDEAL)
    hits = set()
    for x, y, z in beam_directions(32, 2.5):
        if z <= 1e-9:
            continue
        u = int(np.round(camera.fx * x / z + camera.cx))
        v = int(np.round(camera.fy * y / z + camera.cy))
        if 0 <= u < camera.width and 0 <= v < camera.height:
            hits.add((v, u))
    assert len(sparse) == len(hits)
    assert sparse.coverage == pytest.approx(len(hits) / gt.size)


def test_dense_pattern_saturates_coverage(camera):
    gt = np.ones((camera.height, camera.width))
    sparse = sparsify(gt, camera, beam_count=256, azimuth_step=0.25, elevation_range=(-60.0, 60.0), model=IDEAL)
    assert sparse.coverage > 0.95
    assert sparse.coverage <= 1.0


def test_invalid_depths_are_dropped(camera):
    gt = np.ones((camera.height, camera.width))
    gt[:, :24] = 0.0
    sparse = sparsify(gt, camera, model=IDEAL)
    assert len(sparse) > 0
    assert bool((sparse.cols >= 24).all())


def test_pattern_outside_image_is_rejected(camera):
    with pytest.raises(ValidationError) as excinfo:
        sparsify(np.ones((camera.height, camera.width)), camera, elevation_range=(50.0, 60.0))
    assert excinfo.value.suggestions


def test_sparse_ground_truth_drives_metrics(camera):
    gt = np.random.default_rng(2).uniform(1.0, 50.0, (camera.height, camera.width))
    sparse = sparsify(gt, camera, model=IDEAL)
    pred = gt * 1.1
    m = compute_metrics(pred, sparse, RAW)
    assert m.abs_rel == pytest.approx(0.1, abs=1e-12)
    assert valid_count(sparse, RAW) == len(sparse)
    assert isinstance(sparse, SparseDepth)


def _ground(camera):
    rows = np.arange(camera.height, dtype=np.float64)[:, None]
    depth = np.where(rows > camera.cy + 0.5, ground_plane_depth(np.maximum(rows, camera.cy + 1), camera), np.inf)
    return np.broadcast_to(depth, (camera.height, camera.width)).copy()


def test_ideal_model_keeps_every_ring_pixel_of_a_scene(camera):
    gt = np.full((camera.height, camera.width), 20.0)
    gt[:, 24] = 8.0
    ideal = sparsify(gt, camera, model=IDEAL)
    assert 24 in set(ideal.cols.tolist())
    assert np.array_equal(ideal.depths, gt[ideal.rows, ideal.cols])


def test_thin_pole_returns_are_dropped(camera):
    gt = np.full((camera.height, camera.width), 20.0)
    gt[:, 24] = 8.0
    sparse = sparsify(gt, camera)
    assert len(sparse) > 0
    assert not np.isin(sparse.cols, [23, 24, 25]).any()
    assert np.all(sparse.depths == 20.0)


def test_depth_edges_flag_jumps_but_not_planes(camera):
    v, u = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    plane = 1.0 / (0.01 * u + 0.02 * v + 0.05)
    assert not depth_edges(plane, 0.1).any()
    step = np.full(plane.shape, 20.0)
    step[:, 24] = 8.0
    edges = depth_edges(step, 0.1)
    assert edges[:, 23:26].all()
    assert not edges[:, :22].any() and not edges[:, 27:].any()


def test_returns_beyond_range_are_lost(camera):
    gt = np.full((camera.height, camera.width), 20.0)
    gt[:, :24] = 60.0
    sparse = sparsify(gt, camera, model=LidarModel(max_range=40.0))
    assert len(sparse) > 0
    assert np.all(sparse.depths == 20.0)
    assert 60.0 in set(sparsify(gt, camera, model=IDEAL).depths.tolist())
    with pytest.raises(ValidationError):
        LidarModel(max_range=0.0)


def test_grazing_ground_returns_are_dropped(camera):
    gt = _ground(camera)
    model = LidarModel()
    grazing = sparsify(gt, camera, model=LidarModel(min_incidence=0.0))
    sparse = sparsify(gt, camera, model=model)
    assert len(sparse) > 0
    assert sparse.depths.max() < grazing.depths.max()
    points = np.stack([(sparse.cols - camera.cx) / camera.fx, (sparse.rows - camera.cy) / camera.fy,
                       np.ones(len(sparse))], axis=-1) * sparse.depths[:, None]
    offsets = points - np.asarray(model.sensor_offset)
    # ground normal is the y axis
    assert np.all(np.abs(offsets[:, 1]) / np.linalg.norm(offsets, axis=-1) >= model.min_incidence - 1e-9)


def test_returns_hidden_behind_a_foreground_block_are_dropped(camera):
    gt = np.full((camera.height, camera.width), 20.0)
    gt[20:] = 5.0
    beam = dict(beam_count=1, elevation_range=(-5.33, -5.33))
    seen = sparsify(gt, camera, model=LidarModel(min_incidence=0.0, edge_tolerance=None), **beam)
    all_hits = sparsify(gt, camera, model=LidarModel(min_incidence=0.0, edge_tolerance=None,
                                                     occlusion_tolerance=None), **beam)
    seen_pixels = set(zip(seen.rows.tolist(), seen.cols.tolist()))
    hit_pixels = set(zip(all_hits.rows.tolist(), all_hits.cols.tolist()))
    assert seen_pixels < hit_pixels
    assert all(row >= 20 for row, _ in hit_pixels - seen_pixels)


def test_street_returns_are_a_sparse_subset_within_range():
    spec = make_scene(seed=4, frame_count=1)
    _, depth = render_frame(spec, spec.cam_to_world[0])
    sparse = sparsify(depth, spec.intrinsics)
    assert 0 < sparse.coverage < 0.05
    assert np.array_equal(sparse.depths, depth[sparse.rows, sparse.cols].astype(np.float64))
    assert sparse.depths.max() <= 40.0
    assert len(sparse) < len(sparsify(depth, spec.intrinsics, model=IDEAL))


def test_explicit_region_scale_overrides_frame_median(frame):
    pred, gt = frame
    mask = np.zeros_like(gt, dtype=bool)
    mask[:5] = True
    expected = math.sqrt(np.mean((2.0 * pred[mask] - gt[mask]) ** 2))
    assert regionwise_rmse(pred, gt, mask, UNCAPPED, scale=2.0) == pytest.approx(expected)
    assert regionwise_rmse(pred, gt, mask, UNCAPPED_RAW, scale=2.0) == pytest.approx(
        math.sqrt(np.mean((pred[mask] - gt[mask]) ** 2)))


def test_sparse_accumulator_scales_regions_by_sparse_median(camera):
    rng = np.random.default_rng(5)
    gt = rng.uniform(1.0, 50.0, (camera.height, camera.width))
    pred = gt * rng.uniform(0.5, 1.5, gt.shape) * 3.0
    sparse = sparsify(gt, camera, model=IDEAL)
    mask = np.zeros_like(gt, dtype=bool)
    mask[20:] = True
    acc = MetricAccumulator(EvalProtocol(max_depth=100.0, gt_mode="sparse"))
    acc.add(pred, sparse, regions={"under": mask}, dense_gt=gt)
    scale = np.median(sparse.depths) / np.median(pred[sparse.rows, sparse.cols])
    expected = math.sqrt(np.mean((pred[mask] * scale - gt[mask]) ** 2))
    assert acc.region_rmse()["rmse_under"] == pytest.approx(expected)


def test_table_lists_runs_and_extra_columns():
    metrics = DepthMetrics(0.1, 0.2, 3.0, 0.15, 0.9, 0.95, 0.99)
    row = {**metrics.as_dict(), "rmse_over": 4.5}
    table = format_metrics_table({"joint": metrics, "full": row})
    lines = table.splitlines()
    assert "abs_rel" in lines[0] and "rmse_over" in lines[0]
    assert lines[2].startswith("joint") and lines[3].startswith("full")
    assert "4.5000" in lines[3]


def test_metrics_csv_orders_identity_columns_first(tmp_path):
    path = write_metrics_csv(tmp_path / "out" / "m.csv", [{"rmse_over": 1.0, "abs_rel": 0.1, "preset": "full"}])
    header = path.read_text().splitlines()[0]
    assert header == "preset,abs_rel,rmse_over"


def test_csv_log_keeps_first_header(tmp_path):
    log = CsvLog(tmp_path / "steps.csv")
    log.append({"step": 1, "total": 0.5})
    log.append({"step": 2, "total": 0.25, "extra": 9})
    reopened = CsvLog(tmp_path / "steps.csv")
    assert reopened.fieldnames == ["step", "total"]
    assert reopened.read() == [{"step": "1", "total": "0.5"}, {"step": "2", "total": "0.25"}]
