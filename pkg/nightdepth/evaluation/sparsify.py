"""
Spinning multi-beam LiDAR pattern sampled from dense depth.

Each beam sweeps a cone at a fixed elevation from a sensor mounted at
``LidarModel.sensor_offset`` in the camera frame. A beam is marched through
the dense map in screen space until it passes behind the surface seen at its
pixel; that pixel's depth is the return, read without interpolation. Returns
are dropped when they are out of range, hit the surface at a grazing angle,
land on a depth edge (mixed pixels, thin poles) or come from a surface the
camera cannot see. ``LidarModel.ideal()`` keeps every ring pixel.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..geometry.camera import CameraIntrinsics
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)

# 32-beam sensor vertical field of view, degrees.
DEFAULT_ELEVATION_RANGE = (-30.67, 10.67)
DEFAULT_AZIMUTH_STEP = 2.5


@dataclass(frozen=True)
class LidarModel:
    """
    Return model of the simulated sensor.

    Attributes:
        sensor_offset: sensor origin in the camera frame (metres, y down)
        max_range: returns farther than this from the sensor are lost
        min_incidence: smallest |cos| between beam and surface normal;
            0 keeps grazing returns
        edge_tolerance: relative inverse-depth curvature above which a
            pixel counts as a depth edge; None keeps edge returns
        occlusion_tolerance: relative depth gap allowed between the marched
            beam and the surface it stops at; None keeps returns hidden
            from the camera
        march_steps: geometric samples between ``near`` and the far limit
        near: first march distance
    """
    sensor_offset: Tuple[float, float, float] = (0.0, -0.3, 0.0)
    max_range: float = 40.0
    min_incidence: float = 0.1
    edge_tolerance: Optional[float] = 0.1
    occlusion_tolerance: Optional[float] = 0.05
    march_steps: int = 384
    near: float = 0.3

    def __post_init__(self):
        if self.max_range <= 0 or self.near <= 0 or self.march_steps < 2:
            raise ValidationError(
                f"need max_range > 0, near > 0 and march_steps >= 2, got "
                f"{self.max_range}, {self.near}, {self.march_steps}",
                field="max_range,near,march_steps",
                value=[self.max_range, self.near, self.march_steps],
            )
        if not 0.0 <= self.min_incidence < 1.0:
            raise ValidationError(
                f"min_incidence must lie in [0, 1), got {self.min_incidence}",
                field="min_incidence",
                value=self.min_incidence,
            )

    @classmethod
    def ideal(cls) -> 'LidarModel':
        """Sensor at the camera centre with every filter off."""
        return cls(sensor_offset=(0.0, 0.0, 0.0), max_range=np.inf, min_incidence=0.0,
                   edge_tolerance=None, occlusion_tolerance=None)

    @property
    def colocated(self) -> bool:
        return not np.any(self.sensor_offset)


@dataclass
class SparseDepth:
    """Depth samples at integer pixels of an H×W image."""
    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray
    shape: Tuple[int, int]

    def __len__(self) -> int:
        return int(self.depths.size)

    @property
    def coverage(self) -> float:
        return len(self) / float(self.shape[0] * self.shape[1])

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        dense = np.full(self.shape, fill, dtype=np.float64)
        dense[self.rows, self.cols] = self.depths
        return dense


def beam_directions(beam_count: int, azimuth_step: float,
                    elevation_range: Tuple[float, float] = DEFAULT_ELEVATION_RANGE) -> np.ndarray:
    """Unit ray directions in the camera frame (x right, y down, z forward), N×3."""
    if beam_count < 1 or azimuth_step <= 0:
        raise ValidationError(
            f"need beam_count >= 1 and azimuth_step > 0, got {beam_count}, {azimuth_step}",
            field="beam_count,azimuth_step",
            value=[beam_count, azimuth_step],
        )
    low, high = elevation_range
    elevations = np.deg2rad(np.linspace(low, high, beam_count) if beam_count > 1 else np.array([0.5 * (low + high)]))
    azimuths = np.deg2rad(np.arange(-180.0, 180.0, azimuth_step))
    el, az = np.meshgrid(elevations, azimuths, indexing="ij")
    return np.stack([np.cos(el) * np.sin(az), -np.sin(el), np.cos(el) * np.cos(az)], axis=-1).reshape(-1, 3)


def _project(points: np.ndarray, K: CameraIntrinsics):
    """Rounded pixel (row, col) and an in-image flag for camera-frame points."""
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.round(K.fx * points[..., 0] / z + K.cx)
        v = np.round(K.fy * points[..., 1] / z + K.cy)
    inside = (z > 1e-9) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return np.where(inside, v, 0).astype(np.int64), np.where(inside, u, 0).astype(np.int64), inside


def back_project(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """H×W×3 camera-frame points of a depth map."""
    v, u = np.meshgrid(np.arange(depth.shape[0], dtype=np.float64),
                       np.arange(depth.shape[1], dtype=np.float64), indexing="ij")
    with np.errstate(invalid="ignore"):
        return np.stack([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth], axis=-1)


def surface_normals(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Unit normals from finite differences of the back-projected surface; NaN where undefined."""
    points = back_project(depth, K)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_v, d_u = np.gradient(points, axis=(0, 1))
        normal = np.cross(d_u, d_v)
        return normal / np.linalg.norm(normal, axis=-1, keepdims=True)


def depth_edges(depth: np.ndarray, tolerance: float) -> np.ndarray:
    """
    H×W bool: pixels whose inverse depth bends by more than ``tolerance``
    relative to their own. Planes have affine inverse depth and are never
    flagged; pixels next to a depth jump and one-pixel-wide structures are.
    Invalid pixels count as infinitely far.
    """
    inverse = np.zeros(depth.shape)
    valid = np.isfinite(depth) & (depth > 0)
    inverse[valid] = 1.0 / depth[valid]
    padded = np.pad(inverse, 1, mode="reflect", reflect_type="odd")
    centre = padded[1:-1, 1:-1]
    bend_u = np.abs(padded[1:-1, :-2] - 2 * centre + padded[1:-1, 2:])
    bend_v = np.abs(padded[:-2, 1:-1] - 2 * centre + padded[2:, 1:-1])
    bend = np.maximum(bend_u, bend_v)
    with np.errstate(divide="ignore", invalid="ignore"):
        return valid & (bend / inverse > tolerance)


def _march(gt_dense: np.ndarray, K: CameraIntrinsics, dirs: np.ndarray, model: LidarModel):
    """
    First pixel each beam passes behind, as (rows, cols, any step inside the
    image). Beams that stay in front of the map up to the far limit, or that
    vanish behind an occluder, return nothing.
    """
    origin = np.asarray(model.sensor_offset, dtype=np.float64)
    finite = gt_dense[np.isfinite(gt_dense) & (gt_dense > 0)]
    far = model.max_range
    if not np.isfinite(far):
        far = 2.0 * float(finite.max(initial=1.0)) + float(np.linalg.norm(origin))
    steps = np.geomspace(model.near, max(far, 1.01 * model.near), model.march_steps)
    points = origin + steps[None, :, None] * dirs[:, None, :]
    rows, cols, inside = _project(points, K)
    surface = np.where(np.isfinite(gt_dense) & (gt_dense > 0), gt_dense, np.inf)
    z = points[..., 2]
    behind = inside & (z >= surface[rows, cols])
    hit = behind.any(axis=1)
    first = behind.argmax(axis=1)
    index = np.arange(len(dirs))
    hit_rows, hit_cols = rows[index, first], cols[index, first]
    if model.occlusion_tolerance is not None:
        z_before = np.where(first > 0, z[index, np.maximum(first - 1, 0)], 0.0)
        reached = surface[hit_rows, hit_cols] >= z_before * (1.0 - model.occlusion_tolerance)
        hit &= reached
    return hit_rows[hit], hit_cols[hit], bool(inside.any())


def sparsify(gt_dense: np.ndarray, K: CameraIntrinsics, beam_count: int = 32,
             azimuth_step: float = DEFAULT_AZIMUTH_STEP,
             elevation_range: Tuple[float, float] = DEFAULT_ELEVATION_RANGE,
             model: LidarModel = LidarModel()) -> SparseDepth:
    """
    Sample ``gt_dense`` along a beam pattern.

    Returns:
        SparseDepth with one sample per distinct return pixel that carries a
        positive, finite depth; empty when every return is filtered out

    Raises:
        ValidationError: the pattern projects entirely outside the image
    """
    gt_dense = np.asarray(gt_dense, dtype=np.float64)
    height, width = gt_dense.shape
    dirs = beam_directions(beam_count, azimuth_step, elevation_range)
    if model.colocated:
        # Rays through the projection centre stay on one pixel.
        rows, cols, inside = _project(dirs[dirs[:, 2] > 1e-9], K)
        rows, cols, any_inside = rows[inside], cols[inside], bool(inside.any())
    else:
        rows, cols, any_inside = _march(gt_dense, K, dirs, model)
    if not any_inside:
        raise ValidationError(
            f"beam pattern ({beam_count} beams over {elevation_range} deg) misses the {height}x{width} image",
            field="elevation_range",
            value=list(elevation_range),
            suggestions=["Widen the elevation range to overlap the camera's vertical field of view"]
        )

    flat = np.unique(rows * width + cols)
    rows, cols = np.divmod(flat, width)
    depths = gt_dense[rows, cols]
    keep = np.isfinite(depths) & (depths > 0)
    rows, cols, depths = rows[keep], cols[keep], depths[keep]

    origin = np.asarray(model.sensor_offset, dtype=np.float64)
    if np.isfinite(model.max_range) or model.min_incidence > 0:
        points = back_project(gt_dense, K)[rows, cols]
        offsets = points - origin
        distance = np.linalg.norm(offsets, axis=-1)
        keep = distance <= model.max_range
        if model.min_incidence > 0:
            normals = surface_normals(gt_dense, K)[rows, cols]
            with np.errstate(invalid="ignore"):
                incidence = np.abs(np.sum(normals * offsets, axis=-1)) / distance
            keep &= incidence >= model.min_incidence
        rows, cols, depths = rows[keep], cols[keep], depths[keep]
    if model.edge_tolerance is not None:
        keep = ~depth_edges(gt_dense, model.edge_tolerance)[rows, cols]
        rows, cols, depths = rows[keep], cols[keep], depths[keep]

    sparse = SparseDepth(rows, cols, depths, (height, width))
    logger.debug(f"Sparsified {height}x{width} depth to {len(sparse)} points ({sparse.coverage:.2%})")
    return sparse
