"""
Procedural street scenes ray-cast with numpy, plus the night degradation.

World frame matches the camera frame at zero yaw: x right, y down, z forward.
The camera rides at Y = 0 above a ground plane at Y = +camera_height, between
two facades at X = ±street_half_width, facing a backdrop wall. Cars and poles
are axis-aligned boxes. The trajectory only yaws and drifts laterally, so the
optical axis stays horizontal and the ground at row v sits at depth
camera_height·fy/(v − cy).

Textures are anchored to world coordinates and shading is Lambertian under a
fixed light, so a surface point keeps its colour across frames.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .dataset_io import SequenceRecord, write_dataset
from ..geometry.camera import CameraIntrinsics, RigidPose
from ..utils.validation import ParameterValidator, RangeValidator

logger = logging.getLogger(__name__)

# KITTI-style normalised intrinsics.
NORMALIZED_INTRINSICS = (0.58, 1.92, 0.5, 0.5)
DEFAULT_HEIGHT = 96
DEFAULT_WIDTH = 160
LIGHT_DIRECTION = np.array([0.3, -1.0, -0.4]) / np.linalg.norm([0.3, -1.0, -0.4])
AMBIENT = 0.35
BLOB_SHAPES = ("disk", "square")


def default_intrinsics(width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> CameraIntrinsics:
    return CameraIntrinsics.from_normalized(*NORMALIZED_INTRINSICS, width=width, height=height)


@dataclass
class Box:
    """Axis-aligned box between corners ``lo`` and ``hi`` (world metres)."""
    lo: np.ndarray
    hi: np.ndarray
    albedo: np.ndarray
    kind: str = "car"


@dataclass
class SceneSpec:
    """Scene layout and camera trajectory for one sequence."""
    seed: int
    intrinsics: CameraIntrinsics
    cam_to_world: np.ndarray                 # F×4×4
    boxes: List[Box] = field(default_factory=list)
    camera_height: float = 1.5
    street_half_width: float = 8.0
    facade_height: float = 12.0
    backdrop_z: float = 90.0
    ground_albedo: Tuple[float, float, float] = (0.55, 0.55, 0.58)
    facade_albedo: Tuple[float, float, float] = (0.75, 0.62, 0.5)
    backdrop_albedo: Tuple[float, float, float] = (0.45, 0.5, 0.6)

    @property
    def frame_count(self) -> int:
        return len(self.cam_to_world)


@dataclass
class RenderedSequence:
    frames: List[np.ndarray]          # H×W×3 float in [0, 1]
    depths: List[np.ndarray]          # H×W float32 metres
    poses: List[RigidPose]            # camera-to-world
    intrinsics: CameraIntrinsics
    cam_to_world: np.ndarray


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def make_trajectory(frame_count: int, speed: float, rng: np.random.Generator,
                    yaw_jitter_deg: float = 1.5, lateral_jitter: float = 0.05) -> np.ndarray:
    """Forward motion along +Z with small yaw and lateral random-walk jitter."""
    poses = np.zeros((frame_count, 4, 4))
    x, yaw = 0.0, 0.0
    max_yaw = np.deg2rad(3.0)
    for k in range(frame_count):
        if k > 0:
            x = float(np.clip(x + rng.normal(0.0, lateral_jitter), -0.5, 0.5))
            yaw = float(np.clip(yaw + rng.normal(0.0, np.deg2rad(yaw_jitter_deg) / 3), -max_yaw, max_yaw))
        poses[k, :3, :3] = yaw_matrix(yaw)
        poses[k, :3, 3] = [x, 0.0, speed * k]
        poses[k, 3, 3] = 1.0
    return poses


def make_scene(seed: int, frame_count: int = 32, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
               speed: float = 0.5, cars: int = 12, poles: int = 8, yaw_jitter_deg: float = 1.5,
               lateral_jitter: float = 0.05) -> SceneSpec:
    """Random street layout: parked cars and poles on both sides of the road."""
    rng = np.random.default_rng(seed)
    spec = SceneSpec(
        seed=seed,
        intrinsics=default_intrinsics(width, height),
        cam_to_world=make_trajectory(frame_count, speed, rng, yaw_jitter_deg, lateral_jitter),
    )
    h = spec.camera_height
    z_end = speed * frame_count
    for _ in range(cars):
        side = rng.choice([-1.0, 1.0])
        cx = side * rng.uniform(3.6, 5.6)
        cz = rng.uniform(5.0, z_end + 60.0)
        half = np.array([0.9, 0.0, rng.uniform(1.8, 2.4)])
        top = h - rng.uniform(1.3, 1.7)
        spec.boxes.append(Box(
            lo=np.array([cx - half[0], top, cz - half[2]]),
            hi=np.array([cx + half[0], h, cz + half[2]]),
            albedo=rng.uniform(0.25, 0.95, size=3),
        ))
    for _ in range(poles):
        side = rng.choice([-1.0, 1.0])
        px = side * rng.uniform(6.6, 7.6)
        pz = rng.uniform(4.0, z_end + 50.0)
        spec.boxes.append(Box(
            lo=np.array([px - 0.08, h - 5.5, pz - 0.08]),
            hi=np.array([px + 0.08, h, pz + 0.08]),
            albedo=np.array([0.8, 0.8, 0.78]),
            kind="pole",
        ))
    return spec


class _Hits:
    """Closest-hit buffers for one frame."""

    def __init__(self, height: int, width: int):
        self.t = np.full((height, width), np.inf)
        self.normal = np.zeros((height, width, 3))
        self.uv = np.zeros((height, width, 2))
        self.albedo = np.zeros((height, width, 3))
        self.texture = np.zeros((height, width), dtype=np.int64)

    def update(self, t: np.ndarray, valid: np.ndarray, normal, uv: np.ndarray, albedo, texture: int) -> None:
        closer = valid & (t > 1e-6) & (t < self.t)
        self.t[closer] = t[closer]
        self.normal[closer] = normal if np.ndim(normal) == 1 else normal[closer]
        self.uv[closer] = uv[closer]
        self.albedo[closer] = albedo
        self.texture[closer] = texture


def _texture_bank(seed: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed + 7919)
    freqs = rng.uniform(1.0, 6.0, size=(count, 3))
    phases = rng.uniform(0.0, 2 * np.pi, size=(count, 3))
    return np.concatenate([freqs, phases], axis=1)


def _shade_texture(uv: np.ndarray, params: np.ndarray) -> np.ndarray:
    u, v = uv[..., 0], uv[..., 1]
    f1, f2, f3, p1, p2, p3 = (params[..., i] for i in range(6))
    value = (0.55
             + 0.18 * np.sin(f1 * u + p1)
             + 0.14 * np.sin(f2 * v + p2)
             + 0.1 * np.sign(np.sin(f3 * (u + v) + p3)))
    return np.clip(value, 0.05, 1.0)


def _intersect_box(origin: np.ndarray, dirs: np.ndarray, box: Box):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (box.lo - origin) * inv
        t2 = (box.hi - origin) * inv
    t_min = np.nan_to_num(np.minimum(t1, t2), nan=-np.inf)
    t_max = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
    t_near = t_min.max(axis=-1)
    t_far = t_max.min(axis=-1)
    axis = t_min.argmax(axis=-1)
    valid = (t_near <= t_far) & (t_near > 0)

    normal = np.zeros(dirs.shape)
    sign = -np.sign(np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0])
    np.put_along_axis(normal, axis[..., None], sign[..., None], axis=-1)

    with np.errstate(invalid="ignore"):
        point = origin + t_near[..., None] * dirs
    # Texture coordinates: the two coordinates spanning the hit face.
    uv = np.where((axis == 0)[..., None], point[..., [2, 1]],
                  np.where((axis == 1)[..., None], point[..., [0, 2]], point[..., [0, 1]]))
    return t_near, valid, normal, uv


def render_frame(spec: SceneSpec, cam_to_world: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ray-cast one view.

    Returns:
        (H×W×3 image in [0, 1], H×W float32 depth along the optical axis)
    """
    K = spec.intrinsics
    v, u = np.meshgrid(np.arange(K.height, dtype=np.float64), np.arange(K.width, dtype=np.float64), indexing="ij")
    # z component 1 in camera space, so the ray parameter t equals depth.
    rays_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    rotation = cam_to_world[:3, :3]
    origin = cam_to_world[:3, 3]
    dirs = rays_cam @ rotation.T
    hits = _Hits(K.height, K.width)
    bank = _texture_bank(spec.seed, len(spec.boxes) + 4)

    with np.errstate(divide="ignore", invalid="ignore"):
        t = (spec.camera_height - origin[1]) / dirs[..., 1]
        point = origin + t[..., None] * dirs
        hits.update(t, dirs[..., 1] > 1e-9, np.array([0.0, -1.0, 0.0]), point[..., [0, 2]], spec.ground_albedo, 0)

        for texture, side in ((1, 1.0), (2, -1.0)):
            t = (side * spec.street_half_width - origin[0]) / dirs[..., 0]
            point = origin + t[..., None] * dirs
            valid = (side * dirs[..., 0] > 1e-9) & (point[..., 1] >= spec.camera_height - spec.facade_height)
            hits.update(t, valid, np.array([-side, 0.0, 0.0]), point[..., [2, 1]], spec.facade_albedo, texture)

        t = (spec.backdrop_z - origin[2]) / dirs[..., 2]
        point = origin + t[..., None] * dirs
        hits.update(t, dirs[..., 2] > 1e-9, np.array([0.0, 0.0, -1.0]), point[..., [0, 1]], spec.backdrop_albedo, 3)

    for index, box in enumerate(spec.boxes):
        t, valid, normal, uv = _intersect_box(origin, dirs, box)
        hits.update(t, valid, normal, uv, box.albedo, 4 + index)

    lambert = np.clip(hits.normal @ LIGHT_DIRECTION, 0.0, None)
    shading = AMBIENT + (1.0 - AMBIENT) * lambert
    texture = _shade_texture(hits.uv, bank[hits.texture])
    image = np.clip(hits.albedo * (texture * shading)[..., None], 0.0, 1.0)
    return image, hits.t.astype(np.float32)


def is_degenerate_trajectory(cam_to_world: np.ndarray, atol: float = 1e-9) -> bool:
    """True if no frame moves relative to its predecessor."""
    if len(cam_to_world) < 2:
        return True
    return bool(np.all(np.abs(np.diff(cam_to_world, axis=0)) <= atol))


def render_sequence(spec: SceneSpec) -> RenderedSequence:
    """Render every frame of ``spec``; warns when the camera never moves."""
    if is_degenerate_trajectory(spec.cam_to_world):
        logger.warning(f"Scene {spec.seed}: camera never moves, pose supervision is degenerate")
    frames, depths = [], []
    for pose in spec.cam_to_world:
        image, depth = render_frame(spec, pose)
        frames.append(image)
        depths.append(depth)
    poses = [RigidPose(pose.copy()) for pose in spec.cam_to_world]
    return RenderedSequence(frames, depths, poses, spec.intrinsics, spec.cam_to_world.copy())


# ------------------------------------------------------------------ night

@dataclass(frozen=True)
class Blob:
    """Saturating light source: core of ``radius`` pixels around ``center`` (u, v)."""
    center: Tuple[float, float]
    radius: float
    intensity: float = 1.0
    shape: str = "disk"

    def __post_init__(self):
        ParameterValidator.validate_choice(self.shape, BLOB_SHAPES, "blob.shape")

    def distance(self, height: int, width: int) -> np.ndarray:
        v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        du, dv = np.abs(u - self.center[0]), np.abs(v - self.center[1])
        return np.hypot(du, dv) if self.shape == "disk" else np.maximum(du, dv)

    def light(self, height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
        """(additive light, core mask); halo falls off as a Gaussian."""
        d = self.distance(height, width)
        halo_sigma = max(0.75 * self.radius, 1.0)
        falloff = np.exp(-np.clip(d - self.radius, 0.0, None) ** 2 / (2 * halo_sigma ** 2))
        return self.intensity * falloff, d <= self.radius


@dataclass(frozen=True)
class NightDegradation:
    """
    Night rendition of a clean frame: gamma darkening, a low-frequency
    illumination field in [dark_floor, 1] made of ``light_pools`` Gaussian
    pools, additive headlight blobs and Gaussian read noise.
    """
    gamma: float = 2.2
    dark_floor: float = 0.08
    light_pools: int = 3
    pool_sigma: float = 0.25
    blobs: Tuple[Blob, ...] = ()
    noise_sigma: float = 0.02
    under_threshold: float = 0.25
    seed: int = 0

    def __post_init__(self):
        RangeValidator.validate_interval(self.gamma, 0.0, float("inf"), "gamma", low_open=True, high_open=True)
        RangeValidator.validate_interval(self.dark_floor, 0.0, 1.0, "dark_floor")
        RangeValidator.validate_interval(self.noise_sigma, 0.0, float("inf"), "noise_sigma", high_open=True)

    @classmethod
    def identity(cls) -> 'NightDegradation':
        return cls(gamma=1.0, dark_floor=1.0, light_pools=0, noise_sigma=0.0)

    def illumination_field(self, height: int, width: int) -> np.ndarray:
        if self.light_pools <= 0 or self.dark_floor >= 1.0:
            return np.full((height, width), self.dark_floor if self.light_pools <= 0 else 1.0)
        rng = np.random.default_rng(self.seed)
        v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        sigma = self.pool_sigma * width
        pools = np.zeros((height, width))
        for _ in range(self.light_pools):
            cu, cv = rng.uniform(0, width), rng.uniform(0.2 * height, height)
            pools += np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * sigma ** 2))
        pools /= pools.max()
        return self.dark_floor + (1.0 - self.dark_floor) * pools

    def as_meta(self) -> dict:
        meta = {k: repr(v) for k, v in asdict(self).items() if k != "blobs"}
        return meta


def degrade_night(frame: np.ndarray, deg: NightDegradation,
                  noise_seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Night version of an H×W×3 frame in [0, 1].

    Read noise is added after the lit frame saturates, so a blob core sits at
    1 minus the clipped negative noise: its mean stays above 0.98 for the
    default noise level while single pixels may dip below.

    Returns:
        (night image, under-exposed mask, over-exposed mask); the masks are
        H×W bool: field < under_threshold, and blob cores.
    """
    height, width = frame.shape[:2]
    field_map = deg.illumination_field(height, width)
    light = np.zeros((height, width))
    over = np.zeros((height, width), dtype=bool)
    for blob in deg.blobs:
        blob_light, core = blob.light(height, width)
        light += blob_light
        over |= core
    night = np.clip(np.power(frame, deg.gamma) * field_map[..., None] + light[..., None], 0.0, 1.0)
    if deg.noise_sigma > 0:
        rng = np.random.default_rng(deg.seed if noise_seed is None else noise_seed)
        night = np.clip(night + rng.normal(0.0, deg.noise_sigma, size=night.shape), 0.0, 1.0)
    under = (field_map < deg.under_threshold) & ~over
    return night, under, over


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class SyntheticSetConfig:
    num_sequences: int = 10
    frames_per_sequence: int = 32
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    seed: int = 0
    speed: float = 0.5
    cars: int = 12
    poles: int = 8
    gamma: float = 2.2
    dark_floor: float = 0.08
    noise_sigma: float = 0.02
    under_threshold: float = 0.25
    blobs_per_sequence: int = 2
    blob_radius: Tuple[float, float] = (3.0, 6.0)
    # horizontal blob speed as a fraction of the frame width per frame
    blob_speed: Tuple[float, float] = (0.025, 0.05)

    @property
    def total_frames(self) -> int:
        return self.num_sequences * self.frames_per_sequence


def _bounce(position: float, limit: float) -> float:
    """Reflect a coordinate back into [0, limit]."""
    period = 2.0 * limit
    folded = position % period
    return period - folded if folded > limit else folded


@dataclass(frozen=True)
class _BlobTrack:
    start: Tuple[float, float]
    velocity: Tuple[float, float]
    radius: float
    shape: str
    bounds: Tuple[float, float]

    def at(self, frame: int) -> Blob:
        return Blob(
            center=(_bounce(self.start[0] + frame * self.velocity[0], self.bounds[0]),
                    _bounce(self.start[1] + frame * self.velocity[1], self.bounds[1])),
            radius=self.radius,
            intensity=1.0,
            shape=self.shape,
        )


def _blob_tracks(config: SyntheticSetConfig, rng: np.random.Generator) -> List[_BlobTrack]:
    tracks = []
    for _ in range(config.blobs_per_sequence):
        tracks.append(_BlobTrack(
            start=(rng.uniform(0.15, 0.85) * config.width, rng.uniform(0.4, 0.7) * config.height),
            velocity=(rng.choice((-1.0, 1.0)) * rng.uniform(*config.blob_speed) * config.width,
                      rng.uniform(-0.2, 0.4)),
            radius=float(rng.uniform(*config.blob_radius)),
            shape=str(rng.choice(BLOB_SHAPES)),
            bounds=(float(config.width - 1), float(config.height - 1)),
        ))
    return tracks


def generate_sequence(config: SyntheticSetConfig, seq_index: int, seed: int) -> SequenceRecord:
    """Render one sequence and its night counterpart from a single seed."""
    rng = np.random.default_rng(seed)
    spec = make_scene(
        seed=int(rng.integers(2 ** 31)),
        frame_count=config.frames_per_sequence,
        width=config.width,
        height=config.height,
        speed=config.speed,
        cars=config.cars,
        poles=config.poles,
    )
    rendered = render_sequence(spec)
    base = NightDegradation(
        gamma=config.gamma,
        dark_floor=config.dark_floor,
        noise_sigma=config.noise_sigma,
        under_threshold=config.under_threshold,
        seed=int(rng.integers(2 ** 31)),
    )
    tracks = _blob_tracks(config, rng)

    night, under, over = [], [], []
    for k, frame in enumerate(rendered.frames):
        deg = NightDegradation(**{**asdict(base), "blobs": tuple(track.at(k) for track in tracks)})
        image, under_mask, over_mask = degrade_night(frame, deg, noise_seed=base.seed + k)
        night.append(image)
        under.append(under_mask)
        over.append(over_mask)

    degradation = base.as_meta()
    degradation["blobs"] = "; ".join(
        f"{t.start[0]!r} {t.start[1]!r} {t.velocity[0]!r} {t.velocity[1]!r} {t.radius!r} {t.shape}" for t in tracks
    )
    return SequenceRecord(
        seq_id=f"seq_{seq_index:03d}",
        intrinsics=rendered.intrinsics,
        cam_to_world=rendered.cam_to_world,
        night_frames=night,
        depths=rendered.depths,
        day_frames=rendered.frames,
        under_masks=under,
        over_masks=over,
        seed=seed,
        degradation=degradation,
    )


def generate_synthetic_set(config: SyntheticSetConfig = SyntheticSetConfig(), root: Optional[str] = None,
                           progress: bool = False) -> List[SequenceRecord]:
    """
    Render the full day/night set; written to ``root`` when given.

    Identical configs produce bit-identical sequences.
    """
    children = np.random.SeedSequence(config.seed).spawn(config.num_sequences)
    sequences = []
    for index in tqdm(range(config.num_sequences), desc="sequences", disable=not progress):
        seed = int(children[index].generate_state(1)[0])
        sequences.append(generate_sequence(config, index, seed))
    logger.info(f"Generated {config.num_sequences} sequences, {config.total_frames} frames "
                f"at {config.height}x{config.width}")
    if root is not None:
        write_dataset(root, sequences)
    return sequences


def visibility_mask(depth_target: np.ndarray, depth_source: np.ndarray, pose: np.ndarray,
                    K: CameraIntrinsics, rel_tol: float = 0.02) -> np.ndarray:
    """
    Depth-test occlusion mask for warping the source view into the target.

    A target pixel is visible when it lands inside the source image and its
    transformed depth agrees with the source depth at the nearest pixel.
    Only meant for checking warps against ground truth.
    """
    height, width = depth_target.shape
    v, u = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    points = rays * depth_target[..., None].astype(np.float64)
    points = points @ pose[:3, :3].T + pose[:3, 3]
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        us = K.fx * points[..., 0] / z + K.cx
        vs = K.fy * points[..., 1] / z + K.cy
    inside = (z > 1e-6) & (us >= 0) & (us <= width - 1) & (vs >= 0) & (vs <= height - 1)
    ui = np.clip(np.round(np.nan_to_num(us)), 0, width - 1).astype(np.int64)
    vi = np.clip(np.round(np.nan_to_num(vs)), 0, height - 1).astype(np.int64)
    sampled = depth_source[vi, ui]
    return inside & (np.abs(z - sampled) <= rel_tol * sampled)


def ground_plane_depth(v: np.ndarray, K: CameraIntrinsics, camera_height: float = 1.5) -> np.ndarray:
    """Closed-form depth of the ground plane at image row(s) v > cy."""
    return camera_height * K.fy / (np.asarray(v, dtype=np.float64) - K.cy)
