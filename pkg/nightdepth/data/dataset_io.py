"""
On-disk dataset layout and loaders.

    <root>/<seq_id>/rgb/<frame:06d>.png        night frames (8-bit RGB)
    <root>/<seq_id>/rgb_day/<frame:06d>.png    clean frames from the same geometry
    <root>/<seq_id>/depth/<frame:06d>.pfm      float32 metric depth
    <root>/<seq_id>/mask_under/<frame:06d>.png 8-bit under-exposure region mask
    <root>/<seq_id>/mask_over/<frame:06d>.png  8-bit over-exposure region mask
    <root>/<seq_id>/meta.txt                   key = value metadata

meta.txt holds ``intrinsics = fx fy cx cy``, ``width``, ``height``, ``seed``,
``degradation.*`` entries and one ``pose.<frame:06d>`` line per frame with the
12 row-major numbers of the camera-to-world [R|t]. The pose lines define the
frame list.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from ..geometry.camera import CameraIntrinsics, RigidPose, relative_pose
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)

META_FILE = "meta.txt"
NIGHT_DIR = "rgb"
DAY_DIR = "rgb_day"
DEPTH_DIR = "depth"
UNDER_DIR = "mask_under"
OVER_DIR = "mask_over"

_POSE_KEY = re.compile(r"^pose\.(\d+)$")

PathLike = Union[str, Path]


@dataclass
class SequenceRecord:
    """
    One sequence in memory. Images are H×W×3 float arrays in [0, 1], depths
    H×W float32, masks H×W bool, poses F×4×4 camera-to-world.
    """
    seq_id: str
    intrinsics: CameraIntrinsics
    cam_to_world: np.ndarray
    night_frames: List[np.ndarray]
    depths: List[np.ndarray]
    day_frames: List[np.ndarray] = field(default_factory=list)
    under_masks: List[np.ndarray] = field(default_factory=list)
    over_masks: List[np.ndarray] = field(default_factory=list)
    seed: int = 0
    degradation: Dict[str, str] = field(default_factory=dict)

    @property
    def frame_count(self) -> int:
        return len(self.night_frames)

    def relative_pose(self, target: int, source: int) -> np.ndarray:
        """P_{t→s} mapping target-camera points into the source camera."""
        return relative_pose(self.cam_to_world[target], self.cam_to_world[source])


# ---------------------------------------------------------------- file formats

def write_pfm(path: PathLike, depth: np.ndarray) -> None:
    """Single-channel little-endian PFM (rows stored bottom-up)."""
    depth = np.asarray(depth, dtype="<f4")
    height, width = depth.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1\n".encode("ascii"))
        f.write(np.flipud(depth).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        if header != "Pf":
            raise ValidationError(
                f"{path}: not a single-channel PFM (header '{header}')",
                field="depth_file",
                value=str(path),
            )
        width, height = (int(v) for v in f.readline().decode("ascii").split())
        scale = float(f.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != width * height:
        raise ValidationError(
            f"{path}: expected {width * height} values, found {data.size}",
            field="depth_file",
            value=str(path),
        )
    return np.flipud(data.reshape(height, width)).astype(np.float32)


def write_png(path: PathLike, image: np.ndarray) -> None:
    """Float [0, 1] image (H×W or H×W×3) or bool mask → 8-bit PNG."""
    if image.dtype == bool:
        data = image.astype(np.uint8) * 255
    else:
        data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def read_png(path: PathLike) -> np.ndarray:
    """8-bit PNG → float32 array in [0, 1]."""
    with Image.open(path) as image:
        data = np.asarray(image.convert("RGB") if image.mode not in ("L", "RGB") else image)
    return data.astype(np.float32) / 255.0


def read_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert("L")) >= 128


# ----------------------------------------------------------------- metadata

def format_meta(record: SequenceRecord) -> str:
    K = record.intrinsics
    lines = [
        f"seq_id = {record.seq_id}",
        f"seed = {record.seed}",
        f"width = {K.width}",
        f"height = {K.height}",
        f"intrinsics = {K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r}",
    ]
    for key in sorted(record.degradation):
        lines.append(f"degradation.{key} = {record.degradation[key]}")
    for index, pose in enumerate(record.cam_to_world):
        numbers = " ".join(repr(float(v)) for v in np.asarray(pose)[:3, :4].ravel())
        lines.append(f"pose.{index:06d} = {numbers}")
    return "\n".join(lines) + "\n"


def _parse_floats(text: str, count: int, path: Path, line_no: int, key: str) -> List[float]:
    parts = text.split()
    if len(parts) != count:
        raise ValidationError(
            f"{path}:{line_no}: '{key}' needs {count} numbers, found {len(parts)}",
            field=key,
            value=line_no,
        )
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ValidationError(
            f"{path}:{line_no}: '{key}' has a non-numeric entry: {text!r}",
            field=key,
            value=line_no,
        )


def parse_meta(path: PathLike) -> Dict[str, object]:
    """
    Parse meta.txt into intrinsics, poses and raw entries.

    Raises:
        ValidationError: naming the file and line of the first malformed entry
    """
    path = Path(path)
    entries: Dict[str, str] = {}
    poses: Dict[int, np.ndarray] = {}
    intrinsics: Optional[Tuple[float, ...]] = None
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(
                f"{path}:{line_no}: expected 'key = value', got {raw!r}",
                field="meta",
                value=line_no,
            )
        key, value = (part.strip() for part in line.split("=", 1))
        match = _POSE_KEY.match(key)
        if match:
            numbers = _parse_floats(value, 12, path, line_no, key)
            pose = np.eye(4)
            pose[:3, :4] = np.array(numbers).reshape(3, 4)
            poses[int(match.group(1))] = pose
        elif key == "intrinsics":
            intrinsics = tuple(_parse_floats(value, 4, path, line_no, key))
        else:
            entries[key] = value

    for required in ("width", "height"):
        if required not in entries:
            raise ValidationError(f"{path}: missing '{required}'", field=required)
    if intrinsics is None:
        raise ValidationError(f"{path}: missing 'intrinsics'", field="intrinsics")
    if not poses:
        raise ValidationError(f"{path}: no pose entries", field="pose")
    expected = list(range(len(poses)))
    if sorted(poses) != expected:
        missing = sorted(set(expected) - set(poses))
        raise ValidationError(
            f"{path}: pose indices are not contiguous from 0 (missing {missing[:5]})",
            field="pose",
            value=missing[:5],
        )
    try:
        width, height = int(entries["width"]), int(entries["height"])
    except ValueError:
        raise ValidationError(f"{path}: width/height must be integers", field="width,height")

    fx, fy, cx, cy = intrinsics
    return {
        "intrinsics": CameraIntrinsics(fx, fy, cx, cy, width, height),
        "cam_to_world": np.stack([poses[i] for i in expected]),
        "entries": entries,
    }


# ------------------------------------------------------------- read / write

def frame_name(index: int, suffix: str) -> str:
    return f"{index:06d}{suffix}"


def write_sequence(root: PathLike, record: SequenceRecord) -> Path:
    """Write one sequence directory under ``root``; existing files are overwritten."""
    seq_dir = Path(root) / record.seq_id
    for sub in (NIGHT_DIR, DEPTH_DIR):
        (seq_dir / sub).mkdir(parents=True, exist_ok=True)
    optional = [(DAY_DIR, record.day_frames), (UNDER_DIR, record.under_masks), (OVER_DIR, record.over_masks)]
    for sub, items in optional:
        if items:
            (seq_dir / sub).mkdir(exist_ok=True)

    for i in range(record.frame_count):
        write_png(seq_dir / NIGHT_DIR / frame_name(i, ".png"), record.night_frames[i])
        write_pfm(seq_dir / DEPTH_DIR / frame_name(i, ".pfm"), record.depths[i])
        for sub, items in optional:
            if items:
                write_png(seq_dir / sub / frame_name(i, ".png"), items[i])
    (seq_dir / META_FILE).write_text(format_meta(record))
    logger.debug(f"Wrote sequence {record.seq_id} ({record.frame_count} frames) to {seq_dir}")
    return seq_dir


def write_dataset(root: PathLike, sequences: Sequence[SequenceRecord]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for record in sequences:
        write_sequence(root, record)
    logger.info(f"Wrote {len(sequences)} sequences to {root}")
    return root


def read_sequence(seq_dir: PathLike, load_images: bool = True) -> SequenceRecord:
    """
    Load a sequence directory.

    Raises:
        ValidationError: malformed meta.txt or a missing file for a listed frame
    """
    seq_dir = Path(seq_dir)
    meta_path = seq_dir / META_FILE
    if not meta_path.is_file():
        raise ValidationError(f"{seq_dir}: no {META_FILE}", field="meta", value=str(seq_dir))
    meta = parse_meta(meta_path)
    entries = meta["entries"]
    cam_to_world = meta["cam_to_world"]
    count = len(cam_to_world)

    def require(sub: str, index: int, suffix: str) -> Path:
        path = seq_dir / sub / frame_name(index, suffix)
        if not path.is_file():
            raise ValidationError(
                f"sequence {seq_dir.name}: frame {index} is listed but {sub}/{path.name} is missing",
                field=sub,
                value=index,
            )
        return path

    night, depths, day, under, over = [], [], [], [], []
    for i in range(count):
        depths.append(read_pfm(require(DEPTH_DIR, i, ".pfm")))
        if load_images:
            night.append(read_png(require(NIGHT_DIR, i, ".png")))
            if (seq_dir / DAY_DIR).is_dir():
                day.append(read_png(require(DAY_DIR, i, ".png")))
            if (seq_dir / UNDER_DIR).is_dir():
                under.append(read_mask(require(UNDER_DIR, i, ".png")))
            if (seq_dir / OVER_DIR).is_dir():
                over.append(read_mask(require(OVER_DIR, i, ".png")))

    degradation = {k.split(".", 1)[1]: v for k, v in entries.items() if k.startswith("degradation.")}
    return SequenceRecord(
        seq_id=entries.get("seq_id", seq_dir.name),
        intrinsics=meta["intrinsics"],
        cam_to_world=cam_to_world,
        night_frames=night,
        depths=depths,
        day_frames=day,
        under_masks=under,
        over_masks=over,
        seed=int(entries.get("seed", 0)),
        degradation=degradation,
    )


def list_sequences(root: PathLike) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"dataset root not found: {root}", field="root", value=str(root))
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / META_FILE).is_file())


def read_dataset(root: PathLike) -> List[SequenceRecord]:
    sequences = [read_sequence(p) for p in list_sequences(root)]
    logger.info(f"Loaded {len(sequences)} sequences from {root}")
    return sequences


# --------------------------------------------------------------- torch side

def to_tensor_image(image: np.ndarray) -> torch.Tensor:
    """H×W×3 float array → 3×H×W float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()


def to_tensor_map(values: np.ndarray) -> torch.Tensor:
    """H×W array → 1×H×W tensor (bool stays bool)."""
    tensor = torch.from_numpy(np.ascontiguousarray(values))
    return tensor.unsqueeze(0) if tensor.dtype == torch.bool else tensor.float().unsqueeze(0)


@dataclass
class TripletSample:
    """Frames (t−1, t, t+1) of one sequence with target-frame ground truth."""
    night: Tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    day: Optional[Tuple[torch.Tensor, torch.Tensor, torch.Tensor]]
    depth: torch.Tensor
    poses: Tuple[torch.Tensor, torch.Tensor]    # P_{t→t−1}, P_{t→t+1}
    mask_under: Optional[torch.Tensor]
    mask_over: Optional[torch.Tensor]
    intrinsics: CameraIntrinsics
    sequence_ids: Tuple[str, str, str]
    frame_index: int


@dataclass
class TripletBatch:
    night: Tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    day: Optional[Tuple[torch.Tensor, torch.Tensor, torch.Tensor]]
    depth: torch.Tensor
    poses: Tuple[RigidPose, RigidPose]
    mask_under: Optional[torch.Tensor]
    mask_over: Optional[torch.Tensor]
    intrinsics: CameraIntrinsics
    sequence_ids: List[Tuple[str, str, str]]
    frame_indices: List[int]

    @property
    def batch_size(self) -> int:
        return self.night[1].shape[0]

    @property
    def target(self) -> torch.Tensor:
        return self.night[1]

    def check_single_sequence(self) -> None:
        """
        Raises:
            ValidationError: a triplet mixes frames from different sequences
        """
        for index, ids in enumerate(self.sequence_ids):
            if len(set(ids)) != 1:
                raise ValidationError(
                    f"batch item {index} mixes frames from sequences {list(ids)}",
                    field="sequence_ids",
                    value=list(ids),
                    suggestions=["Build triplets with NightSequenceDataset"]
                )

    def to(self, device) -> 'TripletBatch':
        def move(frames):
            return None if frames is None else tuple(f.to(device) for f in frames)
        return TripletBatch(
            night=move(self.night),
            day=move(self.day),
            depth=self.depth.to(device),
            poses=tuple(p.to(device) for p in self.poses),
            mask_under=None if self.mask_under is None else self.mask_under.to(device),
            mask_over=None if self.mask_over is None else self.mask_over.to(device),
            intrinsics=self.intrinsics,
            sequence_ids=self.sequence_ids,
            frame_indices=self.frame_indices,
        )


def collate_triplets(samples: Sequence[TripletSample]) -> TripletBatch:
    """Stack samples into a batch; all items must share one camera."""
    intrinsics = samples[0].intrinsics
    for sample in samples[1:]:
        if sample.intrinsics != intrinsics:
            raise ValidationError(
                "cannot batch triplets with different intrinsics",
                field="intrinsics",
                value=[list(intrinsics.as_tuple()), list(sample.intrinsics.as_tuple())],
            )

    def stack_frames(attr: str):
        if any(getattr(s, attr) is None for s in samples):
            return None
        return tuple(torch.stack([getattr(s, attr)[k] for s in samples]) for k in range(3))

    def stack_optional(attr: str):
        if any(getattr(s, attr) is None for s in samples):
            return None
        return torch.stack([getattr(s, attr) for s in samples])

    return TripletBatch(
        night=stack_frames("night"),
        day=stack_frames("day"),
        depth=torch.stack([s.depth for s in samples]),
        poses=tuple(RigidPose(torch.stack([s.poses[k] for s in samples])) for k in range(2)),
        mask_under=stack_optional("mask_under"),
        mask_over=stack_optional("mask_over"),
        intrinsics=intrinsics,
        sequence_ids=[s.sequence_ids for s in samples],
        frame_indices=[s.frame_index for s in samples],
    )


class NightSequenceDataset(Dataset):
    """
    Every (t−1, t, t+1) window of every sequence; a sequence of F frames
    contributes F − 2 triplets.
    """

    def __init__(self, source: Union[PathLike, Sequence[SequenceRecord]]):
        if isinstance(source, (str, Path)):
            self.sequences = read_dataset(source)
        else:
            self.sequences = list(source)
        self.index: List[Tuple[int, int]] = []
        for s, record in enumerate(self.sequences):
            for t in range(1, record.frame_count - 1):
                self.index.append((s, t))
        if not self.index:
            raise ValidationError(
                "dataset holds no triplet: every sequence needs at least 3 frames",
                field="dataset",
                value=[r.frame_count for r in self.sequences],
            )

    def __len__(self) -> int:
        return len(self.index)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.sequences[0].intrinsics

    def __getitem__(self, i: int) -> TripletSample:
        s, t = self.index[i]
        record = self.sequences[s]
        window = (t - 1, t, t + 1)
        night = tuple(to_tensor_image(record.night_frames[k]) for k in window)
        day = tuple(to_tensor_image(record.day_frames[k]) for k in window) if record.day_frames else None
        poses = tuple(torch.from_numpy(record.relative_pose(t, k)).float() for k in (t - 1, t + 1))
        return TripletSample(
            night=night,
            day=day,
            depth=to_tensor_map(record.depths[t]),
            poses=poses,
            mask_under=to_tensor_map(record.under_masks[t]) if record.under_masks else None,
            mask_over=to_tensor_map(record.over_masks[t]) if record.over_masks else None,
            intrinsics=record.intrinsics,
            sequence_ids=(record.seq_id,) * 3,
            frame_index=t,
        )

    def target_frames(self) -> List[Tuple[int, int]]:
        return list(self.index)
