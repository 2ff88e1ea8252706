"""
Dataset Detection and Management

This module scans a dataset root for sequence directories (a directory with a
meta.txt) and reports which parts of the on-disk layout each one carries,
without loading any image.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from ..data import dataset_io

load_dotenv()

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "NIGHTDEPTH_DATA_ROOT"


@dataclass
class SequenceFiles:
    """Represents the files of one sequence directory"""
    seq_id: str
    seq_dir: Path
    frame_count: int = 0
    width: int = 0
    height: int = 0
    has_day: bool = False
    has_region_masks: bool = False
    error: Optional[str] = None

    @property
    def is_valid_sequence(self) -> bool:
        """Metadata parsed and every listed frame has its night image and depth"""
        return self.error is None and self.frame_count > 0

    @property
    def triplet_count(self) -> int:
        return max(self.frame_count - 2, 0)


class DatasetDetector:
    """Detects sequences under a dataset root"""

    def __init__(self, root: Optional[str] = None):
        self.root = self._load_root(root)
        self.detected_sequences: Dict[str, SequenceFiles] = {}
        self._scan_root()

    def _load_root(self, root: Optional[str]) -> Optional[Path]:
        """Explicit root first, then the NIGHTDEPTH_DATA_ROOT environment variable"""
        candidate = root or os.getenv(DATA_ROOT_ENV)
        if not candidate:
            return None
        return Path(candidate.strip())

    def _scan_root(self):
        self.detected_sequences.clear()
        if self.root is None or not self.root.is_dir():
            logger.debug(f"Dataset root {self.root} not available, nothing to scan")
            return
        for seq_dir in sorted(self.root.iterdir()):
            if seq_dir.is_dir() and (seq_dir / dataset_io.META_FILE).is_file():
                sequence = self._analyze_sequence(seq_dir)
                self.detected_sequences[sequence.seq_id] = sequence

    def _analyze_sequence(self, seq_dir: Path) -> SequenceFiles:
        """Parse meta.txt and check the per-frame files exist"""
        sequence = SequenceFiles(seq_id=seq_dir.name, seq_dir=seq_dir)
        try:
            meta = dataset_io.parse_meta(seq_dir / dataset_io.META_FILE)
        except Exception as e:
            sequence.error = str(e)
            return sequence

        sequence.frame_count = len(meta["cam_to_world"])
        sequence.width = meta["intrinsics"].width
        sequence.height = meta["intrinsics"].height
        sequence.has_day = (seq_dir / dataset_io.DAY_DIR).is_dir()
        sequence.has_region_masks = ((seq_dir / dataset_io.UNDER_DIR).is_dir()
                                     and (seq_dir / dataset_io.OVER_DIR).is_dir())

        for index in range(sequence.frame_count):
            for sub, suffix in ((dataset_io.NIGHT_DIR, ".png"), (dataset_io.DEPTH_DIR, ".pfm")):
                if not (seq_dir / sub / dataset_io.frame_name(index, suffix)).is_file():
                    sequence.error = f"frame {index}: missing {sub}/{dataset_io.frame_name(index, suffix)}"
                    return sequence
        return sequence

    def get_sequence(self, seq_id: str) -> Optional[SequenceFiles]:
        return self.detected_sequences.get(seq_id)

    def get_sequence_ids(self) -> List[str]:
        return list(self.detected_sequences.keys())

    def get_valid_sequences(self) -> Dict[str, SequenceFiles]:
        return {name: seq for name, seq in self.detected_sequences.items() if seq.is_valid_sequence}

    def refresh(self, root: Optional[str] = None):
        """Rescan, optionally switching to a new root"""
        if root is not None:
            self.root = Path(root)
        self._scan_root()

    def get_dataset_summary(self) -> Dict:
        """Get summary of all detected sequences"""
        valid = self.get_valid_sequences()
        summary = {
            'root': str(self.root) if self.root else None,
            'total_sequences': len(self.detected_sequences),
            'valid_sequences': len(valid),
            'total_frames': sum(s.frame_count for s in valid.values()),
            'total_triplets': sum(s.triplet_count for s in valid.values()),
            'sequence_details': {}
        }

        for name, sequence in self.detected_sequences.items():
            summary['sequence_details'][name] = {
                'frames': sequence.frame_count,
                'size': [sequence.height, sequence.width],
                'has_day': sequence.has_day,
                'has_region_masks': sequence.has_region_masks,
                'error': sequence.error,
            }

        return summary


# Global instance for easy access
_detector_instance = None


def get_dataset_detector(root: Optional[str] = None) -> DatasetDetector:
    """Get singleton dataset detector instance, rescanning when a new root is given"""
    global _detector_instance
    if _detector_instance is None:
        _detector_instance = DatasetDetector(root)
    elif root is not None and Path(root) != _detector_instance.root:
        _detector_instance.refresh(root)
    return _detector_instance
