"""
PNG export of float images and masks for tool responses.

Every export is returned base64-encoded; a timestamped copy is kept under
NIGHTDEPTH_OUTPUT_DIR (default ``./outputs``) unless ``keep`` is off.
"""

import base64
import io
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from PIL import Image

# Load .env file
load_dotenv()

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "NIGHTDEPTH_OUTPUT_DIR"


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Float [0, 1] (H×W or H×W×3), bool or uint8 image → uint8."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    if image.dtype == bool:
        return image.astype(np.uint8) * 255
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


class ImageExporter:
    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = Path(output_dir or os.getenv(OUTPUT_DIR_ENV) or "outputs")

    def png_bytes(self, image: np.ndarray) -> bytes:
        buffer = io.BytesIO()
        Image.fromarray(to_uint8(image)).save(buffer, format="PNG")
        return buffer.getvalue()

    def export(self, image: np.ndarray, name: str, keep: bool = True) -> str:
        """
        Encode ``image`` as PNG.

        Returns:
            str: base64 PNG data
        """
        data = self.png_bytes(image)
        if keep:
            exports_dir = self.output_dir / "exports"
            exports_dir.mkdir(parents=True, exist_ok=True)
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            path = exports_dir / f"{name}_{timestamp}.png"
            path.write_bytes(data)
            logger.info(f"Exported {name} to {path}")
        return base64.b64encode(data).decode('utf-8')
