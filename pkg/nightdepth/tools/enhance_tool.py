import logging
from pathlib import Path
from typing import Dict

from mcp.server.fastmcp import FastMCP
from mcp.types import ImageContent

from ..core.mcp_manager import ToolManager
from ..data.dataset_io import read_png, to_tensor_image
from ..enhancement.uncertainty_mask import mask_to_image
from ..training.checkpoint import load_checkpoint
from ..training.state import TrainState
from ..training.trainer import enhance_frame
from ..utils.image_export import ImageExporter
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)


class CheckpointCache:
    """Loaded training states keyed by resolved checkpoint path."""

    def __init__(self):
        self.states: Dict[str, TrainState] = {}

    def get(self, checkpoint: str) -> TrainState:
        key = str(Path(checkpoint).resolve())
        if key not in self.states:
            self.states[key] = load_checkpoint(checkpoint, device="cpu")
        return self.states[key]

    def clear(self) -> None:
        logger.info(f"Releasing {len(self.states)} cached checkpoints")
        self.states.clear()


checkpoint_cache = CheckpointCache()


class EnhanceTool(ToolManager):
    '''
    Tools for running a trained enhancer on single night images.
    '''

    def __init__(self, mcp: FastMCP):
        super().__init__(mcp)
        self.exporter = ImageExporter()
        self.add_tool(self.enhance_image)
        self.add_tool(self.get_mask_parameters)

    def enhance_image(self, image_path: str, checkpoint: str):
        '''
        Enhances one night image with the checkpoint's first SIE stage and
        returns the enhanced image and its uncertainty mask.

        Args:
            image_path (str): 8-bit RGB PNG to enhance.
            checkpoint (str): Training checkpoint holding the enhancer weights.

        Returns:
            list: A three-element list containing:
                - dict: mean input/enhanced luminance and mean mask weight
                - ImageContent: enhanced image (PNG)
                - ImageContent: uncertainty mask as 8-bit grayscale (PNG)
        '''
        if not Path(image_path).is_file():
            raise ValidationError(f"image not found: {image_path}", field="image_path", value=image_path)
        state = checkpoint_cache.get(checkpoint)
        night = to_tensor_image(read_png(image_path)).unsqueeze(0)
        enhanced, illumination, mask = enhance_frame(state, night)

        name = Path(image_path).stem
        enhanced_png = self.exporter.export(enhanced[0].permute(1, 2, 0).numpy(), f"{name}_enhanced")
        mask_png = self.exporter.export(mask_to_image(mask), f"{name}_mask")
        info = {
            "input_luminance": float(night.mean()),
            "enhanced_luminance": float(enhanced.mean()),
            "mean_mask": float(mask.mean()),
            "mask_mode": state.config.mask_mode,
        }
        return [info,
                ImageContent(type="image", data=enhanced_png, mimeType="image/png"),
                ImageContent(type="image", data=mask_png, mimeType="image/png")]

    def get_mask_parameters(self, checkpoint: str):
        '''
        Reports the bridge-mask settings stored in a checkpoint.

        Args:
            checkpoint (str): Training checkpoint.

        Returns:
            dict: mask mode and statistics, calibrated bounds a/b (None for
                per-image statistics or an uncalibrated run) and p/q.
        '''
        state = checkpoint_cache.get(checkpoint)
        config = state.config
        params = state.mask_params
        return {
            "mask_mode": config.mask_mode,
            "mask_statistics": config.mask_statistics,
            "a": params.a if params is not None else None,
            "b": params.b if params is not None else None,
            "p": config.mask_p,
            "q": config.mask_q,
            "lo_pct": config.mask_lo_pct,
            "hi_pct": config.mask_hi_pct,
        }


class EnhanceTools:

    @classmethod
    def register_tools(self, mcp: FastMCP):
        '''
        Registers the enhancement tools with the given MCP instance.

        Args:
            mcp (FastMCP): The MCP instance to register the tools with.
        '''
        EnhanceTool(mcp)
