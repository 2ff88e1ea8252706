from typing import Optional

from mcp.server.fastmcp import FastMCP

from ..core.mcp_manager import ToolManager
from ..data.synthdata import SyntheticSetConfig, generate_synthetic_set
from ..utils.dataset_detector import get_dataset_detector
from ..utils.validation import ValidationError


class DatasetAnalyzer(ToolManager):
    '''
    Tools for creating the synthetic night set and inspecting a dataset root.
    '''

    def __init__(self, mcp: FastMCP):
        super().__init__(mcp)
        self.add_tool(self.generate_dataset)
        self.add_tool(self.get_dataset_summary)

    def generate_dataset(self, root: str, num_sequences: int = 10, frames_per_sequence: int = 32,
                         seed: int = 0, width: int = 160, height: int = 96):
        '''
        Renders a synthetic day/night driving set and writes it under root.

        Each sequence directory gets night frames (rgb/), clean frames (rgb_day/),
        metric depth (depth/*.pfm), under/over-exposure region masks and meta.txt
        with intrinsics and camera poses.

        Args:
            root (str): Output directory for the dataset.
            num_sequences (int): Number of sequences to render.
            frames_per_sequence (int): Frames per sequence, at least 3.
            seed (int): Master seed; identical arguments give identical files.
            width (int): Image width in pixels.
            height (int): Image height in pixels.

        Returns:
            dict: Summary of the written dataset (see get_dataset_summary).
        '''
        if frames_per_sequence < 3:
            raise ValidationError(
                f"frames_per_sequence must be >= 3, got {frames_per_sequence}",
                field="frames_per_sequence",
                value=frames_per_sequence,
            )
        config = SyntheticSetConfig(num_sequences=num_sequences, frames_per_sequence=frames_per_sequence,
                                    width=width, height=height, seed=seed)
        generate_synthetic_set(config, root)
        return get_dataset_detector(root).get_dataset_summary()

    def get_dataset_summary(self, root: Optional[str] = None):
        '''
        Scans a dataset root (default: NIGHTDEPTH_DATA_ROOT) and reports its sequences.

        Args:
            root (str, optional): Dataset root directory.

        Returns:
            dict: Root, sequence/frame/triplet counts and per-sequence details,
                including any metadata or missing-file error.
        '''
        detector = get_dataset_detector(root)
        detector.refresh(root)
        if detector.root is None:
            raise ValidationError(
                "no dataset root given",
                field="root",
                suggestions=["Pass root or set NIGHTDEPTH_DATA_ROOT in .env"]
            )
        return detector.get_dataset_summary()


class DatasetTools:

    @classmethod
    def register_tools(self, mcp: FastMCP):
        '''
        Registers the dataset tools with the given MCP instance.

        Args:
            mcp (FastMCP): The MCP instance to register the tools with.
        '''
        DatasetAnalyzer(mcp)
