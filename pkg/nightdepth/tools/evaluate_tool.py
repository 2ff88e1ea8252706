from typing import Optional

from mcp.server.fastmcp import FastMCP

from .enhance_tool import checkpoint_cache
from ..core.mcp_manager import ToolManager
from ..data.dataset_io import NightSequenceDataset
from ..evaluation.metrics import EvalProtocol
from ..training.trainer import evaluate
from ..utils.dataset_detector import get_dataset_detector
from ..utils.validation import ValidationError


class EvaluateTool(ToolManager):
    '''
    Depth evaluation of a trained checkpoint against a dataset.
    '''

    def __init__(self, mcp: FastMCP):
        super().__init__(mcp)
        self.add_tool(self.evaluate_checkpoint)

    def evaluate_checkpoint(self, checkpoint: str, data_root: Optional[str] = None, max_depth: float = 60.0,
                            gt_mode: str = "dense", median_scaling: bool = True):
        '''
        Evaluates a checkpoint's depth predictions on every target frame of a dataset.

        Args:
            checkpoint (str): Training checkpoint.
            data_root (str, optional): Dataset root, default NIGHTDEPTH_DATA_ROOT.
            max_depth (float): Ground-truth cap in metres.
            gt_mode (str): "dense" or "sparse" (32-beam LiDAR pattern).
            median_scaling (bool): Rescale predictions by the median ratio per frame.

        Returns:
            dict: abs_rel, sq_rel, rmse, rmse_log, a1, a2, a3, region RMSE
                (rmse_under, rmse_over) and the frame count.
        '''
        root = get_dataset_detector(data_root).root
        if root is None:
            raise ValidationError(
                "no dataset root given",
                field="data_root",
                suggestions=["Pass data_root or set NIGHTDEPTH_DATA_ROOT in .env"]
            )
        protocol = EvalProtocol(max_depth=max_depth, median_scaling=median_scaling, gt_mode=gt_mode)
        state = checkpoint_cache.get(checkpoint)
        return evaluate(state, NightSequenceDataset(root), protocol)


class EvaluateTools:

    @classmethod
    def register_tools(self, mcp: FastMCP):
        '''
        Registers the evaluation tools with the given MCP instance.

        Args:
            mcp (FastMCP): The MCP instance to register the tools with.
        '''
        EvaluateTool(mcp)
