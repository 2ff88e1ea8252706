"""Qualitative dumps: enhanced frame, illumination map, mask and depth colormap."""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import matplotlib
import numpy as np
import torch
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from ..data.dataset_io import write_png
from ..models.networks import normalized_disparity

logger = logging.getLogger(__name__)

DEPTH_COLORMAP = "magma"


def _first_image(tensor: torch.Tensor) -> np.ndarray:
    """First batch element as H×W or H×W×C float64."""
    values = tensor.detach().cpu().double()
    while values.dim() > 3:
        values = values[0]
    if values.dim() == 3:
        values = values[0] if values.shape[0] == 1 else values.permute(1, 2, 0)
    return values.numpy()


def colorize_depth(depth: torch.Tensor, min_depth: float = 0.1, max_depth: float = 100.0,
                   cmap: str = DEPTH_COLORMAP) -> np.ndarray:
    """
    RGB rendering of a depth map (first batch element).

    Colours follow normalised disparity, so near surfaces are bright.

    Returns:
        H×W×3 float array in [0, 1]
    """
    disparity = normalized_disparity(depth.detach().float().cpu(), min_depth, max_depth)
    values = _first_image(disparity)
    span = values.max() - values.min()
    values = (values - values.min()) / span if span > 0 else np.zeros_like(values)
    return matplotlib.colormaps[cmap](values)[..., :3]


def qualitative_panels(night: torch.Tensor, enhanced: torch.Tensor, depth: torch.Tensor,
                       illumination: Optional[torch.Tensor] = None, mask: Optional[torch.Tensor] = None,
                       min_depth: float = 0.1, max_depth: float = 100.0) -> Dict[str, np.ndarray]:
    panels = {
        "night": _first_image(night),
        "enhanced": _first_image(enhanced),
        "depth": colorize_depth(depth, min_depth, max_depth),
    }
    if illumination is not None:
        panels["illumination"] = _first_image(illumination)
    if mask is not None:
        panels["mask"] = _first_image(mask)
    return panels


def dump_qualitative(output_dir: Union[str, Path], name: str, panels: Dict[str, np.ndarray],
                     figure: bool = True) -> Path:
    """
    Write each panel as ``<name>_<panel>.png`` and, if ``figure``, a side-by-side
    ``<name>_panel.png``.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    for key, image in panels.items():
        write_png(output_dir / f"{name}_{key}.png", np.clip(image, 0.0, 1.0))

    if figure:
        fig = Figure(figsize=(3.2 * len(panels), 2.4))
        FigureCanvasAgg(fig)
        axes = fig.subplots(1, len(panels), squeeze=False)[0]
        for ax, (key, image) in zip(axes, panels.items()):
            ax.imshow(np.clip(image, 0.0, 1.0), cmap="gray" if image.ndim == 2 else None, vmin=0, vmax=1)
            ax.set_title(key)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(output_dir / f"{name}_panel.png", dpi=100)
    logger.debug(f"Wrote qualitative dump {name} to {output_dir}")
    return output_dir
