"""
Component ablation driver: five config presets trained over several seeds and
summarised by per-preset medians.
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import TrainConfig
from .state import TrainState
from .trainer import eval_protocol, evaluate, train_loop
from ..data.dataset_io import NightSequenceDataset
from ..evaluation.metrics import EvalProtocol
from ..evaluation.report import format_metrics_table, write_metrics_csv
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)

# SIE-only warm start shared by every preset; only "separate" freezes it afterwards.
ENHANCER_PRETRAIN_STEPS = 200

PRESETS: Dict[str, Dict[str, object]] = {
    "separate": {"enhancer_mode": "separate", "mask_mode": "none", "denoiser": "identity"},
    "joint": {"enhancer_mode": "joint", "mask_mode": "none", "denoiser": "identity"},
    "joint+M_h": {"enhancer_mode": "joint", "mask_mode": "histogram", "denoiser": "identity"},
    "joint+M_uc": {"enhancer_mode": "joint", "mask_mode": "illumination", "denoiser": "identity"},
    "full": {"enhancer_mode": "joint", "mask_mode": "illumination", "denoiser": "gaussian"},
}


def preset_config(name: str, base: TrainConfig = TrainConfig(), seed: Optional[int] = None) -> TrainConfig:
    if name not in PRESETS:
        raise ValidationError(
            f"unknown ablation preset '{name}'",
            field="preset",
            value=name,
            suggestions=[f"Use one of: {list(PRESETS)}"]
        )
    overrides = {"enhancer_pretrain_steps": ENHANCER_PRETRAIN_STEPS, **PRESETS[name]}
    if seed is not None:
        overrides["seed"] = seed
    return base.with_overrides(overrides)


def compare_gt_modes(state: TrainState, dataset: NightSequenceDataset,
                     protocol: EvalProtocol = EvalProtocol(), beam_count: int = 32) -> Dict[str, Dict[str, float]]:
    """Metrics of one trained state against dense GT and its sparsified version."""
    return {
        mode: evaluate(state, dataset, EvalProtocol(protocol.max_depth, protocol.min_depth,
                                                    protocol.median_scaling, mode), beam_count)
        for mode in ("dense", "sparse")
    }


def summarize(rows: Sequence[Mapping[str, object]]) -> Dict[str, Dict[str, float]]:
    """Per-preset median of every numeric column."""
    grouped: Dict[str, List[Mapping[str, object]]] = {}
    for row in rows:
        grouped.setdefault(str(row["preset"]), []).append(row)
    summary = {}
    for preset, items in grouped.items():
        keys = [k for k, v in items[0].items() if isinstance(v, (int, float)) and k not in ("seed", "epoch", "step")]
        summary[preset] = {k: float(np.median([float(item[k]) for item in items])) for k in keys}
        summary[preset]["runs"] = len(items)
    return summary


def run_ablation(train_set: NightSequenceDataset, eval_set: NightSequenceDataset, output_dir: Union[str, Path],
                 presets: Sequence[str] = tuple(PRESETS), seeds: Sequence[int] = (0, 1, 2),
                 base: TrainConfig = TrainConfig()) -> Tuple[List[Dict[str, object]], Dict[str, Dict[str, float]]]:
    """
    Train every preset with every seed and evaluate the final state.

    Writes ``runs.csv`` (one row per run), ``summary.csv`` and ``summary.txt``
    under ``output_dir``.

    Returns:
        (per-run rows, per-preset median summary)
    """
    output_dir = Path(output_dir)
    rows: List[Dict[str, object]] = []
    for name in presets:
        for seed in seeds:
            config = preset_config(name, base, seed)
            run_dir = output_dir / name.replace("+", "_") / f"seed{seed}"
            logger.info(f"Ablation run {name} seed {seed}")
            state = train_loop(config, train_set, run_dir)
            row: Dict[str, object] = {"preset": name, "seed": seed}
            row.update(evaluate(state, eval_set, eval_protocol(config)))
            rows.append(row)

    summary = summarize(rows)
    write_metrics_csv(output_dir / "runs.csv", rows)
    write_metrics_csv(output_dir / "summary.csv", [{"preset": k, **v} for k, v in summary.items()])
    table = format_metrics_table(summary)
    (output_dir / "summary.txt").write_text(table + "\n")
    logger.info(f"Ablation summary:\n{table}")
    return rows, summary
