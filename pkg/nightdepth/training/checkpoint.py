"""
Checkpoint save/load for TrainState.

Payloads hold only tensors, numbers, strings, lists, dicts and None so they
load with ``torch.load(weights_only=True)``. Serialisation goes through an
in-memory buffer so the archive layout never depends on the target filename,
and every string is interned first so equal payloads pickle to equal bytes.
"""

import io
import logging
import sys
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch

from .config import TrainConfig, coerce_values
from .state import TrainState, build_state
from ..enhancement.uncertainty_mask import BridgeParams
from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "nightdepth_joint"
CHECKPOINT_VERSION = 1


def state_payload(state: TrainState) -> Dict[str, Any]:
    return {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "models": {name: module.state_dict() for name, module in state.modules().items()},
        "optimizers": {
            "generator": state.gen_optimizer.state_dict(),
            "discriminator": state.disc_optimizer.state_dict(),
        },
        "mask_params": asdict(state.mask_params) if state.mask_params is not None else None,
        "prior_rng": state.prior.generator.get_state() if state.prior is not None else None,
        "step": state.step,
        "epoch": state.epoch,
        "history": [dict(row) for row in state.history],
    }


def _canonical(value: Any) -> Any:
    """Rebuild containers with interned strings; pickle memoisation then depends only on values."""
    if isinstance(value, str):
        return sys.intern(value)
    if isinstance(value, dict):
        out = OrderedDict() if isinstance(value, OrderedDict) else {}
        for key, item in value.items():
            out[_canonical(key)] = _canonical(item)
        metadata = getattr(value, "_metadata", None)
        if metadata is not None:
            out._metadata = _canonical(metadata)
        return out
    if isinstance(value, list):
        return [_canonical(item) for item in value]
    if isinstance(value, tuple):
        return tuple(_canonical(item) for item in value)
    return value


def save_checkpoint(path: Union[str, Path], state: TrainState) -> Path:
    """Write ``state`` to ``path``; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    torch.save(_canonical(state_payload(state)), buffer)
    path.write_bytes(buffer.getvalue())
    logger.info(f"Saved checkpoint at epoch {state.epoch}, step {state.step} to {path}")
    return path


def read_payload(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Raises:
        ValidationError: missing file or a file that is not a joint checkpoint
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(
            f"checkpoint not found: {path}",
            field="checkpoint",
            value=str(path),
            suggestions=["Train first with 'nightdepth train' or check the run directory"]
        )
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("kind") != CHECKPOINT_KIND:
        raise ValidationError(
            f"{path} is not a nightdepth training checkpoint",
            field="checkpoint",
            value=str(path),
        )
    return payload


def config_differences(saved: Dict[str, Any], current: TrainConfig) -> Dict[str, Any]:
    """``{key: (saved, current)}`` over the resume fingerprint fields."""
    saved_fp = {k: v for k, v in saved.items() if k in current.fingerprint()}
    return {k: (saved_fp.get(k), v) for k, v in current.fingerprint().items() if saved_fp.get(k) != v}


def load_checkpoint(path: Union[str, Path], config: Optional[TrainConfig] = None,
                    allow_config_override: bool = False, device: Optional[str] = None) -> TrainState:
    """
    Rebuild a TrainState from a checkpoint.

    Args:
        path: checkpoint file
        config: config of the resuming run; None reuses the stored config
        allow_config_override: accept a ``config`` that differs from the stored
            one outside the runtime fields
        device: overrides the device of whichever config is used

    Raises:
        ValidationError: missing/invalid file, or a config mismatch without
            ``allow_config_override``
    """
    payload = read_payload(path)
    saved_config = TrainConfig(**coerce_values(payload["config"]))
    if config is None:
        config = saved_config
    else:
        diff = config_differences(payload["config"], config)
        if diff:
            described = ", ".join(f"{k}: {old!r} -> {new!r}" for k, (old, new) in sorted(diff.items()))
            if not allow_config_override:
                raise ValidationError(
                    f"resume config differs from checkpoint ({described})",
                    field="config",
                    value=sorted(diff),
                    suggestions=["Resume with the original config",
                                 "Pass --allow-config-override to accept the new values"]
                )
            logger.warning(f"Resuming with overridden config: {described}")
    if device is not None:
        config = config.with_overrides({"device": device})

    state = build_state(config)
    for name, module in state.modules().items():
        module.load_state_dict(payload["models"][name])
    try:
        state.gen_optimizer.load_state_dict(payload["optimizers"]["generator"])
        state.disc_optimizer.load_state_dict(payload["optimizers"]["discriminator"])
    except (ValueError, KeyError) as e:
        if not allow_config_override:
            raise
        logger.warning(f"Optimizer state not restored ({e}); starting with fresh optimizers")

    if payload.get("mask_params") is not None:
        state.mask_params = BridgeParams(**payload["mask_params"])
    if state.prior is not None and payload.get("prior_rng") is not None:
        state.prior.generator.set_state(payload["prior_rng"])
    state.step = int(payload["step"])
    state.epoch = int(payload["epoch"])
    state.history = [dict(row) for row in payload["history"]]
    logger.info(f"Loaded checkpoint {path} (epoch {state.epoch}, step {state.step})")
    return state
