"""
Training configuration.

Config files are plain ``key=value`` files read with python-dotenv; keys are
the lower-case TrainConfig field names. Precedence: dataclass defaults, then
the file, then explicit overrides (CLI flags).
"""

import logging
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import dotenv_values

from ..enhancement.denoise import DenoiserHandle, DenoiserKind
from ..utils.validation import ParameterValidator, RangeValidator, ValidationError

logger = logging.getLogger(__name__)

MASK_MODES = ("none", "illumination", "histogram")
MASK_STATISTICS = ("pooled", "per_image")
ENHANCER_MODES = ("joint", "separate", "none")
PRIOR_SOURCES = ("trained_daytime_model", "synthetic_oracle")
SMOOTHNESS_MODES = ("disparity", "depth")
GT_MODES = ("dense", "sparse")

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}

# Fields that may differ between a checkpoint and a resumed run.
RUNTIME_FIELDS = ("epochs", "device", "num_workers", "dump_qualitative", "eval_every",
                  "max_steps_per_epoch", "progress", "output_dir")


@dataclass(frozen=True)
class TrainConfig:
    # loss weights
    beta: float = 1.0
    gamma: float = 0.1
    lambda_: float = 1.0
    mu: float = 0.001
    eta: float = 1.0
    zeta: float = 1.0
    xi: float = 0.01
    rho: float = 1.0

    # optimisation
    lr: float = 5e-4
    lr_disc: float = 1e-4
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    max_steps_per_epoch: Optional[int] = None

    # enhancer
    num_stages: int = 3
    enhancer_mode: str = "joint"
    enhancer_pretrain_steps: int = 0
    enhancer_checkpoint: Optional[str] = None

    # uncertainty mask
    mask_mode: str = "illumination"
    mask_statistics: str = "pooled"
    mask_lo_pct: float = 0.15
    mask_hi_pct: float = 0.85
    mask_p: float = 10.0
    mask_q: float = 10.0
    mask_a: Optional[float] = None
    mask_b: Optional[float] = None
    mask_strict_printed: bool = False
    mask_gradient: bool = False

    # denoiser
    denoiser: str = "gaussian"
    denoiser_kernel: int = 3
    denoiser_sigma: float = 0.8
    denoiser_weights: Optional[str] = None

    # adversarial prior
    prior_source: str = "synthetic_oracle"
    prior_noise: float = 0.05
    daytime_checkpoint: Optional[str] = None

    # depth
    min_depth: float = 0.1
    max_depth: float = 100.0
    smoothness_mode: str = "disparity"
    ssim_alpha: float = 0.85

    # evaluation
    eval_every: int = 1
    eval_max_depth: float = 60.0
    eval_gt_mode: str = "dense"
    eval_median_scaling: bool = True

    # runtime
    num_workers: int = 0
    device: str = "cpu"
    dump_qualitative: bool = False
    progress: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        ParameterValidator.validate_non_negative(self.loss_weights())
        ParameterValidator.validate_choice(self.mask_mode, MASK_MODES, "mask_mode")
        ParameterValidator.validate_choice(self.mask_statistics, MASK_STATISTICS, "mask_statistics")
        ParameterValidator.validate_choice(self.enhancer_mode, ENHANCER_MODES, "enhancer_mode")
        ParameterValidator.validate_choice(self.prior_source, PRIOR_SOURCES, "prior_source")
        ParameterValidator.validate_choice(self.smoothness_mode, SMOOTHNESS_MODES, "smoothness_mode")
        ParameterValidator.validate_choice(self.eval_gt_mode, GT_MODES, "eval_gt_mode")
        ParameterValidator.validate_choice(self.denoiser, [k.value for k in DenoiserKind], "denoiser")
        RangeValidator.validate_interval(self.mask_lo_pct, 0.0, 1.0, "mask_lo_pct", low_open=True, high_open=True)
        RangeValidator.validate_interval(self.mask_hi_pct, 0.0, 1.0, "mask_hi_pct", low_open=True, high_open=True)
        if self.mask_lo_pct >= self.mask_hi_pct:
            raise ValidationError(
                f"mask_lo_pct must be below mask_hi_pct, got {self.mask_lo_pct} >= {self.mask_hi_pct}",
                field="mask_lo_pct,mask_hi_pct",
            )
        if self.mask_mode == "illumination" and self.enhancer_mode == "none":
            raise ValidationError(
                "mask_mode=illumination needs an enhancer (enhancer_mode joint or separate)",
                field="mask_mode",
                value=self.mask_mode,
                suggestions=["Use mask_mode=histogram or mask_mode=none without an enhancer"]
            )
        if (self.mask_a is None) != (self.mask_b is None):
            raise ValidationError("set both mask_a and mask_b or neither", field="mask_a,mask_b")
        if self.batch_size < 1 or self.num_stages < 1:
            raise ValidationError("batch_size and num_stages must be >= 1", field="batch_size,num_stages")

    def loss_weights(self) -> Dict[str, float]:
        return {
            "beta": self.beta, "gamma": self.gamma, "lambda_": self.lambda_, "mu": self.mu,
            "eta": self.eta, "zeta": self.zeta, "xi": self.xi, "rho": self.rho,
        }

    def denoiser_handle(self) -> DenoiserHandle:
        return DenoiserHandle.from_name(
            self.denoiser,
            kernel_size=self.denoiser_kernel,
            sigma_spatial=self.denoiser_sigma,
            weights_path=self.denoiser_weights,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def fingerprint(self) -> Dict[str, Any]:
        """Fields that must match for a resume."""
        return {k: v for k, v in self.to_dict().items() if k not in RUNTIME_FIELDS}

    def with_overrides(self, overrides: Mapping[str, Any]) -> 'TrainConfig':
        return replace(self, **coerce_values(overrides))


_FIELD_TYPES = typing.get_type_hints(TrainConfig)


def _coerce(key: str, raw: Any) -> Any:
    target = _FIELD_TYPES[key]
    optional = typing.get_origin(target) is Union and type(None) in typing.get_args(target)
    if optional:
        target = next(t for t in typing.get_args(target) if t is not type(None))
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if target is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if target is int:
            return int(text)
        if target is float:
            return float(text)
    except ValueError:
        raise ValidationError(
            f"config key '{key}' expects {target.__name__}, got {raw!r}",
            field=key,
            value=raw,
        )
    return text


def coerce_values(values: Mapping[str, Any]) -> Dict[str, Any]:
    """Lower-case keys, reject unknown ones and convert strings to field types."""
    normalized = {k.strip().lower(): v for k, v in values.items()}
    ParameterValidator.validate_known_keys(list(normalized), list(_FIELD_TYPES), "config")
    return {k: _coerce(k, v) for k, v in normalized.items()}


def parse_overrides(items) -> Dict[str, str]:
    """``["key=value", ...]`` → dict."""
    result = {}
    for item in items or []:
        if "=" not in item:
            raise ValidationError(
                f"override '{item}' is not key=value",
                field="set",
                value=item,
            )
        key, value = item.split("=", 1)
        result[key.strip()] = value.strip()
    return result


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None,
                defaults: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """
    Build a TrainConfig from defaults, an optional key=value file and overrides.

    ``defaults`` (e.g. environment values) sit between the dataclass defaults
    and the file.

    Raises:
        ValidationError: missing file, unknown key or an unparsable value
    """
    values: Dict[str, Any] = dict(defaults or {})
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}", field="config", value=str(path))
        from_file = {k: v for k, v in dotenv_values(path).items() if v is not None}
        values.update(from_file)
        logger.debug(f"Loaded {len(from_file)} config keys from {path}")
    values.update(overrides or {})
    return TrainConfig(**coerce_values(values))


def write_config(path: Union[str, Path], config: TrainConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        lines.append(f"{f.name}={'none' if value is None else value}")
    path.write_text("\n".join(lines) + "\n")
    return path
