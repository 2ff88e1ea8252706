"""
Validation utilities for nightdepth operations.

Every rejected input in the package surfaces as a ValidationError naming the
offending field, pixel, line or frame, plus a short list of suggested fixes.
The tool server turns these into structured error responses instead of
tracebacks.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple
import math

import torch


class ValidationError(Exception):
    """Custom exception for validation failures with helpful context."""

    def __init__(self, message: str, field: str = None, value: Any = None, suggestions: List[str] = None):
        self.field = field
        self.value = value
        self.suggestions = suggestions or []
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary format for tool responses."""
        result = {"error": str(self)}
        if self.field:
            result["invalid_field"] = self.field
        if self.value is not None:
            result["invalid_value"] = self.value
        if self.suggestions:
            result["suggestions"] = self.suggestions
        return result


class NonFiniteLossError(ValidationError):
    """Raised when a loss term or a parameter gradient stops being finite."""


class ShapeValidator:
    """Validates tensor shapes."""

    @classmethod
    def validate_same_shape(cls, a: torch.Tensor, b: torch.Tensor, field_name: str) -> None:
        """
        Validate that two tensors have identical shapes.

        Args:
            a: First tensor
            b: Second tensor
            field_name: Name used in the error message

        Raises:
            ValidationError: If shapes differ
        """
        if tuple(a.shape) != tuple(b.shape):
            raise ValidationError(
                f"{field_name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}",
                field=field_name,
                value=[list(a.shape), list(b.shape)],
                suggestions=["Resize both inputs to the same resolution before calling"]
            )

    @classmethod
    def validate_spatial_match(cls, a: torch.Tensor, b: torch.Tensor, field_name: str) -> None:
        """Validate that two B×C×H×W tensors share batch and spatial size."""
        if a.dim() != 4 or b.dim() != 4:
            raise ValidationError(
                f"{field_name}: expected 4-D B×C×H×W tensors, got {a.dim()}-D and {b.dim()}-D",
                field=field_name,
                suggestions=["Add batch/channel dimensions with unsqueeze"]
            )
        if a.shape[0] != b.shape[0] or a.shape[-2:] != b.shape[-2:]:
            raise ValidationError(
                f"{field_name}: spatial mismatch {tuple(a.shape)} vs {tuple(b.shape)}",
                field=field_name,
                value=[list(a.shape), list(b.shape)],
            )

    @classmethod
    def validate_rank(cls, tensor: torch.Tensor, rank: int, field_name: str) -> None:
        if tensor.dim() != rank:
            raise ValidationError(
                f"{field_name} must be {rank}-D, got shape {tuple(tensor.shape)}",
                field=field_name,
                value=list(tensor.shape),
            )


class RangeValidator:
    """Validates numeric ranges and finiteness."""

    @classmethod
    def first_bad_index(cls, bad: torch.Tensor) -> Tuple[int, ...]:
        return tuple(int(i) for i in torch.nonzero(bad)[0].tolist())

    @classmethod
    def validate_finite_positive(cls, tensor: torch.Tensor, field_name: str) -> None:
        """
        Validate that every value is finite and strictly positive.

        Args:
            tensor: Tensor of shape B×1×H×W (or any shape)
            field_name: Name of the field for error reporting

        Raises:
            ValidationError: Naming the first offending element index
        """
        non_finite = ~torch.isfinite(tensor)
        if bool(non_finite.any()):
            index = cls.first_bad_index(non_finite)
            raise ValidationError(
                f"{field_name} has a non-finite value at index {index}",
                field=field_name,
                value=list(index),
                suggestions=["Check the network output for NaN/Inf before projecting"]
            )
        non_positive = tensor <= 0
        if bool(non_positive.any()):
            index = cls.first_bad_index(non_positive)
            raise ValidationError(
                f"{field_name} must be strictly positive, found {float(tensor[index])} at index {index}",
                field=field_name,
                value=list(index),
            )

    @classmethod
    def validate_interval(cls, value: float, low: float, high: float, field_name: str,
                          low_open: bool = False, high_open: bool = False) -> float:
        """Validate low <= value <= high (optionally open at either end)."""
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise ValidationError(
                f"{field_name} must be a finite number, got {value!r}",
                field=field_name,
                value=value,
            )
        too_low = value <= low if low_open else value < low
        too_high = value >= high if high_open else value > high
        if too_low or too_high:
            left = "(" if low_open else "["
            right = ")" if high_open else "]"
            raise ValidationError(
                f"{field_name}={value} outside {left}{low}, {high}{right}",
                field=field_name,
                value=value,
            )
        return float(value)


class ParameterValidator:
    """Validates general parameter structures and types."""

    @classmethod
    def validate_choice(cls, value: str, valid: Sequence[str], field_name: str) -> str:
        """
        Validate an enumerated string parameter.

        Raises:
            ValidationError: If value is not one of valid
        """
        if value not in valid:
            raise ValidationError(
                f"{field_name} invalid value '{value}'",
                field=field_name,
                value=value,
                suggestions=[
                    f"Use one of: {list(valid)}",
                    "Check spelling and case sensitivity"
                ]
            )
        return value

    @classmethod
    def validate_non_negative(cls, values: Dict[str, float]) -> None:
        negative = {k: v for k, v in values.items() if v < 0}
        if negative:
            raise ValidationError(
                f"weights must be >= 0, got {negative}",
                field=",".join(negative),
                value=negative,
            )

    @classmethod
    def validate_known_keys(cls, keys: Sequence[str], valid: Sequence[str], source: str) -> None:
        unknown = [k for k in keys if k not in valid]
        if unknown:
            raise ValidationError(
                f"{source}: unknown keys {unknown}",
                field="keys",
                value=unknown,
                suggestions=[f"Valid keys: {sorted(valid)}"]
            )


def require_non_empty(count: int, field_name: str, suggestion: Optional[str] = None) -> None:
    if count <= 0:
        raise ValidationError(
            f"{field_name} is empty",
            field=field_name,
            value=count,
            suggestions=[suggestion] if suggestion else [],
        )
