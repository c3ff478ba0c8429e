"""Exceptions raised by the laboratory. Only the CLI turns them into exit codes."""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LabError):
    """An input, config entry or parameter is invalid. ``field`` names it."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class SynthesisError(LabError):
    """Gaussian synthesis found a spectral coefficient below tolerance."""

    def __init__(self, mode: tuple, value: float, tolerance: float):
        self.mode = mode
        self.value = value
        self.tolerance = tolerance
        super().__init__(
            f"negative spectral coefficient {value:.3e} at mode {mode} "
            f"(tolerance {tolerance:.3e})"
        )


class UnsupportedModelError(LabError):
    """The requested estimator has no implementation for this field model."""

    def __init__(self, model_tag: str, operation: str, detail: Optional[str] = None):
        self.model_tag = model_tag
        self.operation = operation
        msg = f"unsupported: {operation} for model {model_tag}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class QuadratureError(LabError):
    """Adaptive quadrature did not reach its tolerance."""


class EnumerationCapError(LabError):
    """An oracle instance exceeds the enumeration caps."""
