from typing import Any, Optional


class JumpwaveError(Exception):
    """Base failure carrying a machine-readable code and the CLI exit code."""

    exit_code = 3
    code = "ERROR"

    def __init__(self, detail: str, *, code: Optional[str] = None, **context: Any):
        super().__init__(detail)
        self.detail = detail
        if code is not None:
            self.code = code
        self.context = context

    def to_record(self) -> dict:
        return {
            "code": self.code,
            "detail": self.detail,
            "exit_code": self.exit_code,
            "context": {key: _plain(value) for key, value in self.context.items()},
        }


class ArgumentError(JumpwaveError, ValueError):
    exit_code = 2
    code = "ARGUMENT"


class DomainError(ArgumentError):
    code = "OUTSIDE_DOMAIN"


class AmbiguityError(ArgumentError):
    code = "ON_INTERFACE"


class GeometryError(JumpwaveError, ValueError):
    exit_code = 2
    code = "GEOMETRY"


class ConfigurationError(JumpwaveError, ValueError):
    exit_code = 2
    code = "CONFIGURATION"


class RegionError(JumpwaveError, ValueError):
    exit_code = 2
    code = "REGION"


class NumericError(JumpwaveError, RuntimeError):
    exit_code = 3
    code = "NUMERIC"

    def __init__(self, detail: str, *, residual: Optional[float] = None, **context: Any):
        super().__init__(detail, residual=residual, **context)
        self.residual = residual


class PartialResultError(NumericError):
    code = "PARTIAL_RESULT"

    def __init__(self, detail: str, *, best: Any = None, **context: Any):
        super().__init__(detail, **context)
        self.best = best


class RescalingError(NumericError):
    code = "OVERFLOW_GUARD"


class SpectrumTruncatedWarning(UserWarning):
    code = "SPECTRUM_TRUNCATED"


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    if isinstance(value, float):
        return value if value == value else None
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)
