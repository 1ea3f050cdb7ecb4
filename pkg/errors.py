#!/usr/bin/env python3
"""
Exception hierarchy for the panel GLARMA fitter
"""
from typing import Dict, List, Optional, Sequence


class GlarmaError(RuntimeError):
    """Root of every error raised by the fitter"""


class DomainError(GlarmaError, ValueError):
    """Argument outside the domain of a family function"""


class DegenerateProbabilityError(GlarmaError):
    """Conditional variance is numerically zero"""

    def __init__(self, message: str, series: Optional[str] = None, time: Optional[int] = None):
        self.series = series
        self.time = time
        where = []
        if series is not None:
            where.append(f"series {series}")
        if time is not None:
            where.append(f"t={time}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ContractError(GlarmaError, ValueError):
    """Shapes or parameter layouts do not match"""


class DivergenceError(GlarmaError):
    """The GLARMA recursion produced a non-finite state value"""

    def __init__(self, time: int, parameters: Dict[str, Sequence[float]], series: Optional[str] = None):
        self.time = time
        self.parameters = parameters
        self.series = series
        shown = ', '.join(f"{k}={list(map(float, v))}" for k, v in parameters.items())
        prefix = f"series {series}: " if series is not None else ""
        super().__init__(f"{prefix}non-finite W at t={time} with {shown}")


class QuadratureError(GlarmaError, ValueError):
    """Invalid quadrature request"""


class InnerModeError(GlarmaError):
    """Newton-Raphson for the random-effect mode failed"""

    def __init__(self, message: str, series: Optional[str] = None, grad_norm: Optional[float] = None):
        self.series = series
        self.grad_norm = grad_norm
        if series is not None:
            message = f"series {series}: {message}"
        if grad_norm is not None:
            message = f"{message} (last |grad|_inf={grad_norm:.3e})"
        super().__init__(message)


class SeriesEvaluationError(GlarmaError):
    """A per-series likelihood evaluation failed inside a panel evaluation"""

    def __init__(self, index: int, series: str, cause: Exception):
        self.index = index
        self.series = series
        self.cause = cause
        super().__init__(f"series #{index} ({series}) failed: {cause}")


class SingularInformationError(GlarmaError):
    """Negated Hessian is not positive definite"""

    def __init__(self, null_directions: List[Dict[str, float]]):
        self.null_directions = null_directions
        parts = []
        for direction in null_directions:
            parts.append(' + '.join(f"{w:.3g}*{name}" for name, w in direction.items()))
        super().__init__(f"observed information is singular along: {'; '.join(parts) or 'unknown'}")


class NonNestedModelsError(GlarmaError):
    """Reduced model is not nested in the full model"""


class ConfigError(GlarmaError):
    """Configuration failed validation"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("Configuration errors:\n" + "\n".join(f"  - {e}" for e in self.errors))


class DataError(GlarmaError):
    """Panel data failed validation"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("Data errors:\n" + "\n".join(f"  - {e}" for e in self.errors))


class StationarityWarning(UserWarning):
    """AR polynomial has a root on or inside the unit circle"""
