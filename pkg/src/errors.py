"""
Exception hierarchy for MMM mediation fitting, inference and I/O.
"""
from typing import Any, Dict, Optional


class MMMError(Exception):
    """Base exception for all mediation-analysis errors."""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.context: Dict[str, Any] = dict(context or {})
        super().__init__(self._render())

    def _render(self) -> str:
        if not self.context:
            return self.message
        labels = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"[{labels}] {self.message}"

    def with_context(self, **context: Any) -> "MMMError":
        """Return a copy of this error with extra context labels (stage, column, ...)."""
        merged = {**context, **self.context}
        clone = type(self)(self.message, merged)
        clone.__cause__ = self
        return clone


class DimensionMismatchError(MMMError, ValueError):
    """Blocks or vectors disagree on a shared dimension."""
    pass


class NonFiniteInputError(MMMError, ValueError):
    """NaN or infinite entry found in input data."""
    pass


class EmptyBlockError(MMMError, ValueError):
    """A required block has zero columns."""
    pass


class DegenerateColumnError(MMMError, ValueError):
    """A column has zero l2-norm and cannot be normalized."""
    pass


class ShapeMismatchError(MMMError, ValueError):
    """Two matrices that must share a shape do not."""
    pass


class NoConvergenceError(MMMError):
    """Coordinate descent hit max_iterations before meeting the tolerance."""
    pass


class ZeroNormColumnError(MMMError, ValueError):
    """A design column is all zeros and its coordinate update has no curvature."""
    pass


class MissingBlockError(MMMError, ValueError):
    """The mediator or outcome block needed by an operation is absent."""
    pass


class IndexOutOfRangeError(MMMError, IndexError):
    """An exposure, mediator or outcome index lies outside the fitted shape."""
    pass


class SingularGramError(MMMError, ValueError):
    """A Gram matrix is (numerically) singular."""
    pass


class UnnormalizedDirectionError(MMMError, ValueError):
    """The direction vector of a standardized statistic is not of unit norm."""
    pass


class EmptySupportError(MMMError, ValueError):
    """The inspected coefficient column has no nonzero entries."""
    pass


class BootstrapFailureError(MMMError):
    """Too many bootstrap replicates failed to fit."""
    pass


class BlockOutOfRangeError(MMMError, ValueError):
    """A ground-truth block falls outside the coefficient matrix."""
    pass


class ZeroTruthNormError(MMMError, ValueError):
    """NRMSE is undefined for an all-zero truth matrix."""
    pass


class GridEmptyError(MMMError, ValueError):
    """A cross-validation penalty grid has no candidates."""
    pass


class TooFewRowsError(MMMError, ValueError):
    """Not enough rows for the requested number of folds."""
    pass


class HeaderMismatchError(MMMError, ValueError):
    """Column names of new data disagree with the training metadata."""
    pass


class InputFormatError(MMMError, ValueError):
    """A data or model file could not be parsed."""
    pass


class CellAbortedError(MMMError):
    """A simulation cell produced no usable replicate."""
    pass
