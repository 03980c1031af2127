"""
Exception types raised by flowdag.

Every error derives from FlowDagError and from the builtin that matches its
nature, so callers may catch either.
"""


class FlowDagError(Exception):
    """Base class for all flowdag errors."""


class InvalidDimensionError(FlowDagError, ValueError):
    """Node count outside the supported range."""


class ForbiddenActionError(FlowDagError, ValueError):
    """Edge addition that is masked in the current state."""


class NotIdentifiedError(FlowDagError, ValueError):
    """Operation requires an identified topological sort."""


class InvalidDensityError(FlowDagError, ValueError):
    """Requested edge density cannot be realised by a DAG."""


class InvalidParameterError(FlowDagError, ValueError):
    """Generic out-of-range parameter."""


class InvalidGraphError(FlowDagError, ValueError):
    """Graph is cyclic or malformed."""


class DegenerateDataError(FlowDagError, ValueError):
    """Data cannot be scored (for example a zero-variance column)."""


class ShapeError(FlowDagError, ValueError):
    """Array or network dimensions do not agree."""


class DeadEndError(FlowDagError, RuntimeError):
    """Every action is masked."""


class TrainingDivergenceError(FlowDagError, RuntimeError):
    """Loss or gradient became non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class EmptyInputError(FlowDagError, ValueError):
    """An aggregate was requested over an empty collection."""


class UndefinedAurocError(FlowDagError, ValueError):
    """AUROC needs at least one positive and one negative pair."""


class TooLargeError(FlowDagError, ValueError):
    """Exhaustive enumeration requested beyond its size limit."""


class ConfigError(FlowDagError, ValueError):
    """Experiment configuration failed validation."""
