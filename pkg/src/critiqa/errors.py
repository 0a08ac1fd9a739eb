"""
Exception hierarchy for critiqa.

Every failure the pipeline reports on purpose derives from CritiqaError. The CLI
maps DataError, ModelError and ConfigError to exit code 2.
"""


class CritiqaError(Exception):
    """Base class for all critiqa errors."""


class ConfigError(CritiqaError, ValueError):
    """Invalid configuration value or configuration file."""


class DataError(CritiqaError):
    """Input data could not be used."""


class DataLoadError(DataError):
    """A corpus file is malformed or yields no usable examples."""


class AlignmentError(DataError):
    """An answer string cannot be aligned to passage tokens."""


class GenerationError(DataError):
    """Adversarial span generation has no replacement source."""


class ModelError(CritiqaError):
    """Model construction, graph or parameter failure."""


class ShapeError(ModelError, ValueError):
    """Operand shapes are incompatible for a graph operation."""


class GradientError(ModelError):
    """Backward pass or optimizer precondition violated."""


class CheckpointError(ModelError):
    """Checkpoint directory is unreadable or inconsistent."""


class FrozenCriticError(ModelError):
    """The frozen critic's parameters changed during actor training."""
