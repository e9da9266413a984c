"""Exception hierarchy shared across the package."""


class DotinError(Exception):
    """Base class for all package errors."""


class DimensionError(DotinError, ValueError):
    """Operand shapes do not agree."""


class RankError(DotinError, ValueError):
    """A tensor has the wrong rank for the operation (e.g. non-scalar loss)."""


class EmptySupportError(DotinError, ValueError):
    """A normalization was asked to run over an empty support."""


class DomainError(DotinError, ValueError):
    """An input lies outside the operation's domain (e.g. negative weights)."""


class IngestionError(DotinError, OSError):
    """A mandatory dataset file is missing or unreadable."""


class ConsistencyError(DotinError, ValueError):
    """Dataset files contradict each other."""


class SpecError(DotinError, ValueError):
    """A generation, split or configuration request is invalid."""


class GenerationError(DotinError, ValueError):
    """A random graph edit could not be generated."""


class MetricError(DotinError, ValueError):
    """A metric is undefined for the given inputs."""


class DivergenceError(DotinError, FloatingPointError):
    """Training produced a non-finite loss."""


class ConfigError(DotinError, ValueError):
    """A configuration file or override is malformed."""
