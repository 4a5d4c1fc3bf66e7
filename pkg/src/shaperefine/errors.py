"""Exception taxonomy shared by all shaperefine modules."""


class ShapeRefineError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(ShapeRefineError):
    """A file does not conform to its declared on-disk format."""


class TruncationError(FormatError):
    """A file's payload length disagrees with its header."""


class ShapeError(ShapeRefineError):
    """Array or volume shapes are incompatible with an operation."""


class ConfigError(ShapeRefineError):
    """A configuration value violates its constraints."""


class EmptyShapeError(ShapeRefineError):
    """A slice or volume has no foreground where foreground is required."""


class DegenerateShapeError(ShapeRefineError):
    """A shape is too small or too flat to carry contour information."""


class MetricUndefinedError(ShapeRefineError):
    """A metric has no defined value for the given inputs."""


class DictionaryError(ShapeRefineError):
    """Shape-dictionary build or query failure."""


class EvaluationError(ShapeRefineError):
    """A numeric evaluation produced a non-finite result."""


class TrainingError(ShapeRefineError):
    """Training aborted; the message names the offending parameter."""
