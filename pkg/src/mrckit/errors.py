"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: input-side problems (parsing, schema,
configuration, scheduling constraints) exit with 2, numeric failures with 3.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ToolkitError):
    """Input file could not be parsed (malformed JSON, bad schema)."""


class DataError(ToolkitError):
    """A sample violates an invariant (bad span, empty candidate, ...)."""


class ConfigError(ToolkitError):
    """Invalid or inconsistent configuration."""


class TrainingError(ToolkitError):
    """A model could not be trained from the given inputs (e.g. empty corpus)."""


class ScheduleError(ToolkitError):
    """Requested schedule cannot be built from the given batch counts."""


class ShapeError(ToolkitError):
    """Tensor shapes inconsistent with the model configuration."""


class NumericError(ToolkitError):
    """Non-finite value encountered (divergence, bad gradient)."""
