"""Exception types shared across the pipeline.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message text.
"""


class RehabSegError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RehabSegError):
    """Malformed input file (bad JSON line, bad CSV cell, bad config key)."""

    def __init__(self, message: str, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class FormatError(RehabSegError):
    """Structurally valid input that violates a format invariant."""


class ShapeError(RehabSegError):
    """Array or channel-count mismatch between related inputs."""


class ConfigError(RehabSegError):
    """Invalid configuration value or combination."""


class UnrecoverableChannelError(RehabSegError):
    """A channel with no observed values at all; interpolation impossible."""


class LabelCoverageError(RehabSegError):
    """Labels do not contain a segment required by the operation."""


class CapabilityError(RehabSegError):
    """The requested export is undefined for this model architecture."""


class NumericError(RehabSegError):
    """A non-finite value appeared where a finite one is required."""


class EmptyLossError(NumericError):
    """Every frame in the loss computation carries the ignore label."""
