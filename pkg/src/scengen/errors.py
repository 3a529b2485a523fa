"""Exception types shared across the package.

CLI maps ConfigError/UsageError-like failures to exit code 2 and
everything else raised from a command to exit code 1.
"""


class ScengenError(Exception):
    """Base class for package errors."""


class ConfigError(ScengenError):
    """Invalid configuration value, missing file, unknown name."""


class ParseError(ScengenError):
    """Malformed input data; carries a location when known."""

    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


class SchemaError(ParseError):
    """Input file is missing a required column."""


class StructuralError(ScengenError):
    """Dimension or shape mismatch between components."""


class TrainingError(ScengenError):
    """Training diverged (NaN/Inf loss or gradient) or buffers unusable."""
