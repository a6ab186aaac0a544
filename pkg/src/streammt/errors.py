"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data and file-format problems exit 2, numeric failures exit 3.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(ToolkitError):
    """Invalid parameter or configuration value; names the offending field."""


class ContractError(ToolkitError):
    """An operation was called outside its documented preconditions."""


class DataError(ToolkitError):
    """Input data is malformed or inconsistent (parse errors, missing pairs)."""


class FormatError(DataError):
    """A binary container has the wrong magic, version, or header kind."""


class CorruptionError(DataError):
    """A binary container is structurally damaged (truncation, bad manifest)."""


class ModelStateError(ToolkitError):
    """Model parameters are unusable (non-finite values, untrained state)."""


class TrainingDivergedError(ToolkitError):
    """Loss became NaN/Inf during optimization; message names the step."""


class GradientCheckError(ToolkitError):
    """Analytic and finite-difference gradients disagree beyond tolerance."""


class SessionStateError(ToolkitError):
    """A streaming session method was called in the wrong lifecycle state."""


class MetricError(ToolkitError):
    """A metric was asked to score an invalid or empty input set."""
