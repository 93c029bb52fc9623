"""Exception types raised across the package.

Everything user-facing derives from TrafficastError so the CLI can map
domain failures to exit code 1 while genuine bugs still surface as
ordinary tracebacks.
"""


class TrafficastError(Exception):
    """Base class for all domain errors."""


class ShapeError(TrafficastError):
    """Array dimensions do not conform to an operation's contract."""


class NumericError(TrafficastError):
    """A forward computation produced NaN or Inf."""


class TrainingAbort(NumericError):
    """Training stopped because a step produced non-finite values."""


class DataError(TrafficastError):
    """Malformed or inconsistent input data (CSV ingestion, windowing)."""


class ScaleError(TrafficastError):
    """Degenerate scaling range (constant series)."""


class MetricError(TrafficastError):
    """Metric cannot be computed (e.g. zero actual values for MAPE)."""


class ConfigError(TrafficastError):
    """Invalid configuration: schedules, policies, flag combinations."""


class TapeError(TrafficastError):
    """Backward pass invoked against a node the tape never produced."""


class GradCheckError(TrafficastError):
    """finite_diff_check preconditions violated (non-deterministic forward)."""


class CheckpointError(TrafficastError):
    """Base class for checkpoint persistence failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or structurally unreadable file."""


class CheckpointVersionError(CheckpointError):
    """Unrecognized format version."""


class CheckpointIntegrityError(CheckpointError):
    """Truncated file or CRC mismatch."""


class ManifestError(CheckpointError):
    """Parameter names/shapes do not match the model spec manifest."""
