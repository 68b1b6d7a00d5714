"""Exception types shared across the toolkit."""


class MeetpipeError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(MeetpipeError):
    """Invalid parameter combination or malformed config file."""


class ShapeError(MeetpipeError):
    """Array arguments with incompatible shapes or sample rates."""


class GeometryError(MeetpipeError):
    """Source or microphone placed outside the room, or degenerate layout."""


class SchedulingError(MeetpipeError):
    """Utterance scheduling could not satisfy the requested constraints."""


class EstimationError(MeetpipeError):
    """A mask estimator failed or returned ill-formed output."""


class OracleUnavailableError(MeetpipeError):
    """Ideal masks or references requested without simulator ground truth."""


class UndefinedMetricError(MeetpipeError):
    """Metric has no defined value for the given inputs (e.g. empty reference)."""


class FormatError(MeetpipeError):
    """Malformed RTTM, transcript or manifest file."""


class BoundsError(MeetpipeError):
    """Requested time span lies outside the available audio."""
