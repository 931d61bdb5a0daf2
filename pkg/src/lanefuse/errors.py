"""Exception taxonomy shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 1, input/data errors -> 2,
backend errors -> 3.
"""


class LanefuseError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(LanefuseError):
    """Bad or unresolvable configuration (profiles, parameters, policies)."""


class InvalidInputError(LanefuseError):
    """Numeric input outside its domain (non-finite logit, score out of range)."""


class IncompleteAssessmentError(LanefuseError):
    """Backend output missing for an active factor; message names the factor."""


class EmptyInputError(LanefuseError):
    """An operation that needs at least one element received none."""


class MapParseError(LanefuseError):
    """Map file could not be parsed; message carries file/field context."""


class MapValidationError(LanefuseError):
    """Parsed map data violates a structural invariant."""


class LaneNotFoundError(LanefuseError):
    """A modification referenced a lane_id absent from the map."""


class DegenerateGeometryError(LanefuseError):
    """Geometry too degenerate to proceed (collinear ICP correspondences,
    coincident lanes added with zero offset)."""


class EmptyFusionError(LanefuseError):
    """Fusion produced no usable points."""


class BackendError(LanefuseError):
    """Base class for scorer-backend failures."""


class TransportError(BackendError):
    """Network failure that persisted through retries."""


class ProtocolError(BackendError):
    """Backend answered with a malformed or out-of-contract response."""


class ResponseValidationError(BackendError):
    """Backend response parsed fine but carries values outside their range."""


class ReplayMissError(BackendError):
    """Replay log has no record for the requested (image, prompt) key."""
