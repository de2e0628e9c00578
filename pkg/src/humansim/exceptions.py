"""Exception hierarchy shared by every subpackage."""


class HumanSimError(Exception):
    """Base class for all errors raised by humansim."""


class GeometryError(HumanSimError, ValueError):
    """Invalid or degenerate geometric input."""


class BvhParseError(HumanSimError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TooFewPointsError(HumanSimError, ValueError):
    pass


class DegenerateConfigurationError(HumanSimError, ValueError):
    pass


class DisconnectedGraphError(HumanSimError):
    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__(
            "covisibility graph is disconnected; unreachable cameras: "
            + ", ".join(self.unreachable)
        )


class AnchorNotObservedError(HumanSimError):
    pass


class ConfigError(HumanSimError, ValueError):
    """Scene configuration failed validation. ``path`` is the dotted key path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class FramingError(HumanSimError):
    """The tracked wrist was never acquired during the teleop start window."""


class JointAbsentError(HumanSimError, LookupError):
    """A required joint is missing from a pose or estimate."""


class TrackingLostError(HumanSimError):
    """The tracked wrist dropped out while the abort dropout policy is active."""
