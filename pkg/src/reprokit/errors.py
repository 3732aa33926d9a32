"""Exception hierarchy shared by every reprokit module."""


class ReprokitError(Exception):
    """Base class for all errors raised by reprokit."""


class ShapeError(ReprokitError, ValueError):
    pass


class RangeError(ReprokitError, ValueError):
    pass


class CapacityError(ReprokitError, ValueError):
    """A layout or label mapping asks for more slots than exist."""


class AssumptionError(ReprokitError, ValueError):
    """Raised when d_T > d_S, K_T > K_S or a mapping is not one-to-one."""


class CheckpointError(ReprokitError):
    """Malformed checkpoint file. ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataFormatError(ReprokitError, ValueError):
    pass


class DivergenceError(ReprokitError, FloatingPointError):
    """Training produced a non-finite value; ``state`` holds the last good parameters."""

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace


class ProtocolError(ReprokitError):
    pass


class TransportError(ReprokitError):
    """The black-box child process died or closed its pipe mid-request."""

    def __init__(self, message, samples_sent=0, samples_answered=0):
        super().__init__(message)
        self.samples_sent = samples_sent
        self.samples_answered = samples_answered


class ConfigError(ReprokitError, ValueError):
    pass


class UnsupportedModeError(ReprokitError):
    pass
