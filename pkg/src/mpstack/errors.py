"""Exception types shared across the engine."""


class MpstackError(Exception):
    """Base class for all engine errors."""


class EmptyInstance(MpstackError):
    """An instance operation was asked to work on an empty alpha support."""


class ConstantDepth(MpstackError):
    """The depth map is constant; no multi-plane split is possible."""


class PlacementFailure(MpstackError):
    """A cutout or dragged instance cannot be placed inside the frame."""


class InvalidTarget(MpstackError):
    """The referenced plane is not a valid target for this operation."""


class UnknownPlane(MpstackError):
    """No plane with the given id exists in the stack."""


class OrderViolation(MpstackError):
    """Reorder arguments are given back-to-front; flip them."""


class InpaintUnavailable(MpstackError):
    """The registered inpainting provider failed or is misconfigured."""


class LoadError(MpstackError):
    """A manifest or bundle could not be loaded.

    ``field`` names the offending manifest entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnknownSession(MpstackError):
    """No session with the given id exists."""


class Busy(MpstackError):
    """Another writer currently holds this session."""


class SessionLimitExceeded(MpstackError):
    """The configured session cap has been reached."""
