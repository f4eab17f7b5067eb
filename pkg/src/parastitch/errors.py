"""Exception classes shared across the package."""


class StitchError(Exception):
    """Base class for all parastitch errors."""


class DegenerateConfiguration(StitchError):
    """Point configuration cannot determine the requested model."""


class PointAtInfinity(StitchError):
    """Perspective division denominator vanished."""


class SingularUpdate(StitchError):
    """An optimization step produced a numerically singular model."""


class EmptyResult(StitchError):
    """A filtering operation removed every element."""


class DimensionMismatch(StitchError):
    """File dimensions disagree with the expected image size."""


class DecodeError(StitchError):
    """File exists but cannot be decoded in the required format."""


class EmptyOverlap(StitchError):
    """No target pixel maps into the reference frame."""


class EmptyRegion(StitchError):
    """A required image region (overlap or non-overlap) is empty."""


class OutOfBounds(StitchError):
    """A point lies outside the image it belongs to."""


class NoModelFound(StitchError):
    """Model search could not produce a single supported homography."""


class CanvasOverflow(StitchError):
    """Output canvas dimensions exceed the safety limit."""


class SingularMap(StitchError):
    """A warp that must be invertible is not."""


class InvalidSpec(StitchError):
    """Synthetic scene specification is inconsistent."""
