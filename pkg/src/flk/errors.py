"""Exception hierarchy with stable machine-readable error codes.

Every error carries a ``code`` string that the CLI surfaces verbatim in its
error JSON, so downstream tooling can branch on failures without parsing
messages.  Validation-style errors exit with status 1, numerical failures
with status 2 (see ``flk.cli``).
"""


class FlkError(Exception):
    """Base class for all library errors."""

    code = "error"


class ValidationError(FlkError, ValueError):
    """Malformed or out-of-contract input."""

    code = "validation"


class SchemaError(ValidationError):
    """JSON input does not match the documented schema."""

    code = "schema"


class BoundsError(ValidationError):
    """Angle or parameter outside its configured bounds."""

    code = "bounds"


class InsufficientPointsError(ValidationError):
    """Fewer valid points than the operation requires."""

    code = "insufficient_points"


class UnderdeterminedError(ValidationError):
    """Not enough constraints to fit the requested parameters."""

    code = "underdetermined"


class CoverageError(ValidationError):
    """One or more landmarks have no valid source anywhere."""

    code = "coverage"

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class NumericalError(FlkError, ArithmeticError):
    """A numerical routine failed (divergence, NaN, ...)."""

    code = "numerical"


class BehindCameraError(NumericalError):
    """Point has non-positive projective depth."""

    code = "behind_camera"


class DegenerateGeometryError(NumericalError):
    """Geometric configuration too ill-conditioned to solve."""

    code = "degenerate_geometry"


class DegenerateRotationError(NumericalError):
    """6D rotation input is parallel/zero or matrix is not a rotation."""

    code = "degenerate_rotation"


class SamplingExhaustedError(NumericalError):
    """Rejection sampler hit its attempt budget without an accept."""

    code = "sampling_exhausted"


class EmptyResultError(NumericalError):
    """An operation produced no usable output (e.g. nothing liftable)."""

    code = "empty_result"
