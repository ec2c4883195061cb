"""Exception hierarchy. The CLI maps these onto exit codes."""


class RoughError(Exception):
    """Base class for library errors."""


class ParseError(RoughError):
    """Malformed input file or expression."""


class ValidationError(RoughError):
    """Input parsed but violates a mathematical precondition."""


class DomainError(ValidationError):
    """Argument outside the domain of a map (e.g. log of a non-unit tensor)."""


class ShapeError(ValidationError):
    """Dimension or truncation level mismatch."""


class CapacityError(ValidationError):
    """Requested size beyond the supported envelope."""


class NumericError(RoughError):
    """An iteration failed to converge or a bound could not be certified."""


class SewingError(NumericError):
    """Dyadic refinement did not contract."""

    def __init__(self, msg: str, theta: float | None = None):
        super().__init__(msg)
        self.theta = theta
