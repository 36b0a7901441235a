from typing import Optional, Sequence

NUMERICAL_FAILURE = 1
ASSUMPTION_FAILURE = 2


class BlendMRACException(Exception):
    """Base exception for every failure raised by blendmrac.

    Attributes:
        code (int): The process exit code category (1 numerical, 2 specification/assumption).
        message (str): The error message.
        source (str): The module that raised the error, e.g. `matpoly` or `simulator`.
    """

    default_code = ASSUMPTION_FAILURE

    def __init__(self, message: str, source: str = "blendmrac", code: Optional[int] = None):
        """
        Initialize a new instance of the exception.

        Args:
            message (str): The error message.
            source (str): The source module of the error.
            code (int, optional): The exit code category. Defaults to the class default.
        """
        self.code = self.default_code if code is None else code
        self.message = message
        self.source = source
        super().__init__(self.message)

    def __str__(self) -> str:
        """
        Returns a string representation of the exception.

        Returns:
            str: The formatted string representation of the exception.
        """
        return f"[{self.source}] - [code:{self.code}]: {self.message}"


class DimensionError(BlendMRACException):
    """Raised when matrix or vector shapes are inconsistent."""


class CapacityExceeded(BlendMRACException):
    """Raised when entry-bound enumeration would produce more corners than the cap."""

    def __init__(self, count: int, cap: int, what: str = "corners", source: str = "matpoly"):
        self.count = count
        self.cap = cap
        message = f"enumeration would produce {count} {what}, above the cap of {cap}"
        if what == "corners":
            message += "; supply an explicit corner list instead"
        super().__init__(message, source=source)


class DegeneratePolytope(BlendMRACException):
    """Raised when a corner set has fewer than two distinct corners."""


class AssumptionViolated(BlendMRACException):
    """Raised when no point of the corner polytope satisfies the matching conditions."""


class MatchingInfeasible(BlendMRACException):
    """Raised when a corner admits no matching gains (it lies outside the matching set)."""

    def __init__(self, message: str, corner_index: Optional[int] = None, source: str = "matpoly"):
        self.corner_index = corner_index
        if corner_index is not None:
            message = f"corner {corner_index}: {message}"
        super().__init__(message, source=source)


class NotInHull(BlendMRACException):
    """Raised when a system matrix is outside the affine hull of the corner set."""


class RankCollapse(BlendMRACException):
    """Raised when the blended input matrix loses full column rank."""

    def __init__(self, sigma_min: float, tol: float, source: str = "controller"):
        self.sigma_min = sigma_min
        super().__init__(
            f"blended input matrix lost column rank (sigma_min={sigma_min:.3e} <= {tol:.1e})",
            source=source,
        )


class StateOutsidePi(BlendMRACException):
    """Raised when a weight estimate leaves the constraint set beyond tolerance."""

    default_code = NUMERICAL_FAILURE


class NumericalDivergence(BlendMRACException):
    """Raised when the integrated state becomes non-finite.

    Attributes:
        time (float): The last timestamp at which the state was finite.
    """

    default_code = NUMERICAL_FAILURE

    def __init__(self, time: float, source: str = "simulator"):
        self.time = time
        super().__init__(f"non-finite state after t={time!r} s", source=source)


class WindowTooSmall(BlendMRACException):
    """Raised when a regression window holds too few usable samples."""


class RangeError(BlendMRACException):
    """Raised when a requested time window exceeds the extent of a series."""


class ScenarioMismatch(BlendMRACException):
    """Raised when two scenarios meant for comparison differ beyond the controller mode."""

    def __init__(self, fields: Sequence[str], source: str = "simulator"):
        self.fields = list(fields)
        super().__init__(
            "scenarios differ beyond controller_mode in: {}".format(", ".join(self.fields)),
            source=source,
        )


class ScenarioFileError(BlendMRACException):
    """Raised when a scenario document fails to parse or validate.

    Attributes:
        line (int, optional): 1-based line number of the offending entry.
    """

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = path or "<scenario>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}", source="scenario_file")


class MissingColumns(BlendMRACException):
    """Raised when a series CSV lacks the columns a command needs."""

    def __init__(self, columns: Sequence[str], source: str = "report"):
        self.columns = list(columns)
        super().__init__("missing columns: {}".format(", ".join(self.columns)), source=source)


class SolverFailure(BlendMRACException):
    """Raised when a linear program ends without a decisive status.

    Attributes:
        status (int): The solver status code.
    """

    default_code = NUMERICAL_FAILURE

    def __init__(self, status: int, message: str, source: str = "matpoly"):
        self.status = status
        super().__init__(f"linear program ended with status {status}: {message}", source=source)
