"""Exception types shared across the package.

Every error raised by gridflex derives from :class:`GridflexError`, so the
CLI can catch one base type and render a machine-readable summary.
"""

from __future__ import annotations


class GridflexError(Exception):
    """Base class for all gridflex errors."""


class NonConvergence(GridflexError):
    """Power-flow fixed point diverged or exceeded the sweep budget."""


class OracleFailure(GridflexError):
    """A reference load flow required by an estimator or verifier failed."""


class InvalidPerturbation(GridflexError):
    """Finite-difference step size is not strictly positive."""


class Underdetermined(GridflexError):
    """Too few measurement samples for the requested coefficient fit."""


class RankDeficient(GridflexError):
    """Collinear injections make the least-squares fit singular.

    ``columns`` holds the labels of the dependent regressor columns.
    """

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class UnknownNode(GridflexError):
    """A node id is not known to the model it was used with."""


class MissingVariable(GridflexError):
    """A candidate point does not cover every decision variable."""


class SolveFailed(GridflexError):
    """The conic solve did not return a usable optimal point."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class InconsistentScenario(GridflexError):
    """Scenario pieces do not fit together; ``defects`` lists each problem."""

    def __init__(self, defects: list[str]):
        super().__init__("; ".join(defects))
        self.defects = tuple(defects)


class InvalidDirection(GridflexError):
    """Direction vector (alpha, beta) must be nonzero."""


class InvalidThreshold(GridflexError):
    """Service ramp threshold must be strictly positive."""


class MismatchedScenario(GridflexError):
    """Envelopes being compared come from different scenarios or steps."""


class UnknownScheme(GridflexError):
    """Coordination scheme name is not one of the supported kinds."""


class ParseError(GridflexError):
    """A data file failed to parse; carries file, line and column context."""

    def __init__(self, message: str, file: str = "", line: int = 0, column: str = ""):
        ctx = file
        if line:
            ctx += f":{line}"
        if column:
            ctx += f" (column {column})"
        super().__init__(f"{ctx}: {message}" if ctx else message)
        self.file = file
        self.line = line
        self.column = column


class CrossRefError(GridflexError):
    """A file references an element that does not exist elsewhere."""


class ValidationError(GridflexError):
    """Aggregated validation failures for a loaded scenario."""

    def __init__(self, issues: list[str]):
        super().__init__("; ".join(issues))
        self.issues = tuple(issues)
