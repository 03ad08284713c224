"""Exception types.

Every error carries a machine-readable ``code`` (upper snake case) that the
command line tool prints and that tests match on.
"""


class InvisibleEITError(Exception):
    code = "ERROR"

    def __init__(self, message="", **details):
        super().__init__(message or self.code)
        self.details = details


# mesh / quadrature
class OmegaTooCloseToBoundary(InvisibleEITError):
    code = "OMEGA_TOO_CLOSE_TO_BOUNDARY"


class DegenerateElement(InvisibleEITError):
    code = "DEGENERATE_ELEMENT"


class UnsupportedDegree(InvisibleEITError):
    code = "UNSUPPORTED_DEGREE"


# potentials
class EvalAtElectrode(InvisibleEITError):
    code = "EVAL_AT_ELECTRODE"


class MapDegenerate(InvisibleEITError):
    code = "MAP_DEGENERATE"


# fem
class NonpositiveConductivity(InvisibleEITError):
    code = "NONPOSITIVE_CONDUCTIVITY"


class SupportViolation(InvisibleEITError):
    code = "SUPPORT_VIOLATION"


class NoConvergence(InvisibleEITError):
    code = "NO_CONVERGENCE"


class IncompatibleLoad(InvisibleEITError):
    code = "INCOMPATIBLE_LOAD"


# basis
class GramSingular(InvisibleEITError):
    code = "GRAM_SINGULAR"


class SeedInSpan(InvisibleEITError):
    code = "SEED_IN_SPAN"


# solver
class PositivityViolation(InvisibleEITError):
    code = "POSITIVITY_VIOLATION"


class MaxBackoffsExceeded(InvisibleEITError):
    code = "MAX_BACKOFFS_EXCEEDED"

    def __init__(self, message="", report=None, **details):
        super().__init__(message, **details)
        self.report = report


class NotMeanFree(InvisibleEITError):
    code = "NOT_MEAN_FREE"


# cem
class ArcsNotResolved(InvisibleEITError):
    code = "ARCS_NOT_RESOLVED"


# configuration / cli
class ParseError(InvisibleEITError):
    code = "PARSE_ERROR"

    def __init__(self, message="", line=None, column=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where, line=line, column=column)
        self.line = line
        self.column = column


class ValidationError(InvisibleEITError):
    code = "VALIDATION_ERROR"

    def __init__(self, message="", field=None):
        super().__init__(f"{field}: {message}" if field else message, field=field)
        self.field = field


class MissingArtifact(InvisibleEITError):
    code = "MISSING_ARTIFACT"
