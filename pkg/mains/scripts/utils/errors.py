"""
Exceptions raised by the MAINS pipeline. Every error names the offending
configuration; filter errors also carry the epoch where they happened.
"""


class MainsError(Exception):
    """ base class for all pipeline errors """

    def __init__(self, message: str, epoch: int = None, t: float = None):
        super().__init__(message)
        self.message = message
        self.epoch = epoch
        self.t = t

    def at_epoch(self, epoch: int, t: float):
        """ attach the epoch index/time the error surfaced at """
        self.epoch, self.t = epoch, t
        return self

    def __str__(self):
        if self.epoch is None:
            return self.message
        return f"{self.message} (epoch {self.epoch}, t={self.t:.3f} s)"


class DegenerateGeometryError(MainsError):
    """ stacked regressor X is underdetermined or rank deficient """


class DegenerateAnchorError(MainsError):
    """ anchor matrix A is rank deficient or too ill-conditioned """


class FilterDivergenceError(MainsError):
    """ covariance or nominal state became non-finite """


class SingularInnovationError(MainsError):
    """ innovation covariance S is not positive definite """


class RejectedSampleError(MainsError):
    """ measurement vector holds NaN/inf values """


class KeepOutError(MainsError):
    """ field requested inside a dipole keep-out radius """


class ScriptError(MainsError):
    """ trajectory script is invalid """


class DatasetError(MainsError):
    """ dataset files violate the schema """

    def __init__(self, message: str, path=None, row: int = None):
        where = ""
        if path is not None:
            where += f" [{path}"
            where += f", row {row}]" if row is not None else "]"
        super().__init__(message + where)
        self.path = path
        self.row = row


class ConfigError(MainsError):
    """ configuration file holds unknown keys or invalid values """


class EvaluationError(MainsError):
    """ metrics cannot be computed (e.g. empty evaluation segment) """
