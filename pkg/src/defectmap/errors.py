"""Exception and warning types shared across the package."""


class DefectMapError(Exception):
    """Base class for all package errors."""


class ParseError(DefectMapError):
    pass


class ValidationError(DefectMapError):
    """Mesh failed validation. ``indices`` lists the offending faces or edges."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = [] if indices is None else list(indices)


class EmptySubmesh(DefectMapError):
    pass


class DegenerateElement(DefectMapError):
    pass


class ConvergenceFailure(DefectMapError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RankDeficient(DefectMapError):
    pass


class NoNonzeroEigenvalue(DefectMapError):
    pass


class DimensionMismatch(DefectMapError):
    pass


class ConfigMismatch(DefectMapError):
    pass


class ResolutionUnachievable(DefectMapError):
    pass


class SubmeshTooSmall(DefectMapError):
    pass


# Warnings are not fatal; they are emitted with ``warnings.warn``.

class MeshWarning(UserWarning):
    pass


class SymmetryWarning(UserWarning):
    pass


class DegenerateRow(UserWarning):
    pass


class InsufficientPhase1(UserWarning):
    pass


class AmbiguousMatch(UserWarning):
    pass


class SubmeshTooSmallWarning(UserWarning):
    pass
