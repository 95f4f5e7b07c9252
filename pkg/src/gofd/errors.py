"""Exception hierarchy shared by all gofd modules."""


class GofdError(Exception):
    """Base class for every error raised by gofd."""


class DegenerateElement(GofdError, ValueError):
    pass


class EmptyMesh(GofdError, ValueError):
    pass


class UnknownMeshKind(GofdError, ValueError):
    pass


class DegenerateMesh(GofdError, ValueError):
    pass


class GridTooFine(GofdError, MemoryError):
    def __init__(self, message, required_bytes=None):
        super().__init__(message)
        self.required_bytes = required_bytes


class IndexOutOfRange(GofdError, IndexError):
    pass


class InvalidOrder(GofdError, ValueError):
    pass


class InvalidParameter(GofdError, ValueError):
    pass


class QuadratureTooCoarse(GofdError, ValueError):
    pass


class QuadratureTooLarge(GofdError, MemoryError):
    pass


class NumericalInconsistency(GofdError, ArithmeticError):
    pass


class ParameterMismatch(GofdError, ValueError):
    pass


class DenseTooLarge(GofdError, MemoryError):
    pass


class RankDeficiencyRisk(GofdError):
    def __init__(self, message, vertices=()):
        super().__init__(message)
        self.vertices = list(vertices)


class PreconditionerFailure(GofdError, ArithmeticError):
    pass


class NotConverged(GofdError):
    """CG hit its iteration cap; the best iterate and report are attached."""

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report


class InvertedElement(GofdError, ValueError):
    pass


class MeshMotionStalled(GofdError):
    def __init__(self, message, mesh=None):
        super().__init__(message)
        self.mesh = mesh


class ParseError(GofdError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
