"""Exception hierarchy shared by the solver modules."""


class NlSchwarzError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(NlSchwarzError, ValueError):
    pass


class SingularMatrixError(NlSchwarzError):
    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} ({where})")
        self.where = where


class BreakdownError(NlSchwarzError):
    """Arnoldi produced a (numerically) zero vector while the residual is not small."""


class EvaluationError(NlSchwarzError):
    """A nonlinear evaluation failed; the outer Newton safeguard may retry with a shorter step."""


class NonPhysicalDeformationError(EvaluationError):
    def __init__(self, element, det):
        super().__init__(f"det F = {det:.3e} <= 0 in element {element}")
        self.element = element
        self.det = det


class NonFiniteError(EvaluationError):
    pass


class InnerDivergenceError(EvaluationError):
    def __init__(self, label, residual, iterations):
        super().__init__(
            f"inner Newton on {label} did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.label = label
        self.residual = residual
        self.iterations = iterations


class CoarseSpaceError(NlSchwarzError):
    """The decomposition does not admit an RGDSW coarse space."""


class StaleStateError(NlSchwarzError):
    pass
