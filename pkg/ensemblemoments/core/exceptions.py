class DomainError(ValueError):
    """A basis order, a normalized parameter mu or a raw parameter beta is out of range."""

    pass


class InvalidStateError(ValueError):
    pass


class IntegrationDivergedError(ArithmeticError):
    """
    Raised when a rollout or a moment integration produces a non-finite state.

    :param beta: The parameter value of the diverging ensemble member, or None when the
        moment system itself diverged
    :param step: Index of the integration step at which the state became non-finite
    """

    def __init__(self, message, beta=None, step=None):
        super().__init__(message)
        self.beta = beta
        self.step = step


class ResolutionError(ValueError):
    pass


class ConstructionError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


class ScenarioValidationError(ValueError):
    """Collects every problem found in a scenario file, each prefixed by its field path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__(
            "Invalid scenario:\n" + "\n".join("  - " + e for e in self.errors)
        )


class SolverNotConvergedError(RuntimeError):
    def __init__(self, message, loop_index=None, report=None):
        super().__init__(message)
        self.loop_index = loop_index
        self.report = report
