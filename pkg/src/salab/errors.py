"""Exception hierarchy shared by all salab modules."""


class SALabError(Exception):
    """Base class for every error raised by salab."""


class LayoutError(SALabError, ValueError):
    """A chain state or parameter vector has the wrong shape."""


class DomainError(SALabError, ValueError):
    """A parameter lies outside the range where the model is defined."""


class ArgumentError(SALabError, ValueError):
    """Inconsistent call arguments, e.g. a burn-in longer than the run."""


class CapabilityError(SALabError, TypeError):
    """The object lacks something the operation needs (a mean field, a closed form...)."""


class StructureError(SALabError, ValueError):
    """A Markov transition matrix is not irreducible or not stochastic."""


class SpectrumError(SALabError, ValueError):
    """A matrix that must be Hurwitz is not."""


class NumericalError(SALabError, ArithmeticError):
    """A linear system is singular to working precision."""


class DivergenceError(SALabError, ArithmeticError):
    """The iterates left the ball of radius 1e12 or became non-finite."""

    def __init__(self, step: int, message: str | None = None):
        self.step = int(step)
        super().__init__(message or f"iterate diverged at step {self.step}")


class ConfigError(SALabError, ValueError):
    """Invalid experiment configuration; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
