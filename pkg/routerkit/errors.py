"""Exception and warning types shared across routerkit.

Every error carries a short machine ``code`` and the ``exit_code`` the CLI
returns when it escapes a subcommand.
"""


class RouterkitError(Exception):
    """Base class for all routerkit errors."""

    code = "error"
    exit_code = 2

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class DomainError(RouterkitError, ValueError):
    """A value lies outside the domain of an operation."""

    code = "domain"


class SingularParameterError(RouterkitError, ValueError):
    """A rate combination makes a formula divide by zero."""

    code = "singular"


class AxisTooCoarseError(RouterkitError, ValueError):
    """The frequency grid undersamples the broadening kernel."""

    code = "axis"


class DegenerateFieldError(RouterkitError, ValueError):
    """The mode field has no radial maximum to normalize by."""

    code = "field"


class DetectionError(RouterkitError):
    """No usable resonance feature was found in a series."""

    code = "detection"


class RankError(RouterkitError):
    """Too few independent data points for the free parameters."""

    code = "rank"


class PreconditionError(RouterkitError, ValueError):
    """An input violates an operation's stated precondition."""

    code = "precondition"


class InputError(RouterkitError):
    """Malformed file, argument or parameter record."""

    code = "input"


class ModelEvaluationError(RouterkitError, ArithmeticError):
    """A fit model returned non-finite values."""

    code = "evaluation"


class ConvergenceError(RouterkitError):
    """A fit finished without converging."""

    code = "convergence"
    exit_code = 3


class RouterkitWarning(UserWarning):
    """Recoverable numerical condition."""


class DegeneracyWarning(RouterkitWarning):
    """Fit parameters are not separately identifiable."""
