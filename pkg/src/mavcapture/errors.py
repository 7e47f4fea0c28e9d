"""Exception types shared by every module."""


class InvalidInput(ValueError):
    """Non-finite or out-of-domain argument to an operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(ArithmeticError):
    """A factorization or update failed; carries a diagnostic message."""


class NetDivergence(ArithmeticError):
    """Net integration blew up."""

    def __init__(self, t: float, norm: float):
        super().__init__(f"net state diverged at t={t:.6f} s (|s|_inf={norm:.3e})")
        self.t = t
        self.norm = norm
