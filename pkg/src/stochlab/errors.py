"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model or algorithm parameter is outside its valid domain."""


class DomainError(ValueError):
    """An input value lies outside the domain of a transformation."""


class ConvergenceError(RuntimeError):
    """An iterative procedure failed to converge within its budget."""


class UnknownExperiment(LookupError):
    pass


class ArbitrageError(ParameterError):
    """Binomial market parameters admit arbitrage (need d < r < u)."""
