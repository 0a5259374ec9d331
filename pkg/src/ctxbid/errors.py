"""Exception types raised across the package."""


class CtxBidError(Exception):
    """Base class for all package errors."""


class SupportError(CtxBidError, ValueError):
    """A point lies outside the support of a noise density."""


class ConvergenceError(CtxBidError, RuntimeError):
    """An iterative routine hit its iteration budget."""


class DegenerateError(CtxBidError, ValueError):
    """Input data cannot support the requested fit."""


class NumericalError(CtxBidError, FloatingPointError):
    """A loss produced a non-finite value."""


class ConfigError(CtxBidError, ValueError):
    """An experiment or environment configuration is infeasible."""


class InsufficientDataError(CtxBidError, ValueError):
    """Too few points for a regression."""
