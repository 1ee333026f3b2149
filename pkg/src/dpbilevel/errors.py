"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid constants, budgets, overrides, or config files."""


class AssumptionViolationError(RuntimeError):
    """A declared regularity assumption failed at runtime (e.g. H_yy not SPD)."""


class NonConvergenceError(RuntimeError):
    """Inner solver exhausted its iteration budget before certifying accuracy."""


class SizeCapError(ValueError):
    """A requested exact computation exceeds its hard size cap."""


class SamplerFailure(RuntimeError):
    """Rejection sampler hit its restart cap without accepting a point."""
