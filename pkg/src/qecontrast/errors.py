"""Exception hierarchy shared across the package."""


class QEContrastError(Exception):
    """Base class for all package errors."""


class ConfigError(QEContrastError):
    """Invalid configuration value (dimension, rate, grid, ...)."""


class ContractError(QEContrastError):
    """A documented precondition was violated by the caller."""


class MalformedInstanceError(QEContrastError):
    """A QA instance violates its structural invariants."""


class ParseError(QEContrastError):
    """Dataset input could not be parsed.

    Carries ``failures``: a list of (line_number, reason) pairs, 1-based.
    """

    def __init__(self, failures):
        self.failures = list(failures)
        lines = "; ".join(f"line {n}: {reason}" for n, reason in self.failures)
        super().__init__(f"{len(self.failures)} bad record(s): {lines}")


class SchemaError(QEContrastError):
    """A record is syntactically valid but violates the declared schema."""


class DegenerateVectorError(QEContrastError):
    """A vector with (projected) norm below the 1e-12 floor reached a
    normalizing similarity; indicates a broken encoder, not clamped."""


class ReplayError(QEContrastError):
    """Backward call could not replay the dropout masks of its forward."""
