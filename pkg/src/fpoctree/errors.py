"""Error taxonomy shared across the package and mapped to CLI exit codes."""


class NumericError(RuntimeError):
    """Optimization or evaluation produced non-finite values."""
