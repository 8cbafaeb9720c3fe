"""Error types shared across the engine.

Kept deliberately small: configuration problems and numerical failures need
distinct exit codes at the CLI (1 and 2 respectively), everything else is a
plain ValueError.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 1)."""


class ShapeError(ValueError):
    """Array dimensions do not match the contract."""


class NotSolvedError(RuntimeError):
    """Router used before solve(); call solve() after accumulating."""


class NumericalError(RuntimeError):
    """Numerical failure — factorization breakdown, non-finite gradients
    (CLI exit code 2)."""
