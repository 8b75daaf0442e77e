"""Shared exception types."""


class InvariantError(RuntimeError):
    """An internal invariant was violated (CLI exit code 3)."""
