"""Exception types that map onto the CLI exit codes."""


class DataError(Exception):
    """Bad or inconsistent input data / files (exit code 2)."""


class NumericalError(Exception):
    """Non-finite values or failed numerical guards at run time (exit code 3)."""
