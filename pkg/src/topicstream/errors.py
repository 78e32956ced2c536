"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: InputError -> 2, SessionError -> 3.
"""


class InputError(ValueError):
    """Bad or inconsistent input data (files, parameters, references)."""


class FormatError(InputError):
    """A data file violates its line format; message carries the line number."""


class SessionError(RuntimeError):
    """A ranker session or run failed at runtime (protocol, timeout, crash)."""
