"""Shared exception types.

Argument and domain violations raise plain ValueError; the types below mark
conditions callers are expected to branch on (CLI exit codes, partial traces).
"""


class ConfigurationError(Exception):
    """Invalid configuration: bad config file, preset, or constructed object."""


class StructuralError(ValueError):
    """A matrix or series does not have the structural form the operation requires."""


class DivergenceError(RuntimeError):
    """An iteration left the finite range, or a series has no finite limit.

    ``step`` is the iterate index at which divergence was detected and
    ``last_checkpoint`` the most recent finite checkpoint, when one exists.
    """

    def __init__(self, message, step=None, last_checkpoint=None):
        super().__init__(message)
        self.step = step
        self.last_checkpoint = last_checkpoint
