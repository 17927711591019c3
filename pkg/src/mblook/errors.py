"""Exception types shared across the package."""


class MblookError(Exception):
    """Base class for all package errors."""


class DimensionError(MblookError, ValueError):
    """Array shapes do not agree with a layer, layout or config."""


class InputError(MblookError, ValueError):
    """An input value is non-finite or otherwise unusable."""


class StateError(MblookError, RuntimeError):
    """An operation was called without the state it depends on."""


class OptimizerError(MblookError, FloatingPointError):
    """A gradient update was refused (non-finite gradient or loss)."""


class ConfigError(MblookError, ValueError):
    """A configuration value violates an invariant.

    ``key`` is the dotted path of the offending key (``"lookahead.E"``).
    """

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class FormatError(MblookError, ValueError):
    """A binary artifact is malformed. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ComponentError(MblookError, RuntimeError):
    """A collaborator (environment, policy, model) failed; the message says where, ``__cause__`` says why."""
