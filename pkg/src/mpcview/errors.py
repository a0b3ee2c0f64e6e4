"""Exception types shared across the package."""


class RejectedInput(ValueError):
    """Input violates an operation's preconditions."""


class ConfigError(ValueError):
    """A configuration value is outside its valid range."""


class FormatError(ValueError):
    """A file is malformed or truncated.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
