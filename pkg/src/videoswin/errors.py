class ConfigError(ValueError):
    """Invalid architecture, view or training configuration."""


class FormatError(ValueError):
    """Malformed checkpoint container; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
