"""Exception types shared by the library and the command line."""


class DimensionError(ValueError):
    """Array shapes or model dimensions do not agree."""


class FormatError(ValueError):
    """A model or codes file is malformed."""
