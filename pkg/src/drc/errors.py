"""Shared exception types."""


class FormatError(ValueError):
    """A file (grid, camera, image, bundle) is malformed or has the wrong kind."""
