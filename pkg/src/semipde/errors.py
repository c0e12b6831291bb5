"""Shared exception types."""


class Diverged(RuntimeError):
    """A forward solve or mechanism evaluation produced non-finite values."""
