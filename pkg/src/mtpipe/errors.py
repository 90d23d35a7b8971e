"""Common error base so the CLI can map failures onto exit codes."""


class ToolError(Exception):
    """Base class for every operational error raised by this package."""
