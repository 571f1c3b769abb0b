"""Exception taxonomy; CLI exit codes map onto these."""


class MoldspotError(Exception):
    """Base class for all package errors."""


class ConfigError(MoldspotError):
    """Bad or inconsistent configuration; raised before any work starts."""


class DataError(MoldspotError):
    """Malformed dataset/results file or broken referential integrity."""

    def __init__(self, message: str, details: list[str] | None = None):
        self.details = details or []
        if self.details:
            message = message + "\n  " + "\n  ".join(self.details)
        super().__init__(message)


class BridgeError(MoldspotError):
    """External child-process protocol failure (timeout, malformed line)."""


class PlacementError(MoldspotError):
    """Synthetic glyph placement ran out of room; carries the achieved count."""

    def __init__(self, requested: int, achieved: int):
        self.requested = requested
        self.achieved = achieved
        super().__init__(f"placed {achieved} of {requested} requested parts")
