"""Exception types shared across the package."""


class DataError(Exception):
    """Input data violates a documented contract (schema, format, range)."""


class ContainerError(DataError):
    """A tensor container file is malformed or cannot be produced."""


class ManifestError(DataError):
    """A run manifest is malformed or violates its invariants."""
