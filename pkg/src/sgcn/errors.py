"""Exception types shared across the package."""


class SgcnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SgcnError):
    """Operand shapes are inconsistent; the message carries a dimension report."""


class DataError(SgcnError):
    """Malformed input data (trajectories, datasets, requests)."""


class CheckpointError(SgcnError):
    """Unreadable or incompatible checkpoint file."""
