"""Exception types shared across the package.

Numerical preconditions (faithfulness, stationarity, closure) raise
dedicated exceptions so the experiment harness can map failures to
distinct error codes.
"""


class NcError(Exception):
    """Base class for all package errors."""


class ShapeError(NcError):
    """An element does not conform to the space or map it was used with."""


class FaithfulnessError(NcError):
    """A candidate density matrix is not Hermitian, normalized and faithful."""


class StationarityError(NcError):
    """A map does not satisfy the state/modular precondition of an operation."""


class ClosureError(NcError):
    """A candidate subalgebra basis is not closed under the algebra operations."""


class ResourceCapError(NcError):
    """A word enumeration or tower construction exceeds its configured cap."""


class ConfigError(NcError):
    """An experiment configuration is structurally invalid."""
