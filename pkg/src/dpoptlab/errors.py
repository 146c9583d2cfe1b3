"""Shared exception types.

Every refusal the library makes carries enough structure for callers to
report the problem without string parsing.
"""


class DpOptLabError(Exception):
    """Base class for all library errors."""


class ShapeMismatchError(DpOptLabError):
    """Two arrays have incompatible shapes; names both."""

    def __init__(self, message: str, left_shape=None, right_shape=None):
        super().__init__(message)
        self.left_shape = left_shape
        self.right_shape = right_shape


class HessianDimError(DpOptLabError):
    """Refusal to build a d x d Hessian block above the configured cap."""

    def __init__(self, dim: int, cap: int):
        super().__init__(
            f"hessian block is {dim}x{dim} but the dimension cap is {cap}; "
            f"raise dim_cap explicitly if you really want this allocation"
        )
        self.dim = dim
        self.cap = cap


class MemoryBudgetError(DpOptLabError):
    """Dataset generation would exceed the memory budget."""

    def __init__(self, required_bytes: int, budget_bytes: int):
        super().__init__(
            f"generation requires {required_bytes} bytes "
            f"but the budget is {budget_bytes} bytes"
        )
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes


class DatasetIOError(DpOptLabError):
    """Base class for dataset file problems."""


class VersionMismatchError(DatasetIOError):
    """Dataset file was written with an unsupported format version."""


class TruncatedDatasetError(DatasetIOError):
    """Dataset file ends before the payload declared in its header."""


class ChecksumMismatchError(DatasetIOError):
    """Dataset payload does not match the checksum in its header."""


class DatasetIntegrityError(DatasetIOError):
    """Header metadata is inconsistent with the payload (e.g. trailing bytes)."""


class ConfigError(DpOptLabError):
    """Invalid run configuration."""


class AllRunsDivergedError(DpOptLabError):
    """Every run in a sweep diverged; names the attempted grid."""

    def __init__(self, grid_description: str):
        super().__init__(f"all runs diverged over grid {grid_description}")
        self.grid_description = grid_description
