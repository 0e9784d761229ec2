"""Exception types shared across the package."""


class MrpScoreError(Exception):
    """Base class for all package-specific errors."""


class DegenerateCovariate(MrpScoreError):
    """A covariate has zero range and cannot be discretized."""


class InfeasibleConstraint(MrpScoreError):
    """A sampling constraint cannot be satisfied by the population."""


class CellMismatch(MrpScoreError):
    """Sample counts refer to a cell absent from the population."""


class UnknownLevel(MrpScoreError):
    """A cell-set descriptor references a variable or level that does not exist."""


class EmptySet(MrpScoreError):
    """A cell set with no members (or zero population weight) was scored."""


class UnobservedCell(MrpScoreError):
    """An operation requiring sample observations met a cell with n_j = 0."""

    def __init__(self, cell_ids):
        self.cell_ids = list(cell_ids)
        super().__init__(f"cells without observations: {self.cell_ids}")


class TailTooSmall(MrpScoreError):
    """Too few (or degenerate) tail values to fit a generalized Pareto."""


class AllZeroWeights(MrpScoreError):
    """Resampling weights sum to zero."""


class BadPartition(MrpScoreError):
    """Observed/unobserved cell sets do not partition the table."""
