"""Exception hierarchy shared across the toolkit."""


class GridIdError(Exception):
    """Base class for all gridid errors."""


class NetworkError(GridIdError):
    """Invalid network model or inapplicable network event."""


class DataError(GridIdError):
    """Malformed or inconsistent measurement / model files."""


class RankDeficiencyError(GridIdError):
    """Voltage data does not have full row rank; the full-matrix problem is ill-posed."""


class SolverError(GridIdError):
    """Iterative solver failed to make progress (divergence or bad operator)."""
