"""Exception hierarchy shared by the whole package.

The CLI maps these onto exit codes (config = 2, data = 3, numerical = 4),
and the HTTP service maps them onto status codes, so most failures should
be raised as one of the subclasses below rather than bare ValueError.
"""


class ManifoldLabError(Exception):
    """Base class for all package errors."""


class ConfigError(ManifoldLabError):
    """Invalid parameter, option or configuration file."""


class DataError(ManifoldLabError):
    """Problem with the input data (malformed file, bad geometry, ...)."""


class NumericalError(ManifoldLabError):
    """A numerical procedure failed (non-convergence, breakdown, ...)."""


class IsolatedPointError(DataError):
    def __init__(self, point_id, msg=None):
        self.point_id = int(point_id)
        super().__init__(msg or f"point {point_id} has no neighbors besides itself; "
                                "increase the radius or remove the point")


class DisconnectedGraphError(DataError):
    def __init__(self, n_components=None, pair=None):
        self.n_components = n_components
        self.pair = pair
        if pair is not None:
            msg = f"neighborhood graph is disconnected: no path between points {pair[0]} and {pair[1]}"
        else:
            msg = f"neighborhood graph is disconnected ({n_components} components); increase the radius"
        super().__init__(msg)


class TooFewNeighborsError(DataError):
    def __init__(self, point_id, count, needed):
        self.point_id = int(point_id)
        self.count = int(count)
        super().__init__(f"point {point_id} has {count} neighbors but at least "
                         f"{needed} are required; increase the radius or k")


class DegenerateNeighborhoodError(DataError):
    def __init__(self, point_id, rank, needed):
        self.point_id = int(point_id)
        super().__init__(f"neighborhood of point {point_id} has rank {rank} < {needed}; "
                         "the local tangent space is not identifiable")


class SingularSystemError(DataError):
    def __init__(self, point_id):
        self.point_id = int(point_id)
        super().__init__(f"local weight system for point {point_id} is singular "
                         "even after regularization")


class ConvergenceError(NumericalError):
    def __init__(self, solver, iterations, residuals):
        self.solver = solver
        self.iterations = iterations
        self.residuals = residuals
        worst = max(residuals) if len(residuals) else float("nan")
        super().__init__(f"{solver} did not converge after {iterations} iterations "
                         f"(worst residual {worst:.3e})")


class RankDeficiencyError(NumericalError):
    def __init__(self, solver, restarts):
        super().__init__(f"{solver} basis became rank deficient {restarts} times; giving up")
