"""Affinities, graph Laplacians and the cached geometry pipeline.

The pipeline mirrors how the matrices depend on each other: index ->
adjacency -> affinity -> laplacian.  Changing a parameter empties exactly
the downstream cache slots, so exploring bandwidths or Laplacian kinds only
recomputes what actually changed.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, IsolatedPointError
from .neighbors import SpatialIndex, radius_adjacency, DEFAULT_LEAF_SIZE
from .sparse import SparseSymMatrix, as_matrix, row_sums


class LaplacianKind(str, enum.Enum):
    UNNORMALIZED = "unnormalized"
    NORMALIZED = "normalized"
    RANDOM_WALK = "random_walk"
    RENORMALIZED = "renormalized"
    GEOMETRIC = "geometric"


# kinds whose natural operator is non-symmetric; eigenvectors of the stored
# symmetric form must be rescaled by degrees**-1/2 to recover it
BACKTRANSFORM_KINDS = frozenset(
    {LaplacianKind.RANDOM_WALK, LaplacianKind.RENORMALIZED, LaplacianKind.GEOMETRIC})

DEFAULT_RENORMALIZATION_ALPHA = 0.5


@dataclass(frozen=True)
class AffinityMatrix:
    """Gaussian-kernel weights on the neighbor graph edges."""
    matrix: SparseSymMatrix
    bandwidth: float


@dataclass(frozen=True)
class LaplacianMatrix:
    """A graph Laplacian stored in its symmetric positive semidefinite form.

    ``degrees`` is the diagonal rescaling that recovers the non-symmetric
    operator: ``L_op = D^-1/2 L_sym D^1/2`` with ``D = diag(degrees)``.  For
    the unnormalized kind the degrees are all ones (the stored form is the
    operator itself).
    """
    matrix: SparseSymMatrix
    kind: LaplacianKind
    degrees: np.ndarray
    scaling_epsilon: float | None = None
    alpha: float | None = None

    @property
    def n(self):
        return self.matrix.n

    @property
    def needs_backtransform(self):
        return self.kind in BACKTRANSFORM_KINDS

    def recovered_operator(self):
        """The (generally non-symmetric) operator as a scipy CSR matrix."""
        m = self.matrix
        rows = np.repeat(np.arange(m.n), np.diff(m.indptr))
        scale = np.sqrt(self.degrees)
        data = m.data * (scale[m.indices] / scale[rows])
        return sp.csr_matrix((data, m.indices.copy(), m.indptr.copy()), shape=(m.n, m.n))

    def backtransform(self, vectors):
        """Map eigenvectors of the symmetric form to the recovered operator's."""
        if not self.needs_backtransform:
            return vectors
        return vectors / np.sqrt(self.degrees)[:, None]


def gaussian_affinity(adjacency, bandwidth):
    """Entrywise ``exp(-d_ij^2 / bandwidth^2)`` on the adjacency pattern.

    The adjacency holds nonnegative distances with a zero diagonal, so the
    result has exact ones on the diagonal and values in (0, 1] elsewhere.
    """
    if bandwidth <= 0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    d = adjacency.data
    if d.size and d.min() < 0:
        raise ValueError("adjacency must hold nonnegative distances")
    vals = np.exp(-(d * d) / (bandwidth * bandwidth))
    if vals.size and vals.min() == 0.0:
        raise ConfigError(
            f"bandwidth {bandwidth} is too small for the graph radius: "
            "some affinities underflow to zero")
    return AffinityMatrix(adjacency.with_values(vals), float(bandwidth))


def _diag_positions(matrix):
    """Index into ``data`` of each row's diagonal entry (-1 if absent)."""
    n = matrix.n
    pos = np.full(n, -1, dtype=np.int64)
    indptr, indices = matrix.indptr, matrix.indices
    rows = np.repeat(np.arange(n), np.diff(indptr))
    hit = indices == rows
    pos_idx = np.flatnonzero(hit)
    pos[rows[hit]] = pos_idx
    return pos


def _ensure_diagonal(matrix):
    """Return an equal matrix whose pattern includes every diagonal entry."""
    pos = _diag_positions(matrix)
    if (pos >= 0).all():
        return matrix, pos
    eye0 = sp.csr_matrix(
        (np.zeros(matrix.n), np.arange(matrix.n), np.arange(matrix.n + 1)),
        shape=(matrix.n, matrix.n))
    padded = SparseSymMatrix(matrix.to_scipy() + eye0)
    return padded, _diag_positions(padded)


def build_laplacian(affinity, kind, scaling_epsilon=None, alpha=None):
    """Build one of the five Laplacian kinds from a Gaussian affinity.

    Parameters
    ----------
    affinity : AffinityMatrix
    kind : LaplacianKind or str
    scaling_epsilon : float, optional
        Only used by the geometric kind, which is multiplied by
        ``4 / scaling_epsilon**2`` so that it approximates the (negated)
        Laplace-Beltrami operator.  Without it the geometric kind is
        returned unscaled.
    alpha : float, optional
        Renormalization exponent; defaults to 0.5 for the renormalized
        kind.  The geometric kind always uses alpha = 1.

    Returns
    -------
    LaplacianMatrix
        Symmetric PSD form plus the degree vector for back-transformation.

    Raises
    ------
    IsolatedPointError
        If some point has no neighbors besides itself: its degree carries
        no geometric information and downstream eigenproblems would be
        ill-posed.
    """
    kind = _as_kind(kind)
    if scaling_epsilon is not None and scaling_epsilon <= 0:
        raise ConfigError(f"scaling_epsilon must be positive, got {scaling_epsilon}")
    if kind is LaplacianKind.GEOMETRIC:
        if alpha is not None and alpha != 1.0:
            raise ConfigError("the geometric Laplacian fixes alpha = 1")
        alpha = 1.0
    elif kind is LaplacianKind.RENORMALIZED:
        alpha = DEFAULT_RENORMALIZATION_ALPHA if alpha is None else float(alpha)

    W, diag_pos = _ensure_diagonal(affinity.matrix)
    n = W.n
    counts = np.diff(W.indptr)
    off_degree = counts - 1  # diagonal is guaranteed present
    if (off_degree == 0).any():
        raise IsolatedPointError(int(np.flatnonzero(off_degree == 0)[0]))

    d = row_sums(W)
    rows = np.repeat(np.arange(n), counts)

    if kind is LaplacianKind.UNNORMALIZED:
        data = -W.data.copy()
        data[diag_pos] += d
        matrix = SparseSymMatrix((data, W.indices, W.indptr), n=W.n)
        return LaplacianMatrix(matrix, kind, degrees=np.ones(n))

    if kind in (LaplacianKind.NORMALIZED, LaplacianKind.RANDOM_WALK):
        w_data, degrees = W.data, d
    else:
        q = d ** alpha
        w_data = W.data / (q[rows] * q[W.indices])
        tilde = SparseSymMatrix((w_data, W.indices, W.indptr), n=W.n)
        degrees = row_sums(tilde)

    scale = np.sqrt(degrees)
    data = -w_data / (scale[rows] * scale[W.indices])
    data[diag_pos] += 1.0
    if kind is LaplacianKind.GEOMETRIC and scaling_epsilon is not None:
        data *= 4.0 / (scaling_epsilon * scaling_epsilon)
    matrix = SparseSymMatrix((data, W.indices, W.indptr), n=W.n)
    eps = float(scaling_epsilon) if (kind is LaplacianKind.GEOMETRIC
                                     and scaling_epsilon is not None) else None
    return LaplacianMatrix(matrix, kind, degrees=degrees, scaling_epsilon=eps, alpha=alpha)


def _as_kind(value):
    try:
        return LaplacianKind(value)
    except ValueError:
        names = ", ".join(k.value for k in LaplacianKind)
        raise ConfigError(f"unknown laplacian kind {value!r}; expected one of: {names}") from None


_STAGES = ("index", "adjacency", "affinity", "laplacian")

# parameter -> first stage that must be recomputed when it changes
_PARAM_STAGE = {
    "leaf_size": "index",
    "radius": "adjacency",
    "bandwidth": "affinity",
    "laplacian_kind": "laplacian",
    "scaling_epsilon": "laplacian",
    "alpha": "laplacian",
}


@dataclass
class GeometryPipeline:
    """Cached pipeline from a point cloud to its Laplacian.

    Parameters
    ----------
    points : ndarray (N, D)
    radius : float
        Neighborhood radius for the adjacency graph.
    bandwidth : float, optional
        Gaussian kernel width; defaults to the radius.
    laplacian_kind : LaplacianKind or str
    scaling_epsilon : float, optional
        Scale factor input for the geometric kind; defaults to the
        bandwidth actually used.
    alpha : float, optional
    leaf_size : int

    Notes
    -----
    The pipeline owns its caches and is not safe for concurrent mutation;
    artifacts it hands out are immutable and freely shareable.
    ``compute_counts`` records how many times each stage was actually
    computed, which makes cache behavior observable in tests.
    """

    points: np.ndarray
    radius: float
    bandwidth: float | None = None
    laplacian_kind: LaplacianKind = LaplacianKind.GEOMETRIC
    scaling_epsilon: float | None = None
    alpha: float | None = None
    leaf_size: int = DEFAULT_LEAF_SIZE
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    compute_counts: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.points = as_matrix(self.points, "points")
        self.laplacian_kind = _as_kind(self.laplacian_kind)
        self._validate("radius", self.radius)
        self._validate("bandwidth", self.bandwidth)
        self._validate("scaling_epsilon", self.scaling_epsilon)
        self.compute_counts = {s: 0 for s in _STAGES}

    @staticmethod
    def _validate(name, value):
        if name not in _PARAM_STAGE:
            raise ConfigError(f"unknown pipeline parameter {name!r}")
        if name in ("radius", "bandwidth", "scaling_epsilon"):
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if name == "leaf_size" and value < 1:
            raise ConfigError(f"leaf_size must be >= 1, got {value}")

    def set_param(self, name, value):
        """Update one parameter, emptying exactly the downstream caches."""
        self._validate(name, value)
        if name == "laplacian_kind":
            value = _as_kind(value)
        setattr(self, name, value)
        first = _STAGES.index(_PARAM_STAGE[name])
        invalidated = []
        for stage in _STAGES[first:]:
            if stage in self._cache:
                del self._cache[stage]
                invalidated.append(stage)
        return invalidated

    def cached_stages(self):
        return [s for s in _STAGES if s in self._cache]

    def effective_bandwidth(self):
        return self.radius if self.bandwidth is None else self.bandwidth

    def effective_scaling_epsilon(self):
        if self.laplacian_kind is not LaplacianKind.GEOMETRIC:
            return None
        return (self.effective_bandwidth() if self.scaling_epsilon is None
                else self.scaling_epsilon)

    def get(self, stage):
        """Return the artifact for ``stage``, computing prerequisites as needed."""
        if stage not in _STAGES:
            raise ConfigError(f"unknown pipeline stage {stage!r}")
        if stage in self._cache:
            return self._cache[stage]
        if stage == "index":
            value = SpatialIndex(self.points, leaf_size=self.leaf_size)
        elif stage == "adjacency":
            value = radius_adjacency(self.get("index"), self.radius)
        elif stage == "affinity":
            value = gaussian_affinity(self.get("adjacency"), self.effective_bandwidth())
        else:
            value = build_laplacian(
                self.get("affinity"), self.laplacian_kind,
                scaling_epsilon=self.effective_scaling_epsilon(), alpha=self.alpha)
        self._cache[stage] = value
        self.compute_counts[stage] += 1
        return value
