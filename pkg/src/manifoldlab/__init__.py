"""manifoldlab: scalable manifold learning on sparse neighborhood graphs.

The package follows the pipeline point cloud -> radius-neighbor graph ->
Gaussian affinity -> graph Laplacian -> spectral/geometric embedding ->
per-point distortion metric.  Each stage is cached by
:class:`~manifoldlab.geometry.GeometryPipeline` so parameter sweeps only
recompute what changed.
"""

from .geometry import (AffinityMatrix, GeometryPipeline, LaplacianKind,
                       LaplacianMatrix, build_laplacian, gaussian_affinity)
from .neighbors import (NeighborList, SpatialIndex, brute_force_adjacency,
                        build_index, knn_adjacency, radius_adjacency)
from .sparse import SparseSymMatrix, row_sums, spmv, symmetrize

__version__ = "0.1.0"

__all__ = [
    "AffinityMatrix",
    "GeometryPipeline",
    "LaplacianKind",
    "LaplacianMatrix",
    "NeighborList",
    "SparseSymMatrix",
    "SpatialIndex",
    "brute_force_adjacency",
    "build_index",
    "build_laplacian",
    "gaussian_affinity",
    "knn_adjacency",
    "radius_adjacency",
    "row_sums",
    "spmv",
    "symmetrize",
    "__version__",
]
