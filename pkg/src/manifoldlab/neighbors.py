"""Exact spatial queries over a point cloud.

A bucketed kd-tree (widest-spread split axis, median split) answers radius
and k-nearest queries, and a dual-tree pass builds the full radius-neighbor
graph without touching all N^2 pairs.  A brute-force all-pairs scan with the
same distance kernel serves as the test oracle.

Distances are plain Euclidean, computed from coordinate differences (not the
expanded dot-product identity) so the tree path and the brute-force path
agree to the last bit.
"""

import heapq

import numpy as np

from .errors import ConfigError
from .sparse import SparseSymMatrix, as_matrix

DEFAULT_LEAF_SIZE = 16


class NeighborList:
    """Query result: point ids aligned with ascending distances."""

    __slots__ = ("ids", "distances")

    def __init__(self, ids, distances):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.distances = np.asarray(distances, dtype=np.float64)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(zip(self.ids, self.distances))

    def __repr__(self):
        return f"NeighborList(k={len(self.ids)})"


class SpatialIndex:
    """Balanced kd-tree over an N x D point cloud.

    Splits on the widest-spread dimension at the median, bucketing points
    into leaves of at most ``leaf_size``.  Nodes carry tight bounding boxes,
    which is what actually drives pruning (important once D gets large).

    The tree is immutable after construction and safe for concurrent
    queries.  ``approximate`` is reserved; only exact search is implemented.
    """

    def __init__(self, points, leaf_size=DEFAULT_LEAF_SIZE, approximate=False):
        if approximate:
            raise NotImplementedError("approximate search is reserved but not implemented")
        points = as_matrix(points, "points")
        if points.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if leaf_size < 1:
            raise ConfigError(f"leaf_size must be >= 1, got {leaf_size}")
        self.points = points
        self.leaf_size = int(leaf_size)
        self._build()

    def _build(self):
        n, d = self.points.shape
        self.perm = np.arange(n, dtype=np.int64)
        split_dim, split_val = [], []
        left, right, start, end = [], [], [], []
        bb_min, bb_max = [], []
        depth_of = []

        # preorder construction; children are allocated before being pushed
        stack = [(0, n, 0, -1, 0)]  # (start, end, depth, parent, side)
        while stack:
            s, e, dep, parent, side = stack.pop()
            node = len(split_dim)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            pts = self.points[self.perm[s:e]]
            lo = pts.min(axis=0)
            hi = pts.max(axis=0)
            split_dim.append(-1)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(s)
            end.append(e)
            bb_min.append(lo)
            bb_max.append(hi)
            depth_of.append(dep)
            if e - s <= self.leaf_size:
                continue
            dim = int(np.argmax(hi - lo))
            coords = pts[:, dim]
            half = (e - s) // 2
            order = np.argpartition(coords, half)
            self.perm[s:e] = self.perm[s:e][order]
            split_dim[node] = dim
            split_val[node] = float(self.points[self.perm[s + half], dim])
            # push right first so the left child is visited first (LIFO)
            stack.append((s + half, e, dep + 1, node, 1))
            stack.append((s, s + half, dep + 1, node, 0))

        self.split_dim = np.array(split_dim, dtype=np.int64)
        self.split_val = np.array(split_val)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.end = np.array(end, dtype=np.int64)
        self.bbox_min = np.vstack(bb_min)
        self.bbox_max = np.vstack(bb_max)
        self.depth = int(max(depth_of))
        self.n_nodes = len(split_dim)

    # -- helpers -------------------------------------------------------

    def _is_leaf(self, node):
        return self.left[node] < 0

    def _min_dist2_point(self, node, q):
        lo = self.bbox_min[node] - q
        hi = q - self.bbox_max[node]
        gap = np.maximum(np.maximum(lo, hi), 0.0)
        return float(gap @ gap)

    def _min_dist2_node(self, a, b):
        lo = self.bbox_min[b] - self.bbox_max[a]
        hi = self.bbox_min[a] - self.bbox_max[b]
        gap = np.maximum(np.maximum(lo, hi), 0.0)
        return float(gap @ gap)

    def _leaf_dist2(self, node, q):
        pts = self.points[self.perm[self.start[node]:self.end[node]]]
        diff = pts - q
        return np.einsum("ij,ij->i", diff, diff)

    def _check_query(self, q):
        q = np.asarray(q, dtype=np.float64).ravel()
        if q.shape[0] != self.points.shape[1]:
            raise ValueError(f"query has dimension {q.shape[0]}, "
                             f"index holds {self.points.shape[1]}-dimensional points")
        if not np.isfinite(q).all():
            raise ValueError("query point contains non-finite values")
        return q

    # -- queries -------------------------------------------------------

    def radius_query(self, q, r):
        """All points within Euclidean distance ``r`` of ``q``, nearest first."""
        if r <= 0:
            raise ConfigError(f"radius must be positive, got {r}")
        q = self._check_query(q)
        r2 = r * r
        ids, d2s = [], []
        stack = [0]
        while stack:
            node = stack.pop()
            if self._min_dist2_point(node, q) > r2:
                continue
            if self._is_leaf(node):
                d2 = self._leaf_dist2(node, q)
                mask = d2 <= r2
                if mask.any():
                    ids.append(self.perm[self.start[node]:self.end[node]][mask])
                    d2s.append(d2[mask])
            else:
                stack.append(int(self.right[node]))
                stack.append(int(self.left[node]))
        if not ids:
            return NeighborList(np.empty(0, dtype=np.int64), np.empty(0))
        ids = np.concatenate(ids)
        dist = np.sqrt(np.concatenate(d2s))
        order = np.lexsort((ids, dist))
        return NeighborList(ids[order], dist[order])

    def knn_query(self, q, k):
        """The ``k`` nearest points to ``q``; distance ties go to lower ids."""
        n = self.points.shape[0]
        if not 1 <= k <= n:
            raise ConfigError(f"k must be in [1, {n}], got {k}")
        q = self._check_query(q)
        # max-heap of the current k best as (-d2, -id); heap[0] is the worst
        best = []
        node_heap = [(self._min_dist2_point(0, q), 0)]
        while node_heap:
            mind2, node = heapq.heappop(node_heap)
            if len(best) == k and mind2 > -best[0][0]:
                break
            if self._is_leaf(node):
                d2 = self._leaf_dist2(node, q)
                pid = self.perm[self.start[node]:self.end[node]]
                for dd, ii in zip(d2, pid):
                    item = (-dd, -ii)
                    if len(best) < k:
                        heapq.heappush(best, item)
                    elif item > best[0]:
                        heapq.heapreplace(best, item)
            else:
                for child in (int(self.left[node]), int(self.right[node])):
                    cd2 = self._min_dist2_point(child, q)
                    if len(best) < k or cd2 <= -best[0][0]:
                        heapq.heappush(node_heap, (cd2, child))
        d2 = np.array([-x[0] for x in best])
        ids = np.array([-x[1] for x in best], dtype=np.int64)
        dist = np.sqrt(d2)
        order = np.lexsort((ids, dist))
        return NeighborList(ids[order], dist[order])


def build_index(points, leaf_size=DEFAULT_LEAF_SIZE, approximate=False):
    """Construct a :class:`SpatialIndex` over ``points``."""
    return SpatialIndex(points, leaf_size=leaf_size, approximate=approximate)


def _pair_block(pa, pb):
    """Pairwise squared distances between two small point blocks."""
    diff = pa[:, None, :] - pb[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def radius_adjacency(index, r):
    """Sparse symmetric matrix of pairwise distances within radius ``r``.

    Diagonal entries are present with value 0, so the Gaussian affinity
    derived from this matrix has ones on the diagonal.  Built by a dual-tree
    traversal: pairs of tree nodes whose bounding boxes are farther than
    ``r`` apart are pruned wholesale, and surviving leaf pairs are evaluated
    as vectorized distance blocks.

    Returns
    -------
    SparseSymMatrix
        Entry (i, j) holds ``||x_i - x_j||`` for every pair within ``r``.
    """
    if r <= 0:
        raise ConfigError(f"radius must be positive, got {r}")
    n = index.points.shape[0]
    r2 = r * r
    rows, cols, vals = [], [], []

    def leaf_ids(node):
        return index.perm[index.start[node]:index.end[node]]

    stack = [(0, 0)]
    while stack:
        a, b = stack.pop()
        if a == b:
            if index._is_leaf(a):
                ia = leaf_ids(a).astype(np.int32)
                d2 = _pair_block(index.points[ia], index.points[ia])
                ii, jj = np.nonzero(d2 <= r2)
                rows.append(ia[ii])
                cols.append(ia[jj])
                vals.append(np.sqrt(d2[ii, jj]))
            else:
                la, ra = int(index.left[a]), int(index.right[a])
                stack.append((la, ra))
                stack.append((ra, ra))
                stack.append((la, la))
            continue
        if index._min_dist2_node(a, b) > r2:
            continue
        a_leaf, b_leaf = index._is_leaf(a), index._is_leaf(b)
        if a_leaf and b_leaf:
            ia = leaf_ids(a).astype(np.int32)
            ib = leaf_ids(b).astype(np.int32)
            d2 = _pair_block(index.points[ia], index.points[ib])
            ii, jj = np.nonzero(d2 <= r2)
            if len(ii):
                d = np.sqrt(d2[ii, jj])
                rows.append(ia[ii])
                cols.append(ib[jj])
                vals.append(d)
                rows.append(ib[jj])
                cols.append(ia[ii])
                vals.append(d)
        elif b_leaf or (not a_leaf and index.end[a] - index.start[a]
                        >= index.end[b] - index.start[b]):
            stack.append((int(index.right[a]), b))
            stack.append((int(index.left[a]), b))
        else:
            stack.append((a, int(index.right[b])))
            stack.append((a, int(index.left[b])))

    return _assemble(n, rows, cols, vals)


def _assemble(n, rows, cols, vals):
    if not rows:
        rows = [np.empty(0, dtype=np.int32)]
        cols = [np.empty(0, dtype=np.int32)]
        vals = [np.empty(0)]
    rows = np.concatenate(rows).astype(np.int32, copy=False)
    cols = np.concatenate(cols).astype(np.int32, copy=False)
    vals = np.concatenate(vals)
    return SparseSymMatrix.from_coo(n, rows, cols, vals)


def brute_force_adjacency(points, r, block=256):
    """All-pairs radius graph by direct scan; the oracle for radius_adjacency."""
    if r <= 0:
        raise ConfigError(f"radius must be positive, got {r}")
    points = as_matrix(points, "points")
    n = points.shape[0]
    r2 = r * r
    rows, cols, vals = [], [], []
    for s in range(0, n, block):
        e = min(s + block, n)
        d2 = _pair_block(points[s:e], points)
        ii, jj = np.nonzero(d2 <= r2)
        rows.append((ii + s).astype(np.int32))
        cols.append(jj.astype(np.int32))
        vals.append(np.sqrt(d2[ii, jj]))
    return _assemble(n, rows, cols, vals)


def knn_adjacency(index, k):
    """Union-symmetrized k-nearest-neighbor graph with self-loops.

    ``k`` counts neighbors excluding the point itself.  The pattern is the
    union of the two directed relations, so every row has at least ``k``
    off-diagonal entries.
    """
    n = index.points.shape[0]
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k must be in [1, {n - 1}], got {k}")
    rows, cols, vals = [], [], []
    for i in range(n):
        res = index.knn_query(index.points[i], k + 1)
        ids, dist = res.ids, res.distances
        keep = ids != i
        if keep.sum() > k:  # the query point was not among its own k+1
            drop = len(ids) - 1
            keep[drop] = False
        ids, dist = ids[keep], dist[keep]
        rows.append(np.full(len(ids) + 1, i, dtype=np.int64))
        cols.append(np.concatenate([ids, [i]]))
        vals.append(np.concatenate([dist, [0.0]]))
        rows.append(ids)
        cols.append(np.full(len(ids), i, dtype=np.int64))
        vals.append(dist)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # drop duplicate (i, j) pairs: mutual neighbors appear in both directions
    keys = rows * np.int64(n) + cols
    _, first = np.unique(keys, return_index=True)
    return SparseSymMatrix.from_coo(n, rows[first], cols[first], vals[first])
