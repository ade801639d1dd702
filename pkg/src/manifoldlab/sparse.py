"""Sparse symmetric matrices in CSR form plus the elementary kernels.

Everything downstream (neighbor graphs, affinities, Laplacians) lives in a
:class:`SparseSymMatrix`: both triangles stored explicitly, float64 values,
validated symmetric at construction.  Matrix-vector products delegate to
scipy's compiled CSR kernels; the dense materialization is only meant for
small matrices and tests.
"""

import numpy as np
import scipy.sparse as sp

# Relative asymmetry above this is a construction error; below it the two
# triangles are silently averaged.
SYMMETRY_RTOL = 1e-12


def as_matrix(arr, name="matrix"):
    """Validate a dense row-major float64 matrix (finite, 2-d)."""
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {out.shape}")
    if not np.isfinite(out).all():
        bad = np.argwhere(~np.isfinite(out))[0]
        raise ValueError(f"{name} contains a non-finite value at row {bad[0]}, column {bad[1]}")
    return out


def as_vector(arr, name="vector"):
    """Validate a dense float64 vector (finite, 1-d)."""
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite values")
    return out


class SparseSymMatrix:
    """Symmetric N x N sparse matrix, CSR storage with both triangles.

    Parameters
    ----------
    matrix : scipy.sparse matrix or tuple
        Either any scipy sparse matrix, or a ``(data, indices, indptr)``
        triple together with ``n``.
    n : int, optional
        Matrix order when constructing from a raw CSR triple.

    Raises
    ------
    ValueError
        If the matrix is not square, holds non-finite values, or the
        relative asymmetry exceeds ``SYMMETRY_RTOL``.

    Notes
    -----
    Instances are immutable; the underlying arrays are marked read-only so
    they can be shared freely across threads and between pipeline stages.
    """

    __slots__ = ("n", "indptr", "indices", "data", "_csr")

    def __init__(self, matrix, n=None, _trusted=False):
        if isinstance(matrix, tuple):
            data, indices, indptr = matrix
            if n is None:
                raise ValueError("n is required when constructing from a raw CSR triple")
            csr = sp.csr_matrix((np.asarray(data, dtype=np.float64),
                                 np.asarray(indices), np.asarray(indptr)),
                                shape=(n, n))
        else:
            csr = sp.csr_matrix(matrix, dtype=np.float64)

        rows, cols = csr.shape
        if rows != cols:
            raise ValueError(f"matrix must be square, got {rows} x {cols}")
        csr.sum_duplicates()
        csr.sort_indices()

        if not _trusted:
            csr = self._check_symmetry(csr)
        if csr.nnz and not np.isfinite(csr.data).all():
            raise ValueError("sparse matrix contains NaN or Inf values")

        self.n = rows
        self.indptr = csr.indptr
        self.indices = csr.indices
        self.data = csr.data
        for arr in (self.indptr, self.indices, self.data):
            arr.flags.writeable = False
        self._csr = csr

    @staticmethod
    def _check_symmetry(csr):
        ct = csr.T.tocsr()
        ct.sort_indices()
        if not (np.array_equal(csr.indptr, ct.indptr)
                and np.array_equal(csr.indices, ct.indices)):
            raise ValueError("sparsity pattern is not symmetric; use symmetrize() first")
        if csr.nnz == 0:
            return csr
        amax = np.abs(csr.data).max()
        asym = np.abs(csr.data - ct.data).max()
        if asym > SYMMETRY_RTOL * max(amax, 1e-300):
            raise ValueError(f"matrix is numerically asymmetric "
                             f"(max |A_ij - A_ji| = {asym:.3e}, max |A| = {amax:.3e})")
        if asym > 0.0:
            csr.data[:] = 0.5 * (csr.data + ct.data)
        return csr

    # -- constructors -------------------------------------------------

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"), _trusted=True)

    @classmethod
    def from_dense(cls, arr):
        return cls(sp.csr_matrix(np.asarray(arr, dtype=np.float64)))

    @classmethod
    def from_coo(cls, n, rows, cols, values):
        """Build from COO triplets; duplicate entries are summed."""
        coo = sp.coo_matrix((values, (rows, cols)), shape=(n, n))
        return cls(coo.tocsr())

    def with_values(self, values):
        """Same sparsity pattern, new values (pattern arrays are shared)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.data.shape:
            raise ValueError("replacement values must match nnz")
        csr = sp.csr_matrix((values, self.indices, self.indptr), shape=(self.n, self.n))
        return SparseSymMatrix(csr)

    # -- queries ------------------------------------------------------

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def to_scipy(self):
        return self._csr

    def toarray(self):
        return self._csr.toarray()

    def diagonal(self):
        return self._csr.diagonal()

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"vector length {x.shape} does not match matrix order {self.n}")
        return self._csr @ x

    def matmat(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != self.n:
            raise ValueError(f"operand has {X.shape[0]} rows, expected {self.n}")
        return self._csr @ X

    def max_row_l1(self):
        """Maximum row 1-norm; a cheap upper bound on the spectral norm."""
        if self.nnz == 0:
            return 0.0
        starts = self.indptr[:-1][np.diff(self.indptr) > 0]
        return float(np.add.reduceat(np.abs(self.data), starts).max())

    def dump_text(self, path):
        """Write ``i j value`` lines (17 significant digits, sorted by (i, j))."""
        with open(path, "w", encoding="utf-8") as fh:
            rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
            for i, j, v in zip(rows, self.indices, self.data):
                fh.write(f"{i} {j} {v:.17g}\n")

    def __repr__(self):
        return f"SparseSymMatrix(n={self.n}, nnz={self.nnz})"


def spmv(A, x):
    """Sparse symmetric matrix-vector product ``y_i = sum_j A_ij x_j``."""
    return A.matvec(as_vector(x, "x"))


def row_sums(A):
    """Row sums ``d_i = sum_j A_ij`` (the degree vector for graph matrices)."""
    out = np.zeros(A.n)
    nonempty = np.diff(A.indptr) > 0
    if A.nnz:
        out[nonempty] = np.add.reduceat(A.data, A.indptr[:-1][nonempty])
    return out


def symmetrize(matrix):
    """Return ``(A + A^T) / 2`` with the union sparsity pattern.

    Accepts any square scipy sparse matrix (or SparseSymMatrix, which is
    returned in symmetrized-by-construction form).  This is the fixup for
    asymmetric candidates such as k-nearest-neighbor relations.
    """
    if isinstance(matrix, SparseSymMatrix):
        matrix = matrix.to_scipy()
    csr = sp.csr_matrix(matrix, dtype=np.float64)
    if csr.shape[0] != csr.shape[1]:
        raise ValueError(f"matrix must be square, got {csr.shape[0]} x {csr.shape[1]}")
    sym = (csr + csr.T.tocsr()) * 0.5
    return SparseSymMatrix(sym.tocsr())
