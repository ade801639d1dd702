"""Unified eigendecomposition layer for sparse symmetric PSD matrices.

Three routes to the smallest eigenpairs: a dense LAPACK reference, Lanczos
with full reorthogonalization, and a block LOBPCG that touches the matrix
only through matrix-vector products (so it also accepts opaque operators).
``null_space`` wraps them for the LLE/LTSA embedding step, and
``shift_to_spd`` provides the tiny diagonal shift that turns a PSD matrix
into a strictly positive definite one.
"""

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ConfigError, ConvergenceError, NumericalError, RankDeficiencyError
from .sparse import SparseSymMatrix

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_SEED = 42

SHIFT_FRACTION = 1e-7


@dataclass(frozen=True)
class EigenResult:
    """Eigenpairs sorted by ascending eigenvalue.

    ``residuals`` holds ``||A v - lambda v||`` per returned pair and
    ``tol_abs`` the absolute residual tolerance the solver worked to.
    """
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    solver: str
    n_iter: int = 0
    tol_abs: float = 0.0

    @property
    def k(self):
        return len(self.values)


@dataclass(frozen=True)
class Preconditioner:
    """Linear SPD operator applied to residual blocks."""
    kind: str
    apply: Callable[[np.ndarray], np.ndarray]


def identity_preconditioner():
    return Preconditioner("none", lambda X: X)


def jacobi_preconditioner(A):
    """Diagonal (Jacobi) preconditioner ``v -> v / diag(A)``.

    Stands in for heavier multilevel preconditioning behind the same
    interface; requires a strictly positive diagonal.
    """
    diag = A.diagonal() if hasattr(A, "diagonal") else np.asarray(A).diagonal()
    diag = np.asarray(diag, dtype=np.float64)
    if (diag <= 0).any():
        bad = int(np.flatnonzero(diag <= 0)[0])
        raise NumericalError(f"jacobi preconditioner needs a positive diagonal; "
                             f"entry {bad} is {diag[bad]:.3e}")
    inv = 1.0 / diag
    return Preconditioner("jacobi", lambda X: X * inv[:, None] if X.ndim == 2 else X * inv)


def shift_to_spd(L):
    """Shift a PSD matrix to strict positive definiteness.

    Returns ``(A, shift)`` with ``A = L + shift * I`` and
    ``shift = 1e-7 * max |diag(L)|`` (1e-7 when the diagonal is all zero).
    Eigenvectors are untouched; callers subtract ``shift`` from returned
    eigenvalues.
    """
    diag = np.abs(L.diagonal())
    dmax = float(diag.max()) if diag.size else 0.0
    shift = SHIFT_FRACTION * dmax if dmax > 0 else SHIFT_FRACTION
    import scipy.sparse as sp
    shifted = SparseSymMatrix(L.to_scipy() + shift * sp.identity(L.n, format="csr"))
    return shifted, shift


class _Operator:
    """Adapter exposing matmat(), n and a spectral-norm estimate.

    SparseSymMatrix and ndarray inputs get their cheap row-norm bound;
    anything matvec-only falls back to a short power iteration, keeping the
    matrix-free contract intact.
    """

    def __init__(self, A, seed=DEFAULT_SEED):
        self._seed = seed
        if isinstance(A, SparseSymMatrix):
            self.n = A.n
            self._matmat = A.matmat
            self._norm = A.max_row_l1()
            self._diag = A.diagonal()
        elif isinstance(A, np.ndarray):
            self.n = A.shape[0]
            self._matmat = lambda X: A @ X
            self._norm = float(np.abs(A).sum(axis=1).max())
            self._diag = np.diagonal(A).copy()
        else:
            # opaque operator: needs .shape or .n, and must be callable or
            # expose matmat/matvec
            self.n = int(A.shape[0]) if hasattr(A, "shape") else int(A.n)
            if hasattr(A, "matmat"):
                self._matmat = A.matmat
            elif callable(A):
                self._matmat = A
            else:
                raise ConfigError("operator must be callable or provide matmat()")
            self._norm = None
            self._diag = None

    def matmat(self, X):
        Y = self._matmat(X if X.ndim == 2 else X[:, None])
        return Y if X.ndim == 2 else Y.ravel()

    def norm_est(self):
        if self._norm is None:
            rng = np.random.default_rng(self._seed)
            v = rng.standard_normal((self.n, 1))
            v /= np.linalg.norm(v)
            est = 0.0
            for _ in range(8):
                w = self.matmat(v)
                est = float(np.linalg.norm(w))
                if est == 0.0:
                    break
                v = w / est
            self._norm = max(est, np.finfo(np.float64).tiny)
        return self._norm

    def diagonal(self):
        return self._diag


def _fix_signs(vectors):
    """Make each column's largest-magnitude entry positive (reproducibility)."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _finalize(op, values, vectors, solver, n_iter, tol_abs):
    vectors = _fix_signs(vectors)
    resid = op.matmat(vectors) - vectors * values
    residuals = np.linalg.norm(resid, axis=0)
    return EigenResult(values=values, vectors=vectors, residuals=residuals,
                       solver=solver, n_iter=n_iter, tol_abs=tol_abs)


def dense_smallest(A, k):
    """Exact reference: full dense eigendecomposition, k smallest pairs."""
    arr = A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=np.float64)
    n = arr.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    values, vectors = scipy.linalg.eigh(arr, subset_by_index=[0, k - 1])
    op = _Operator(arr)
    return _finalize(op, values, vectors, "dense", n_iter=1, tol_abs=0.0)


def _orthonormalize(X, against=None):
    """QR-orthonormalize columns, dropping ones that lose rank."""
    if against is not None and against.shape[1]:
        X = X - against @ (against.T @ X)
        X = X - against @ (against.T @ X)
    if X.shape[1] == 0:
        return X
    norms = np.linalg.norm(X, axis=0)
    keep = norms > 1e-14 * max(1.0, norms.max())
    X = X[:, keep]
    if X.shape[1] == 0:
        return X
    q, r = np.linalg.qr(X)
    good = np.abs(np.diagonal(r)) > 1e-10 * max(1.0, np.abs(np.diagonal(r)).max())
    return q[:, good]


def lobpcg(A, X0=None, k=None, precond=None, tol=DEFAULT_TOL,
           max_iter=DEFAULT_MAX_ITER, seed=DEFAULT_SEED):
    """Locally optimal block preconditioned conjugate gradient.

    Finds the ``k`` smallest eigenpairs of a symmetric positive definite
    operator using only matrix-block products: per iteration the residuals
    ``R = A X - X diag(lam)`` are preconditioned into ``W`` and a
    Rayleigh-Ritz step runs on the orthonormalized span of ``[X, W, P]``
    where ``P`` carries the previous update directions.

    Parameters
    ----------
    A : SparseSymMatrix, ndarray, or matvec-style operator
    X0 : ndarray (n, m), optional
        Initial block with full column rank; random (seeded) when omitted.
    k : int, optional
        Number of pairs to return; defaults to X0's width.  When X0 is
        omitted the block is widened internally by a few guard vectors.
    precond : Preconditioner, optional
    tol : float
        Relative residual target: stop once every requested pair satisfies
        ``||A v - lam v|| <= tol * ||A||_est``.
    max_iter : int
    seed : int
        Seeds the initial block and any rank-deficiency restarts.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations (residuals achieved are attached).
    RankDeficiencyError
        If the search basis collapses three times in a row.
    """
    op = _Operator(A, seed=seed)
    n = op.n
    rng = np.random.default_rng(seed)
    if X0 is not None:
        X0 = np.asarray(X0, dtype=np.float64)
        if X0.ndim != 2 or X0.shape[0] != n:
            raise ConfigError(f"X0 must be n x m with n = {n}")
        if k is None:
            k = X0.shape[1]
        m = X0.shape[1]
    else:
        if k is None:
            raise ConfigError("either X0 or k is required")
        m = min(n, k + min(4, max(1, k)))
        X0 = rng.standard_normal((n, m))
    if not 1 <= k <= m <= n:
        raise ConfigError(f"need 1 <= k <= block size <= n, got k={k}, m={m}, n={n}")
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    precond = precond or identity_preconditioner()
    norm_a = op.norm_est()
    tol_abs = tol * max(norm_a, np.finfo(np.float64).tiny)

    X = _orthonormalize(X0)
    restarts = 0
    while X.shape[1] < m:
        if restarts >= 3:
            raise RankDeficiencyError("lobpcg", restarts)
        X = _orthonormalize(np.hstack([X, rng.standard_normal((n, m - X.shape[1]))]))
        restarts += 1
    AX = op.matmat(X)
    P = None
    lam = np.zeros(m)
    n_iter = 0
    best_X, best_res = None, np.inf
    converged = False

    for n_iter in range(1, max_iter + 1):
        # Rayleigh-Ritz on the current block keeps lam and X consistent
        G = X.T @ AX
        G = 0.5 * (G + G.T)
        lam, C = np.linalg.eigh(G)
        X = X @ C
        AX = AX @ C
        if n_iter % 10 == 0:
            AX = op.matmat(X)  # discard accumulated rounding drift
        R = AX - X * lam
        res = np.linalg.norm(R[:, :k], axis=0)
        if (res <= tol_abs).all():
            # tracked products can flatter the residual; verify before accepting
            AX = op.matmat(X)
            R = AX - X * lam
            res = np.linalg.norm(R[:, :k], axis=0)
            if (res <= tol_abs).all():
                converged = True
        worst = float(res.max())
        if worst < best_res:
            best_res, best_X = worst, X.copy()
        if converged:
            break

        # keep P orthogonal to X; its product is recomputed fresh because the
        # near-singular triangular factor would otherwise amplify roundoff
        if P is not None:
            P = _orthonormalize(P, against=X)
            if P.shape[1] == 0:
                P = None
        AP = op.matmat(P) if P is not None else None

        against = X if P is None else np.hstack([X, P])
        W = _orthonormalize(precond.apply(R), against=against)
        if W.shape[1] == 0:
            restarts += 1
            if restarts > 3:
                raise RankDeficiencyError("lobpcg", restarts)
            W = _orthonormalize(rng.standard_normal((n, m)), against=against)
            if W.shape[1] == 0:
                break  # basis spans the whole space; Ritz pairs are exact
        AW = op.matmat(W)

        S = np.hstack([X, W] if P is None else [X, W, P])
        AS = np.hstack([AX, AW] if P is None else [AX, AW, AP])
        T = S.T @ AS
        T = 0.5 * (T + T.T)
        try:
            _, tc = np.linalg.eigh(T)
        except np.linalg.LinAlgError:
            restarts += 1
            if restarts > 3:
                raise RankDeficiencyError("lobpcg", restarts)
            P = None
            continue

        mm = min(m, S.shape[1])
        C = tc[:, :mm]
        Xn = S @ C
        AXn = AS @ C
        # next conjugate directions: the W/P contribution to the update
        P = S[:, m:] @ C[m:, :]
        X, AX = Xn, AXn

    if not converged:
        # polish: fresh Rayleigh-Ritz on the best block seen (tracked
        # products stall around sqrt(eps), a fresh pass often recovers)
        if best_X is not None:
            X = best_X
        AX = op.matmat(X)
        G = X.T @ AX
        G = 0.5 * (G + G.T)
        lam, C = np.linalg.eigh(G)
        X = X @ C
        AX = AX @ C
        res = np.linalg.norm(AX - X * lam, axis=0)[:k]
        if not (res <= tol_abs).all():
            raise ConvergenceError("lobpcg", n_iter, res)

    return _finalize(op, lam[:k], X[:, :k], "lobpcg", n_iter=n_iter, tol_abs=tol_abs)


def lanczos_smallest(A, k, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, seed=DEFAULT_SEED):
    """Lanczos with full reorthogonalization for the k smallest eigenpairs.

    Full reorthogonalization is affordable at the basis sizes this package
    needs and removes the classic ghost-eigenvalue failure mode.  When the
    Krylov space becomes invariant before k pairs converge, iteration
    continues with a fresh random vector and only accepts convergence once
    further restarts stop changing the bottom Ritz values; this recovers
    eigenvalue copies that a single Krylov sequence cannot see.  Block
    methods (lobpcg) remain the better choice for strongly degenerate
    spectra such as embedding null spaces.
    """
    op = _Operator(A, seed=seed)
    n = op.n
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    rng = np.random.default_rng(seed)
    norm_a = op.norm_est()
    tol_abs = tol * max(norm_a, np.finfo(np.float64).tiny)
    m_max = int(min(n, max(max_iter, 2 * k + 1)))

    Q = np.zeros((n, m_max))
    alphas = np.zeros(m_max)
    betas = np.zeros(m_max)

    def fresh_vector(j):
        for _ in range(5):
            v = rng.standard_normal(n)
            if j:
                v -= Q[:, :j] @ (Q[:, :j].T @ v)
                v -= Q[:, :j] @ (Q[:, :j].T @ v)
            nv = np.linalg.norm(v)
            if nv > 1e-10:
                return v / nv
        raise NumericalError("lanczos could not generate a new orthogonal start vector")

    q = fresh_vector(0)
    beta = 0.0
    j = 0
    theta = s = None
    collapse_theta = None
    while j < m_max:
        Q[:, j] = q
        w = op.matmat(q)
        if j > 0 and beta > 0.0:
            w -= beta * Q[:, j - 1]
        alpha = float(q @ w)
        w -= alpha * q
        # full reorthogonalization (twice is enough)
        w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        alphas[j] = alpha
        beta = float(np.linalg.norm(w))
        betas[j] = beta
        j += 1

        collapsed = beta <= 1e-13 * max(norm_a, 1.0)
        check = (j >= max(k + 1, 8) and j % 4 == 0) or j == m_max or collapsed
        if check and j >= k:
            theta, s = scipy.linalg.eigh_tridiagonal(alphas[:j], betas[:j - 1])
            bounds = np.abs(beta * s[-1, :k])
            if (bounds <= 0.5 * tol_abs).all():
                if j >= n or not collapsed:
                    break
                # Krylov space went invariant: a degenerate eigenvalue may be
                # hiding extra copies below theta[k-1].  Only accept once a
                # fresh random direction stops changing the bottom Ritz values.
                if (collapse_theta is not None and len(collapse_theta) >= k
                        and np.abs(theta[:k] - collapse_theta[:k]).max() <= tol_abs):
                    break
                collapse_theta = theta.copy()
        if collapsed:
            if j >= n:
                break
            q = fresh_vector(j)
            beta = 0.0
        else:
            q = w / beta

    if theta is None or len(theta) < k:
        theta, s = scipy.linalg.eigh_tridiagonal(alphas[:j], betas[:j - 1])
    vectors = Q[:, :j] @ s[:, :k]
    values = theta[:k]
    result = _finalize(op, values, vectors, "iterative", n_iter=j, tol_abs=tol_abs)
    if not (result.residuals <= tol_abs).all():
        raise ConvergenceError("lanczos", j, result.residuals)
    return result


def eigen_smallest(A, k, solver="auto", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                   precond="jacobi", seed=DEFAULT_SEED):
    """Unified interface: the k algebraically smallest eigenpairs of a PSD matrix.

    Parameters
    ----------
    A : SparseSymMatrix, ndarray or operator
    solver : {'auto', 'dense', 'iterative', 'lobpcg'}
        'auto' picks dense below 600 unknowns, lobpcg otherwise.
    precond : {'jacobi', None} or Preconditioner
        Used by lobpcg only; 'jacobi' falls back to identity when the
        operator exposes no diagonal.

    Notes
    -----
    Iterative solvers run on a shifted strictly-positive-definite copy
    (see ``shift_to_spd``); the shift is subtracted before returning, and
    residuals always refer to the original matrix.
    """
    n = A.n if hasattr(A, "n") else A.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if solver == "auto":
        materializable = isinstance(A, np.ndarray) or hasattr(A, "toarray")
        solver = "dense" if (n <= 600 and materializable) else "lobpcg"
    if solver == "dense":
        return dense_smallest(A, k)

    shift = 0.0
    work = A
    if isinstance(A, SparseSymMatrix):
        work, shift = shift_to_spd(A)
    elif isinstance(A, np.ndarray):
        dmax = float(np.abs(np.diagonal(A)).max()) if A.size else 0.0
        shift = SHIFT_FRACTION * dmax if dmax > 0 else SHIFT_FRACTION
        work = A + shift * np.eye(n)

    if solver == "iterative":
        res = lanczos_smallest(work, k, tol=tol, max_iter=max_iter, seed=seed)
    elif solver == "lobpcg":
        if precond == "jacobi":
            diag = work.diagonal() if hasattr(work, "diagonal") else None
            pc = jacobi_preconditioner(work) if diag is not None and (np.asarray(diag) > 0).all() \
                else identity_preconditioner()
        elif precond is None or precond == "none":
            pc = identity_preconditioner()
        else:
            pc = precond
        res = lobpcg(work, k=k, precond=pc, tol=tol, max_iter=max_iter, seed=seed)
    else:
        raise ConfigError(f"unknown solver {solver!r}")

    if shift:
        op = _Operator(A)
        vectors = res.vectors
        values = res.values - shift
        resid = np.linalg.norm(op.matmat(vectors) - vectors * values, axis=0)
        res = EigenResult(values=values, vectors=vectors, residuals=resid,
                          solver=res.solver, n_iter=res.n_iter, tol_abs=res.tol_abs)
    return res


def null_space(M, k, tol=DEFAULT_TOL, solver="auto", max_iter=DEFAULT_MAX_ITER,
               seed=DEFAULT_SEED):
    """Near-null-space basis with the trivial direction removed.

    Computes the ``k + 1`` smallest eigenpairs of the PSD matrix ``M`` and
    discards the eigenvector with the smallest eigenvalue (the constant /
    trivial direction for embedding matrices), returning ``k`` vectors.
    Warns when the returned eigenvalues exceed ``tol`` (the null space is
    smaller than requested).
    """
    n = M.n if hasattr(M, "n") else M.shape[0]
    if k + 1 > n:
        raise ConfigError(f"null_space needs k + 1 <= n, got k={k}, n={n}")
    res = eigen_smallest(M, k + 1, solver=solver, tol=tol, max_iter=max_iter, seed=seed)
    values = res.values[1:]
    vectors = res.vectors[:, 1:]
    if (values > tol).any():
        warnings.warn(f"null space smaller than requested: {int((values <= tol).sum())} "
                      f"of {k} eigenvalues are below {tol:.1e}", stacklevel=2)
    return EigenResult(values=values, vectors=vectors, residuals=res.residuals[1:],
                       solver=res.solver, n_iter=res.n_iter, tol_abs=res.tol_abs)
