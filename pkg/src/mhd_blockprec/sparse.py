"""Sparse kernels: CSR storage, SPD factorization, PCG, Jacobi.

Storage and products delegate to scipy.sparse; this module pins the
conventions the rest of the code relies on (canonical CSR with sorted,
duplicate-free indices, verified symmetry flags) and provides the
"exact" and "inexact" sub-solvers used inside the block preconditioners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.io
import scipy.sparse as sp
import scipy.sparse.csgraph
import scipy.sparse.linalg as spla


class NotSpdError(ValueError):
    """Raised when a factorization detects that a matrix is not SPD."""


@dataclass
class SparseMatrix:
    """CSR matrix with canonicalized structure and an optional verified
    symmetry flag."""

    csr: sp.csr_matrix
    symmetric: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.csr)
        m.sum_duplicates()
        m.sort_indices()
        self.csr = m
        if self.symmetric:
            d = abs(m - m.T)
            scale = abs(m).max() if m.nnz else 0.0
            if d.nnz and d.max() > 1e-12 * max(scale, 1e-300):
                raise ValueError("symmetry flag set but matrix is not symmetric")

    @property
    def shape(self):
        return self.csr.shape

    @property
    def nnz(self):
        return self.csr.nnz

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """y = A x.  scipy CSR matvec accumulates each row in index order,
    which is deterministic for a canonicalized matrix."""
    m = A.csr
    if x.shape[0] != m.shape[1]:
        raise ValueError(f"dimension mismatch: {m.shape} @ {x.shape}")
    return m @ x


def mm_write(path, A: SparseMatrix) -> None:
    scipy.io.mmwrite(str(path), A.csr)


def mm_read(path) -> SparseMatrix:
    return SparseMatrix(sp.csr_matrix(scipy.io.mmread(str(path))))


_DENSE_CHOL_LIMIT = 1500


class SpdFactor:
    """Direct factorization of an SPD matrix.

    Small matrices take a dense Cholesky (which also certifies
    positive-definiteness exactly: a non-positive pivot raises).  Larger
    matrices use a sparse LU with diagonal-preference pivoting after an
    optional reverse Cuthill-McKee reordering; positivity of the pivots
    is checked, which rejects indefinite matrices in practice.
    """

    def __init__(self, A: SparseMatrix, use_rcm: bool = True):
        m = A.csr
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        d = abs(m - m.T)
        scale = abs(m).max() if m.nnz else 0.0
        if d.nnz and d.max() > 1e-10 * max(scale, 1e-300):
            raise NotSpdError("matrix is not symmetric")
        n = m.shape[0]
        self.shape = m.shape
        self._dense = n <= _DENSE_CHOL_LIMIT
        if self._dense:
            try:
                self._chol = scipy.linalg.cho_factor(m.toarray(), lower=True)
            except np.linalg.LinAlgError as exc:
                raise NotSpdError("not SPD: non-positive pivot") from exc
            self.perm = np.arange(n)
        else:
            if use_rcm:
                perm = scipy.sparse.csgraph.reverse_cuthill_mckee(m, symmetric_mode=True)
            else:
                perm = np.arange(n)
            self.perm = np.asarray(perm, dtype=np.int64)
            mp = m[self.perm][:, self.perm].tocsc()
            self._lu = spla.splu(
                mp,
                permc_spec="NATURAL",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            piv = self._lu.U.diagonal()
            if np.any(piv <= 0):
                raise NotSpdError("not SPD: non-positive pivot")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if b.shape[0] != self.shape[0]:
            raise ValueError("dimension mismatch in SpdFactor.solve")
        if self._dense:
            return scipy.linalg.cho_solve(self._chol, b)
        x = np.empty_like(b, dtype=float)
        x[self.perm] = self._lu.solve(np.asarray(b, dtype=float)[self.perm])
        return x

    def factor_dense(self):
        """Dense (L, perm) pair for reconstruction tests (small matrices)."""
        if not self._dense:
            raise ValueError("dense factor only exposed for small matrices")
        return np.tril(self._chol[0]), self.perm


def cholesky_factor(A: SparseMatrix, use_rcm: bool = True) -> SpdFactor:
    return SpdFactor(A, use_rcm=use_rcm)


def jacobi_precond(A: SparseMatrix):
    """Return the action of diag(A)^{-1}."""
    d = A.diagonal()
    if np.any(d == 0.0):
        raise ValueError("zero diagonal entry; Jacobi preconditioner undefined")
    inv = 1.0 / d

    def apply(r: np.ndarray) -> np.ndarray:
        return inv * r

    return apply


@dataclass
class PcgResult:
    x: np.ndarray
    iters: int
    converged: bool
    relres: float
    breakdown: int | None = None  # iteration index of a curvature breakdown


def pcg(A: SparseMatrix, b: np.ndarray, precond=None, rel_tol: float = 1e-3,
        max_iter: int = 10000, x0: np.ndarray | None = None) -> PcgResult:
    """Preconditioned conjugate gradients on an SPD matrix.

    `precond` may be None (identity), a callable r -> z, "jacobi", or an
    SpdFactor (exact preconditioning).  Stops on ||b - Ax|| <= rel_tol*||b||.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    if precond is None:
        M = lambda r: r
    elif precond == "jacobi":
        M = jacobi_precond(A)
    elif isinstance(precond, SpdFactor):
        M = precond.solve
    else:
        M = precond

    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    r = b - spmv(A, x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PcgResult(np.zeros_like(x), 0, True, 0.0)
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        if np.linalg.norm(r) <= rel_tol * bnorm:
            return PcgResult(x, it, True, np.linalg.norm(r) / bnorm)
        Ap = spmv(A, p)
        curv = float(p @ Ap)
        if curv <= 0.0:
            return PcgResult(x, it, False, np.linalg.norm(r) / bnorm, breakdown=it)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        it += 1
        z = M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return PcgResult(x, it, np.linalg.norm(r) <= rel_tol * bnorm,
                     np.linalg.norm(r) / bnorm)
