"""Dense small-instance oracles.

Everything here goes through dense numpy/LAPACK paths (plus a cyclic
Jacobi eigensolver for small matrices), independent of the sparse
kernels it is used to validate.  Guarded to desk-scale sizes.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

SIZE_GUARD = 3000


def _guard(n: int):
    if n > SIZE_GUARD:
        raise ValueError(f"dense oracle size guard exceeded: {n} > {SIZE_GUARD}")


def densify_system(system) -> np.ndarray:
    _guard(system.ndof)
    return system.A.toarray()


def densify_operator(apply_fn, n: int) -> np.ndarray:
    """Dense matrix of a linear operator by application to unit vectors."""
    _guard(n)
    cols = []
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols.append(np.array(apply_fn(e.copy())))
        e[j] = 0.0
    return np.column_stack(cols)


def dense_lu_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    _guard(A.shape[0])
    with warnings.catch_warnings():
        # singularity is detected and raised below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-14 * max(d.max(), 1.0):
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    return scipy.linalg.lu_solve((lu, piv), b)


def _jacobi_eigs(A: np.ndarray, tol=1e-12, max_sweep=60) -> np.ndarray:
    """Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
    below tol relative to the matrix norm."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweep):
        off = np.sqrt(np.sum(A ** 2) - np.sum(np.diag(A) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / A[p, q]
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) \
                    if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
    return np.sort(np.diag(A))


def symmetric_eigs(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, ascending.  Small matrices use
    cyclic Jacobi (off-diagonal reduced below 1e-12 relative); larger
    ones fall back to LAPACK."""
    A = np.asarray(A, dtype=float)
    _guard(A.shape[0])
    if not np.allclose(A, A.T, rtol=0, atol=1e-10 * max(np.abs(A).max(), 1e-300)):
        raise ValueError("matrix is not symmetric")
    if A.shape[0] <= 150:
        return _jacobi_eigs(A)
    return np.linalg.eigvalsh(A)


def _sqrt_spd(G: np.ndarray):
    w, V = np.linalg.eigh(G)
    if w.min() <= 0:
        raise ValueError("norm matrix is not SPD")
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def _pressure_null_vector(system) -> np.ndarray:
    v = np.zeros(system.ndof)
    v[system.slices["p"]] = 1.0
    return v


def _diag_norm_matrix(system, stabilized: bool) -> np.ndarray:
    """Dense block-diagonal norm matrix diag(A1, k M_P, H3-block, H4)."""
    n = system.ndof
    G = np.zeros((n, n))
    sl = system.slices
    G[sl["u"], sl["u"]] = system.A1.toarray()
    G[sl["p"], sl["p"]] = np.diag(system.H2_diag)
    Bblk = system.H3 if stabilized else system.MB3
    G[sl["B"], sl["B"]] = Bblk.toarray()
    G[sl["E"], sl["E"]] = system.H4.toarray()
    return G


def condition_number_MA(system, stabilized: bool = False) -> float:
    """kappa = max|lambda| / min|lambda| of G^{-1/2} A G^{-1/2} on the
    deflated subspace, G the block-diagonal preconditioner norm matrix.
    This is the MINRES-relevant condition number of D.A."""
    if system.convention != "symmetric":
        raise ValueError("condition_number_MA requires the symmetric convention")
    _guard(system.ndof)
    A = densify_system(system)
    G = _diag_norm_matrix(system, stabilized)
    _, Gm = _sqrt_spd(G)
    S = Gm @ A @ Gm
    S = 0.5 * (S + S.T)
    lam = np.linalg.eigvalsh(S)
    # drop the eigenvalue nearest zero: the constant-pressure null mode
    idx = np.argmin(np.abs(lam))
    lam = np.delete(lam, idx)
    a = np.abs(lam)
    return float(a.max() / a.min())


def fov_bounds(system, precond_apply, stabilized: bool = False):
    """(gamma, Gamma) of W = M_L A in the inner product induced by the
    inverse of the block-diagonal preconditioner, on the deflated
    subspace: gamma = min field-of-values real part, Gamma = max norm."""
    if system.convention != "triangular":
        raise ValueError("fov_bounds requires the triangular convention")
    _guard(system.ndof)
    A = densify_system(system)
    W = np.column_stack([precond_apply(A[:, j].copy())
                         for j in range(system.ndof)])
    N = _diag_norm_matrix(system, stabilized)
    Np, Nm = _sqrt_spd(N)
    S = Np @ W @ Nm
    # restrict to the orthogonal complement of the transformed null vector
    n0 = Np @ _pressure_null_vector(system)
    n0 /= np.linalg.norm(n0)
    Q = scipy.linalg.null_space(n0[None, :])
    Sh = Q.T @ S @ Q
    gamma = float(np.linalg.eigvalsh(0.5 * (Sh + Sh.T)).min())
    Gamma = float(np.linalg.svd(Sh, compute_uv=False).max())
    return gamma, Gamma


def inf_sup_estimate(system) -> float:
    """beta_h = sqrt(lambda_min) of B_div H1^{-1} B_div^T q = lambda H2 q
    on zero-mean pressures (the smallest eigenvalue belongs to the
    constant mode and is zero; the second-smallest is taken)."""
    _guard(system.ndof)
    H1 = system.A1.toarray()
    Bd = system.Bdiv_f.toarray()
    H2 = np.diag(system.H2_diag)
    S = Bd @ np.linalg.solve(H1, Bd.T)
    lam = scipy.linalg.eigh(0.5 * (S + S.T), H2, eigvals_only=True)
    lam = np.sort(lam)
    return float(np.sqrt(max(lam[1], 0.0)))
