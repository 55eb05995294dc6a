"""Preconditioned Krylov solvers.

* MINRES for the symmetric sign convention with an SPD preconditioner,
  stopping on the preconditioned residual norm ||M r||_{M^-1} = sqrt(r.Mr).
* GMRES, left-preconditioned, Arnoldi in the l2 inner product on
  preconditioned residuals.
* FGMRES, right-preconditioned, allowing a different (e.g. inexactly
  solved) preconditioner application every iteration; stops on the true
  relative residual.

All three support:

* pressure deflation: a projection applied to the right-hand side, to
  every preconditioner output, and to the final iterate, realizing the
  zero-mean pressure space without pinning a dof;
* shadow tagging: each vector handed to the preconditioner may carry a
  companion vector w such that the magnetic row of the input equals the
  magnetic row of A.w.  The divergence-preserving "fused" B-block uses
  the tag to replace the mass solve by an integer incidence update.
  Tags obey the same linear recurrences as the vectors themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KrylovConfig:
    method: str = "gmres"            # minres | gmres | fgmres
    rel_tol: float = 1e-8
    max_iter: int = 500
    restart: int = 200
    deflate_pressure: bool = True

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0,1)")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        m = self.method.lower()
        if m not in ("minres", "gmres", "fgmres"):
            raise ValueError(f"unknown Krylov method {self.method!r}")
        self.method = m


@dataclass
class SolveResult:
    x: np.ndarray
    iters: int
    residuals: list
    converged: bool
    flag: str = ""


class BreakdownError(RuntimeError):
    pass


def _check_symmetry(apply_A, n, rng, what="operator"):
    for _ in range(3):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        ax, ay = apply_A(x), apply_A(y)
        scale = max(np.linalg.norm(ax) * np.linalg.norm(y),
                    np.linalg.norm(ay) * np.linalg.norm(x), 1e-300)
        if abs(ax @ y - x @ ay) > 1e-10 * scale:
            raise ValueError(f"{what} failed the symmetry check")


def _check_spd_apply(apply_M, n, rng):
    for _ in range(3):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        mx, my = apply_M(x), apply_M(y)
        scale = max(np.linalg.norm(mx) * np.linalg.norm(y),
                    np.linalg.norm(my) * np.linalg.norm(x), 1e-300)
        if abs(mx @ y - x @ my) > 1e-10 * scale:
            raise ValueError("preconditioner failed the symmetry check")
        if x @ mx <= 0:
            raise ValueError("preconditioner failed the positivity check")


def _apply_M(apply_M, r, tag):
    try:
        return apply_M(r, tag=tag)
    except TypeError:
        return apply_M(r)


def minres(apply_A, apply_M_spd, b, config: KrylovConfig, *, x0=None,
           deflate=None, tag0=None, iterate_callback=None,
           check_symmetry=True, seed=0) -> SolveResult:
    """Preconditioned MINRES with an SPD preconditioner.

    Tags: the shadow of A.z is z; the caller supplies tag0, the shadow of
    the initial residual b - A x0 (magnetic-row sense).  If tag0 is None
    the preconditioner receives untagged inputs.
    """
    n = b.shape[0]
    rng = np.random.default_rng(seed)
    if check_symmetry and n > 1:
        _check_symmetry(apply_A, n, rng)
        _check_spd_apply(lambda v: _apply_M(apply_M_spd, v, None), n, rng)

    if deflate is not None:
        b = deflate(b.copy())
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    track = tag0 is not None

    r_prev = np.zeros(n)
    r = b - apply_A(x)
    s_prev = np.zeros(n) if track else None
    s_cur = np.array(tag0, dtype=float) if track else None

    y = _apply_M(apply_M_spd, r, s_cur if track else None)
    if deflate is not None:
        y = deflate(y)
    gamma_prev, gamma = 1.0, np.sqrt(max(r @ y, 0.0))
    if gamma == 0.0:
        return SolveResult(x, 0, [0.0], True)
    eta = gamma
    res0 = gamma
    s0 = s1 = 0.0
    c0 = c1 = 1.0
    w_prev = np.zeros(n)
    w_cur = np.zeros(n)
    residuals = [1.0]

    for j in range(1, config.max_iter + 1):
        z = y / gamma
        sz = (s_cur / gamma) if track else None
        Az = apply_A(z)
        delta = float(Az @ z)
        r_next = Az - (delta / gamma) * r - (gamma / gamma_prev) * r_prev
        if track:
            s_next = z - (delta / gamma) * s_cur - (gamma / gamma_prev) * s_prev
        y = _apply_M(apply_M_spd, r_next, s_next if track else None)
        if deflate is not None:
            y = deflate(y)
        gamma_next = np.sqrt(max(r_next @ y, 0.0))
        a0 = c1 * delta - c0 * s1 * gamma
        a1 = np.sqrt(a0 * a0 + gamma_next * gamma_next)
        a2 = s1 * delta + c0 * c1 * gamma
        a3 = s0 * gamma
        if a1 == 0.0:
            raise BreakdownError(f"MINRES breakdown (zero pivot) at iteration {j}")
        c_next = a0 / a1
        s_next_giv = gamma_next / a1
        w_next = (z - a3 * w_prev - a2 * w_cur) / a1
        x = x + (c_next * eta) * w_next
        eta = -s_next_giv * eta
        residuals.append(abs(eta) / res0)
        if iterate_callback is not None:
            xi = deflate(x.copy()) if deflate is not None else x
            iterate_callback(xi)
        if abs(eta) <= config.rel_tol * res0:
            if deflate is not None:
                x = deflate(x)
            return SolveResult(x, j, residuals, True)
        r_prev, r = r, r_next
        if track:
            s_prev, s_cur = s_cur, s_next
        gamma_prev, gamma = gamma, gamma_next
        if gamma == 0.0:  # exact solution reached (Lanczos terminated)
            if deflate is not None:
                x = deflate(x)
            return SolveResult(x, j, residuals, True)
        s0, s1 = s1, s_next_giv
        c0, c1 = c1, c_next
        w_prev, w_cur = w_cur, w_next
    if deflate is not None:
        x = deflate(x)
    return SolveResult(x, config.max_iter, residuals, False, flag="max_iter")


def _mgs(V, w, j):
    """Modified Gram-Schmidt of w against V[:, :j+1] with one
    reorthogonalization pass when cancellation is detected."""
    h = np.zeros(j + 2)
    norm_before = np.linalg.norm(w)
    for i in range(j + 1):
        h[i] = V[:, i] @ w
        w -= h[i] * V[:, i]
    if np.linalg.norm(w) < 1e-8 * max(norm_before, 1e-300):
        for i in range(j + 1):
            c = V[:, i] @ w
            h[i] += c
            w -= c * V[:, i]
    h[j + 1] = np.linalg.norm(w)
    return w, h


def _gmres_core(apply_A, apply_M, b, config, x0, deflate, tag0,
                iterate_callback, flexible):
    """Shared Arnoldi driver.

    flexible=False: left preconditioning, residual measured on M(b-Ax).
    flexible=True: right preconditioning (FGMRES), residual is the true
    one; stores the preconditioned basis Z.
    """
    n = b.shape[0]
    if deflate is not None:
        b = deflate(b.copy())
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    track = tag0 is not None

    total_it = 0
    residuals = [1.0]
    flag = ""

    # normalize by the (preconditioned) right-hand side so a warm start
    # can converge in zero iterations
    if flexible:
        res0 = np.linalg.norm(b)
    else:
        # tag omitted: the tag contract holds for residuals, not for b
        b_prec = _apply_M(apply_M, b.copy(), None)
        if deflate is not None:
            b_prec = deflate(b_prec)
        res0 = np.linalg.norm(b_prec)
    if res0 == 0.0:
        return SolveResult(np.zeros(n), 0, [0.0], True)

    while True:
        r = b - apply_A(x)
        sr = np.array(tag0, dtype=float) if track else None
        if not flexible:
            r = _apply_M(apply_M, r, sr)
            if deflate is not None:
                r = deflate(r)
        beta = np.linalg.norm(r)
        if beta <= config.rel_tol * res0:
            if deflate is not None:
                x = deflate(x)
            return SolveResult(x, total_it, residuals, True, flag=flag)

        m = min(config.restart, config.max_iter - total_it)
        if m <= 0:
            break
        V = np.zeros((n, m + 1))
        S = np.zeros((n, m + 1)) if track else None  # shadows of V columns
        Z = np.zeros((n, m)) if flexible else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta
        if track:
            S[:, 0] = sr / beta
        window_start = residuals[-1]
        j_done = 0
        for j in range(m):
            if flexible:
                z = _apply_M(apply_M, V[:, j], S[:, j] if track else None)
                if deflate is not None:
                    z = deflate(z)
                Z[:, j] = z
                w = apply_A(z)
                sw = z if track else None
            else:
                Avj = apply_A(V[:, j])
                w = _apply_M(apply_M, Avj, V[:, j] if track else None)
                if deflate is not None:
                    w = deflate(w)
                sw = None  # left-prec tags never need propagation past r0
            if track:
                w_shadow = sw.copy() if sw is not None else np.zeros(n)
            w, h = _mgs(V, w, j)
            H[: j + 2, j] = h
            if track:
                if not flexible:
                    w_shadow = V[:, j].copy()  # unused; tags only matter for M inputs
                w_shadow -= S[:, : j + 1] @ h[: j + 1]
            if h[j + 1] > 0:
                V[:, j + 1] = w / h[j + 1]
                if track:
                    S[:, j + 1] = w_shadow / h[j + 1]
            # Givens update of the small least-squares problem
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            d = np.hypot(H[j, j], H[j + 1, j])
            if d == 0.0:
                # rank-deficient operator: report, keep the best iterate so far
                y = np.linalg.solve(np.triu(H[:j, :j]), g[:j]) if j else None
                if y is not None:
                    base = Z[:, :j] if flexible else V[:, :j]
                    x = x + base @ y
                if deflate is not None:
                    x = deflate(x)
                return SolveResult(x, total_it + j, residuals, False,
                                   flag="breakdown")
            cs[j], sn[j] = H[j, j] / d, H[j + 1, j] / d
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            relres = abs(g[j + 1]) / res0
            residuals.append(relres)
            if iterate_callback is not None:
                yj = np.linalg.solve(np.triu(H[: j + 1, : j + 1]), g[: j + 1])
                base = Z[:, : j + 1] if flexible else V[:, : j + 1]
                xi = x + base @ yj
                if deflate is not None:
                    xi = deflate(xi)
                iterate_callback(xi)
            if relres <= config.rel_tol or h[j + 1] == 0.0:
                break
        y = np.linalg.solve(np.triu(H[:j_done, :j_done]), g[:j_done])
        base = Z[:, :j_done] if flexible else V[:, :j_done]
        x = x + base @ y
        total_it += j_done
        if residuals[-1] <= config.rel_tol:
            if deflate is not None:
                x = deflate(x)
            return SolveResult(x, total_it, residuals, True, flag=flag)
        if total_it >= config.max_iter:
            break
        if residuals[-1] >= window_start * (1 - 1e-12):
            flag = "stagnation"
            break
    if deflate is not None:
        x = deflate(x)
    return SolveResult(x, total_it, residuals, False,
                       flag=flag or "max_iter")


def gmres(apply_A, apply_M_left, b, config: KrylovConfig, *, x0=None,
          deflate=None, tag0=None, iterate_callback=None) -> SolveResult:
    return _gmres_core(apply_A, apply_M_left, b, config, x0, deflate, tag0,
                       iterate_callback, flexible=False)


def fgmres(apply_A, apply_M_right, b, config: KrylovConfig, *, x0=None,
           deflate=None, tag0=None, iterate_callback=None) -> SolveResult:
    return _gmres_core(apply_A, apply_M_right, b, config, x0, deflate, tag0,
                       iterate_callback, flexible=True)


def make_pressure_deflation(weights: np.ndarray, p_slice: slice):
    """Subtract the mass-weighted mean from the pressure sub-vector."""
    w = np.asarray(weights, dtype=float)
    wsum = w.sum()

    def deflate(vec: np.ndarray) -> np.ndarray:
        p = vec[p_slice]
        vec[p_slice] = p - (w @ p) / wsum
        return vec

    return deflate
