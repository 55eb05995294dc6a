"""Block preconditioners over the (u, p, B, E) system.

Families
--------
* diag_exact      block-diagonal with exactly inverted blocks
                  diag(A1, k M_P, alpha k^-1 M_B, H4)^-1
* diag_exact_stab same, with the div-div stabilized third block
* diag_inexact    spectrally-equivalent blocks: PCG-Jacobi(1e-3) for the
                  velocity and electric blocks; the B block stays exact
                  (that is what keeps the Krylov iterates divergence-free)
* diag_inexact_stab  stabilized twin of diag_inexact
* tri_exact       block lower triangular, forward substitution
                  u -> p -> B -> E with exact block solves
* tri_inexact     triangular with PCG-Jacobi u/E blocks, exact B block

The B block may run in 'mass_cholesky' mode (solve with the weighted RT0
mass matrix) or 'fused_algebraic' mode: when the input is tagged with
the vector w whose magnetic row generated it, the output is
+/-(w_B + k K w_E) via the integer incidence matrix K, with no linear
solve, which preserves div B bitwise.

Inexact (PCG-at-a-tolerance) blocks are nonlinear operators, so those
families are admitted under FGMRES only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sparse import SparseMatrix, SpdFactor, cholesky_factor, pcg

DIAG_FAMILIES = ("diag_exact", "diag_inexact", "diag_exact_stab", "diag_inexact_stab")
TRI_FAMILIES = ("tri_exact", "tri_inexact")
FAMILIES = DIAG_FAMILIES + TRI_FAMILIES


@dataclass
class PrecondSpec:
    family: str = "tri_exact"
    b_block_mode: str = "mass_cholesky"   # or fused_algebraic
    pcg_tol: float = 1e-3
    pcg_max_iter: int = 10000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown preconditioner family {self.family!r}")
        if self.b_block_mode not in ("mass_cholesky", "fused_algebraic"):
            raise ValueError(f"unknown b_block_mode {self.b_block_mode!r}")

    @property
    def inexact(self) -> bool:
        return "inexact" in self.family

    @property
    def triangular(self) -> bool:
        return self.family in TRI_FAMILIES

    @property
    def stabilized(self) -> bool:
        return self.family.endswith("_stab")


class ExactSolver:
    kind = "Exact"

    def __init__(self, A: SparseMatrix, label: str):
        try:
            self.factor = cholesky_factor(A)
        except Exception as exc:
            raise RuntimeError(f"{label}: exact factorization failed: {exc}") from exc

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return self.factor.solve(b)


class PcgJacobiSolver:
    kind = "PcgJacobi"

    def __init__(self, A: SparseMatrix, label: str, rel_tol=1e-3, max_iter=10000):
        self.A = A
        self.label = label
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.last_iters = 0

    def __call__(self, b: np.ndarray) -> np.ndarray:
        res = pcg(self.A, b, precond="jacobi", rel_tol=self.rel_tol,
                  max_iter=self.max_iter)
        if not res.converged:
            raise RuntimeError(f"{self.label}: PCG-Jacobi failed "
                               f"(relres {res.relres:.2e} after {res.iters} its)")
        self.last_iters = res.iters
        return res.x


class JacobiDirectSolver:
    """Exact inverse of a diagonal matrix (the P0 pressure mass)."""

    kind = "JacobiDirect"

    def __init__(self, diag: np.ndarray, label: str):
        if np.any(diag == 0.0):
            raise ValueError(f"{label}: zero diagonal")
        self.inv = 1.0 / diag

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return self.inv * b


def _cached_exact(system, name, mat, label):
    """Factorizations of the magnetic and electric norm blocks depend only
    on the effective time step, not on the Picard state; share them across
    nonlinear iterations and time steps through the Spaces object."""
    cache = getattr(system.spaces, "factor_cache", None)
    if cache is None:
        cache = {}
        system.spaces.factor_cache = cache
    key = (name, system.keff, system.params.alpha, system.params.s)
    if key not in cache:
        cache[key] = ExactSolver(mat, label)
    return cache[key]


def build_subsolvers(spec: PrecondSpec, system, u_solver=None) -> dict:
    """Per-block solver handles for a given assembled system.

    The electric block records which term dominates (curl-curl vs mass,
    ratio of infinity norms, threshold 1); both branches currently use
    the same PCG-Jacobi inexact solve, the hook exists so a stronger
    smoother can be slotted in for the stiffness-dominated branch.

    `u_solver` lets a caller reuse an existing velocity-block solver
    (e.g. the factorization from an earlier nonlinear iterate of the same
    time step, where the frozen coefficients differ only slightly).
    """
    sub = {}
    if u_solver is not None:
        sub["u"] = u_solver
    elif spec.inexact:
        sub["u"] = PcgJacobiSolver(system.A1, "velocity block",
                                   spec.pcg_tol, spec.pcg_max_iter)
    else:
        sub["u"] = ExactSolver(system.A1, "velocity block")
    sub["p"] = JacobiDirectSolver(system.H2_diag, "pressure block")
    b_mat = system.H3 if spec.stabilized else system.MB3
    sub["B"] = _cached_exact(system, "B_stab" if spec.stabilized else "B",
                             b_mat, "magnetic block")
    curl_norm = abs(system.H4_curl.csr).max() if system.H4_curl.nnz else 0.0
    mass_norm = abs(system.H4_mass.csr).max()
    dominance = curl_norm / mass_norm if mass_norm > 0 else np.inf
    if spec.inexact:
        sub["E"] = PcgJacobiSolver(system.H4, "electric block",
                                   spec.pcg_tol, spec.pcg_max_iter)
    else:
        sub["E"] = _cached_exact(system, "E", system.H4, "electric block")
    sub["E_dominance"] = dominance  # > 1: curl-curl (Poisson-like) dominates
    return sub


class Preconditioner:
    """Callable preconditioner over monolithic free-dof vectors."""

    def __init__(self, spec: PrecondSpec, system, subsolvers=None):
        if spec.triangular and system.convention != "triangular":
            raise ValueError("triangular preconditioners require the "
                             "triangular sign convention")
        self.spec = spec
        self.system = system
        self.sub = subsolvers or build_subsolvers(spec, system)
        self.sl = system.slices  # dict field -> slice into the monolithic vector
        # sign of the magnetic row of A: -1 symmetric, +1 triangular
        self.b_row_sign = -1.0 if system.convention == "symmetric" else 1.0

    # -- B block ----------------------------------------------------------

    def apply_B_block(self, rB: np.ndarray, tag=None) -> np.ndarray:
        if self.spec.b_block_mode == "fused_algebraic" and tag is not None:
            return self.apply_B_block_fused(tag)
        return self.sub["B"](rB)

    def apply_B_block_fused(self, tag: np.ndarray) -> np.ndarray:
        """B component of the preconditioned vector from the tag w with
        r_B = (magnetic row of A) w: returns sign*(w_B + k K w_E)."""
        w_B = tag[self.sl["B"]]
        w_E = tag[self.sl["E"]]
        return self.b_row_sign * (w_B + self.system.keff * (self.system.K_ff @ w_E))

    # -- full application --------------------------------------------------

    def __call__(self, r: np.ndarray, tag=None) -> np.ndarray:
        sl = self.sl
        sy = self.system
        out = np.empty_like(r)
        # every block solve is against the SPD norm matrix; the sign
        # conventions of the assembled rows only enter the fused path
        if self.spec.triangular:
            u = self.sub["u"](r[sl["u"]])
            p = self.sub["p"](r[sl["p"]] - sy.Bdiv_f @ u)
            if self.spec.b_block_mode == "fused_algebraic" and tag is not None:
                B = self.apply_B_block_fused(tag)
            else:
                B = self.sub["B"](r[sl["B"]])
            rhs_E = r[sl["E"]] - sy.F_f @ u + sy.CBT_f @ B
            E = self.sub["E"](rhs_E)
        else:
            u = self.sub["u"](r[sl["u"]])
            p = self.sub["p"](r[sl["p"]])
            if self.spec.b_block_mode == "fused_algebraic" and tag is not None:
                B = self.apply_B_block_fused(tag)
            else:
                B = self.sub["B"](r[sl["B"]])
            E = self.sub["E"](r[sl["E"]])
        out[sl["u"]] = u
        out[sl["p"]] = p
        out[sl["B"]] = B
        out[sl["E"]] = E
        if sy.deflate is not None:
            out = sy.deflate(out)
        return out


def build_preconditioner(spec: PrecondSpec, system) -> Preconditioner:
    return Preconditioner(spec, system)


def check_krylov_compat(spec: PrecondSpec, method) -> None:
    """Inexact blocks are nonlinear operators: only FGMRES may use them.

    `method` may be the method name or a KrylovConfig."""
    method = getattr(method, "method", method)
    if spec.inexact and method != "fgmres":
        raise ValueError(
            f"preconditioner family {spec.family!r} uses PCG-at-tolerance "
            f"sub-solves, which are nonlinear operators; pair it with "
            f"FGMRES (got {method!r})")
    if method == "minres" and spec.triangular:
        raise ValueError("MINRES requires an SPD (block-diagonal) preconditioner")


def measure_rho(A1: SparseMatrix, rel_tol: float = 1e-3, n_iter: int = 30,
                seed: int = 0) -> float:
    """Power-iteration estimate of ||I - Q1 A1||_{A1} for the PCG-Jacobi
    inexact velocity solve Q1 (treated as a fixed linear operator)."""
    q1 = PcgJacobiSolver(A1, "rho probe", rel_tol=rel_tol)
    exact = ExactSolver(A1, "rho probe exact")
    rng = np.random.default_rng(seed)
    n = A1.shape[0]
    x = rng.standard_normal(n)
    sigma = 0.0
    for _ in range(n_iter):
        nrm = np.sqrt(x @ (A1.csr @ x))
        if nrm == 0:
            break
        x /= nrm
        # e = (I - Q1 A1) x
        Ax = A1.csr @ x
        e = x - q1(Ax)
        # adjoint in the A1 inner product: x <- A1^{-1} E^T A1 e = E~ e
        Ae = A1.csr @ e
        x = exact(Ae - A1.csr @ q1(Ae))
        sigma = np.sqrt(max(e @ Ae, 0.0))
    return sigma
