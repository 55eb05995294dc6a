"""Linearized 4x4 block systems, nonlinear (Picard) iteration, time loop.

One Picard step solves, for the unknowns (u, p, B, E),

  row u :  keff^-1(u,v) + Re^-1(grad u, grad v) + keff^-1(div u, div v)
           + s(sigma_r u x B-, v x B-) + s(sigma_r E, v x B-) - (p, div v)
           = (f,v) + keff^-1(u_hist, v) - d(u-, u-, v)
  row p :  -(div u, q) = 0                      [symmetric convention]
  row B :  -alpha keff^-1(mu^-1 B, C) - alpha(mu^-1 curl E, C)
           = -alpha keff^-1(mu^-1 B_data, C)
  row E :  s(sigma_r u x B-, F) - alpha(mu^-1 B, curl F) + s(sigma_r E, F)
           = h3

with B_data = B_hist + keff * (RT0 interpolant of the magnetic forcing).
The triangular convention negates the p and B rows.  keff is the time
step for backward Euler and 2k/3 for BDF2 (history combined accordingly).

The magnetic right-hand side is kept in the form "mass matrix times a
divergence-free RT0 field"; together with the exact-sequence identity
Div K = 0 this is what keeps every Krylov iterate divergence-free.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import CoefficientField, MeshGeometry, as_coefficient
from .sparse import SparseMatrix
from . import krylov as kry
from . import precond as pc

FIELDS = ("u", "p", "B", "E")


@dataclass
class PhysParams:
    Re: float = 1.0
    Rm: float = 1.0
    s: float = 1.0
    k: float = 0.01
    sigma_r: CoefficientField = dc_field(default_factory=lambda: CoefficientField(1.0))
    mu_r: CoefficientField = dc_field(default_factory=lambda: CoefficientField(1.0))

    def __post_init__(self):
        self.sigma_r = as_coefficient(self.sigma_r)
        self.mu_r = as_coefficient(self.mu_r)
        if not (self.Re > 0 and self.Rm > 0 and self.k > 0):
            raise ValueError("Re, Rm, k must be positive")
        # s = 0 is tolerated for assembly (decoupled Stokes limit); the
        # solvers and preconditioners require s > 0
        if self.s < 0:
            raise ValueError("coupling number s must be non-negative")

    @property
    def alpha(self) -> float:
        return self.s / self.Rm

    def with_k(self, k: float) -> "PhysParams":
        return PhysParams(self.Re, self.Rm, self.s, k, self.sigma_r, self.mu_r)


class Spaces:
    """Dof maps plus every matrix that does not depend on the Picard state."""

    def __init__(self, mesh, params: PhysParams):
        self.mesh = mesh
        self.params_coeffs = (params.sigma_r, params.mu_r)
        self.geom = MeshGeometry(mesh)
        self.u = fem.vector_p2_dofmap(mesh)
        self.p = fem.p0_dofmap(mesh)
        self.B = fem.rt0_dofmap(mesh)
        self.E = fem.p1_dofmap(mesh)
        self.maps = {"u": self.u, "p": self.p, "B": self.B, "E": self.E}
        g = self.geom
        self.M_u = fem.assemble_vector_p2_mass(g, self.u)
        self.K_u = fem.assemble_vector_p2_stiffness(g, self.u)
        self.D_u = fem.assemble_vector_p2_divdiv(g, self.u)
        self.Bdiv = fem.assemble_div_coupling(g, self.u, self.p)   # (div v, q)
        self.areas = mesh.triangle_areas()
        self.M_B = fem.assemble_rt0_mass(g, params.mu_r)           # (mu^-1 B, C)
        self.DD_B = fem.assemble_rt0_divdiv(g, params.mu_r)
        self.M_E = fem.assemble_p1_mass(g, params.sigma_r)         # (sigma E, F)
        self.K_int = fem.assemble_discrete_curl(mesh)              # integer
        self.K = self.K_int.astype(float)
        self.S_int = fem.div_incidence(mesh)
        self.Div = fem.assemble_discrete_div(mesh)
        self.CB = SparseMatrix((self.M_B.csr @ self.K).tocsr())    # (mu^-1 curl E, C)
        self.L_E = SparseMatrix((self.K.T @ self.M_B.csr @ self.K).tocsr())

    def zero_state(self) -> "BlockVector":
        return BlockVector(np.zeros(self.u.ndof), np.zeros(self.p.ndof),
                           np.zeros(self.B.ndof), np.zeros(self.E.ndof))

    def interpolate_state(self, u=None, p=None, B=None, E=None) -> "BlockVector":
        st = self.zero_state()
        if u is not None:
            st.u = fem.interpolate_vector_p2(self.mesh, u)
        if p is not None:
            st.p = fem.interpolate_p0(self.mesh, p)
        if B is not None:
            st.B = fem.interpolate_rt0(self.mesh, B)
        if E is not None:
            st.E = fem.interpolate_p1(self.mesh, E)
        return st


@dataclass
class BlockVector:
    u: np.ndarray
    p: np.ndarray
    B: np.ndarray
    E: np.ndarray

    def copy(self) -> "BlockVector":
        return BlockVector(self.u.copy(), self.p.copy(), self.B.copy(), self.E.copy())

    def __getitem__(self, name):
        return getattr(self, name)

    def __setitem__(self, name, val):
        setattr(self, name, val)


@dataclass
class Forcing:
    """Closures (x, y) -> values at a fixed time level; any may be None."""
    f_u: object = None    # -> (fx, fy)
    g_B: object = None    # -> (gx, gy), must be divergence-free
    f_E: object = None    # -> scalar


class BlockSystem:
    """Reduced (free-dof) monolithic system plus the pieces the
    preconditioners need."""

    def __init__(self, spaces, params, keff, convention, stabilized):
        self.spaces = spaces
        self.params = params
        self.keff = keff
        self.convention = convention
        self.stabilized = stabilized
        self.sizes = {f: spaces.maps[f].nfree for f in FIELDS}
        self.slices = {}
        off = 0
        for f in FIELDS:
            self.slices[f] = slice(off, off + self.sizes[f])
            off += self.sizes[f]
        self.ndof = off
        self.A = None            # monolithic csr over free dofs
        self.rhs = None
        self.deflate = None
        # preconditioner blocks, filled by assemble_picard
        self.A1 = None           # SparseMatrix, reduced velocity block
        self.H2_diag = None
        self.MB3 = None
        self.H3 = None
        self.H4 = None
        self.H4_mass = None
        self.H4_curl = None
        self.Bdiv_f = None
        self.F_f = None
        self.CBT_f = None
        self.K_ff = None
        self.B_data_free = None  # for fused-mode tagging

    def pack(self, state: BlockVector) -> np.ndarray:
        out = np.empty(self.ndof)
        for f in FIELDS:
            out[self.slices[f]] = state[f][self.spaces.maps[f].free]
        return out

    def unpack_into(self, x: np.ndarray, state: BlockVector) -> BlockVector:
        for f in FIELDS:
            state[f][self.spaces.maps[f].free] = x[self.slices[f]]
        return state

    def tag0(self, x0: np.ndarray) -> np.ndarray:
        """Shadow of the initial residual for the fused B-block path."""
        t = np.zeros(self.ndof)
        # r0 restricted to the magnetic row equals that row of A applied to
        # the vector with B part (B_data - x0_B) and E part (-x0_E), in
        # either sign convention
        t[self.slices["B"]] = self.B_data_free - x0[self.slices["B"]]
        t[self.slices["E"]] = -x0[self.slices["E"]]
        return t


def compute_k0(spaces: Spaces, params: PhysParams, B_full: np.ndarray) -> float:
    """k0 = (1/(8s)) / max over quadrature points of sigma_r |B|^2."""
    if params.s <= 0:
        raise ValueError("k0 requires s > 0")
    if not np.any(B_full != 0.0):
        return np.inf
    Bq = fem.eval_rt0(spaces.geom, B_full)
    sig = params.sigma_r.eval(spaces.geom.qpts)
    m = float(np.max(sig * np.einsum("tqd,tqd->tq", Bq, Bq)))
    if m == 0.0:
        return np.inf
    return 1.0 / (8.0 * params.s * m)


def assemble_picard(spaces: Spaces, params: PhysParams, frozen: BlockVector,
                    bc_state: BlockVector, *, hist_u=None, hist_B=None,
                    keff=None, forcing: Forcing | None = None,
                    convention="symmetric", stabilized=False,
                    warn_k0=False) -> BlockSystem:
    if convention not in ("symmetric", "triangular"):
        raise ValueError(f"unknown sign convention {convention!r}")
    for f in FIELDS:
        if frozen[f].shape[0] != spaces.maps[f].ndof:
            raise ValueError(f"state block {f} does not match the dof map")
        if not np.all(np.isfinite(frozen[f])):
            raise ValueError(f"non-finite values in state block {f}")
    keff = params.k if keff is None else keff
    if warn_k0 and params.s > 0:
        k0 = compute_k0(spaces, params, frozen.B)
        if keff > k0:
            warnings.warn(f"time step {keff:.3g} exceeds k0 = {k0:.3g}; "
                          "well-posedness bounds may not apply", stacklevel=2)

    alpha = params.alpha
    g = spaces.geom
    maps = spaces.maps
    sys_ = BlockSystem(spaces, params, keff, convention, stabilized)

    # --- full-space blocks -------------------------------------------------
    kinv = 1.0 / keff
    A1_full = SparseMatrix(
        (kinv * (spaces.M_u.csr + spaces.D_u.csr)
         + (1.0 / params.Re) * spaces.K_u.csr
         + fem.assemble_cross_coupling(g, spaces.u, params, frozen.B).csr).tocsr(),
        symmetric=True)
    F_full = fem.assemble_lorentz_coupling(g, spaces.u, spaces.E, params, frozen.B)
    MB3_full = SparseMatrix((alpha * kinv) * spaces.M_B.csr) if alpha > 0 \
        else SparseMatrix(sp.csr_matrix(spaces.M_B.shape))
    CB_full = SparseMatrix(alpha * spaces.CB.csr)
    ME_full = SparseMatrix(params.s * spaces.M_E.csr)
    Bdiv_full = spaces.Bdiv

    blocks_full = {
        ("u", "u"): A1_full.csr, ("u", "p"): -Bdiv_full.csr.T.tocsr(),
        ("u", "E"): F_full.csr.T.tocsr(),
        ("p", "u"): -Bdiv_full.csr,
        ("B", "B"): -MB3_full.csr, ("B", "E"): -CB_full.csr,
        ("E", "u"): F_full.csr, ("E", "B"): -CB_full.csr.T.tocsr(),
        ("E", "E"): ME_full.csr,
    }
    if stabilized:
        blocks_full[("B", "B")] = -(MB3_full.csr + alpha * spaces.DD_B.csr)

    # --- right-hand side (full), then reduction with Dirichlet lifting -----
    hist_u = frozen.u if hist_u is None else hist_u
    hist_B = frozen.B if hist_B is None else hist_B
    B_data = hist_B.copy()
    rhs_u = kinv * (spaces.M_u.csr @ hist_u)
    rhs_u += fem.assemble_convection_rhs(g, spaces.u, frozen.u)
    if forcing is not None and forcing.f_u is not None:
        rhs_u += fem.assemble_load_vector_p2(g, spaces.u, forcing.f_u)
    if forcing is not None and forcing.g_B is not None:
        # keep h2 = (mass) x (div-free RT0 field): interpolate the forcing
        B_data = B_data + keff * fem.interpolate_rt0(spaces.mesh, forcing.g_B)
    h2 = MB3_full.csr @ B_data
    rhs_E = np.zeros(maps["E"].ndof)
    if forcing is not None and forcing.f_E is not None:
        rhs_E = params.s * fem.assemble_load_p1(g, spaces.E, forcing.f_E)
    rhs_full = {"u": rhs_u, "p": np.zeros(maps["p"].ndof), "B": -h2, "E": rhs_E}

    if convention == "triangular":
        for key in list(blocks_full):
            if key[0] in ("p", "B"):
                blocks_full[key] = -blocks_full[key]
        rhs_full["p"] = -rhs_full["p"]
        rhs_full["B"] = -rhs_full["B"]

    reduced = {}
    rhs_red = {}
    for fi in FIELDS:
        r = rhs_full[fi][maps[fi].free].copy()
        for fj in FIELDS:
            blk = blocks_full.get((fi, fj))
            if blk is None:
                continue
            r += fem.lift_dirichlet(blk, maps[fi], maps[fj], bc_state[fj])
            reduced[(fi, fj)] = blk[maps[fi].free][:, maps[fj].free].tocsr()
        rhs_red[fi] = r

    grid = [[reduced.get((fi, fj)) for fj in FIELDS] for fi in FIELDS]
    # structural zero diagonal for the pressure block so bmat knows the size
    grid[1][1] = sp.csr_matrix((maps["p"].nfree, maps["p"].nfree))
    sys_.A = sp.bmat(grid, format="csr")
    sys_.rhs = np.concatenate([rhs_red[f] for f in FIELDS])

    # --- preconditioner blocks ---------------------------------------------
    fu, fp, fB, fE = (maps[f].free for f in FIELDS)
    sys_.A1 = SparseMatrix(A1_full.csr[fu][:, fu].tocsr(), symmetric=True)
    sys_.H2_diag = keff * spaces.areas
    MB3_red = ((alpha if alpha > 0 else 1.0) * kinv) * spaces.M_B.csr[fB][:, fB]
    sys_.MB3 = SparseMatrix(MB3_red.tocsr(), symmetric=True)
    sys_.H3 = SparseMatrix(
        (MB3_red + (alpha if alpha > 0 else 1.0) * spaces.DD_B.csr[fB][:, fB]).tocsr(),
        symmetric=True)
    H4_mass = params.s * spaces.M_E.csr[fE][:, fE]
    H4_curl = (keff * alpha) * spaces.L_E.csr[fE][:, fE]
    sys_.H4_mass = SparseMatrix(H4_mass.tocsr())
    sys_.H4_curl = SparseMatrix(H4_curl.tocsr())
    sys_.H4 = SparseMatrix((H4_mass + H4_curl).tocsr(), symmetric=True)
    sys_.Bdiv_f = Bdiv_full.csr[fp][:, fu].tocsr()
    sys_.F_f = F_full.csr[fE][:, fu].tocsr()
    sys_.CBT_f = (alpha * spaces.CB.csr.T).tocsr()[fE][:, fB].tocsr()
    sys_.K_ff = spaces.K[fB][:, fE].tocsr()
    sys_.B_data_free = B_data[fB]
    sys_.deflate = kry.make_pressure_deflation(spaces.areas, sys_.slices["p"])
    return sys_


def weighted_norms(spaces: Spaces, params: PhysParams, state: BlockVector,
                   B_minus: np.ndarray, keff=None):
    """(||u||_H1, ||p||_H2, ||B||_H3, ||E||_H4) over full dof vectors."""
    keff = params.k if keff is None else keff
    kinv = 1.0 / keff
    alpha = params.alpha
    A1 = (kinv * (spaces.M_u.csr + spaces.D_u.csr)
          + (1.0 / params.Re) * spaces.K_u.csr
          + fem.assemble_cross_coupling(spaces.geom, spaces.u, params, B_minus).csr)
    nu = np.sqrt(max(state.u @ (A1 @ state.u), 0.0))
    np_ = np.sqrt(max(keff * (state.p @ (spaces.areas * state.p)), 0.0))
    H3 = alpha * (kinv * spaces.M_B.csr + spaces.DD_B.csr)
    nB = np.sqrt(max(state.B @ (H3 @ state.B), 0.0))
    H4 = params.s * spaces.M_E.csr + keff * alpha * spaces.L_E.csr
    nE = np.sqrt(max(state.E @ (H4 @ state.E), 0.0))
    return nu, np_, nB, nE


def correct_B(spaces: Spaces, E_history, B0_full: np.ndarray,
              k: float) -> np.ndarray:
    """B^n = B^0 - curl(sum_i k E^i): one incidence product on the summed
    potential, so Div of the result is exactly Div of B^0."""
    acc = np.zeros(spaces.E.ndof)
    for E in E_history:
        if E.shape[0] != spaces.E.ndof:
            raise ValueError("E history entry has wrong length")
        acc += E
    return B0_full - k * (spaces.K @ acc)


# ---------------------------------------------------------------------------
# linear and nonlinear solves
# ---------------------------------------------------------------------------

@dataclass
class SolverConfig:
    precond: pc.PrecondSpec
    krylov: kry.KrylovConfig

    def __post_init__(self):
        pc.check_krylov_compat(self.precond, self.krylov.method)

    @property
    def convention(self) -> str:
        return "symmetric" if self.krylov.method == "minres" else "triangular"


def solve_system(system: BlockSystem, cfg: SolverConfig, x0=None,
                 iterate_callback=None, subsolvers=None) -> kry.SolveResult:
    P = pc.Preconditioner(cfg.precond, system, subsolvers=subsolvers)
    A = system.A

    def apply_A(v):
        return A @ v

    deflate = system.deflate if cfg.krylov.deflate_pressure else None
    tag0 = None
    if cfg.precond.b_block_mode == "fused_algebraic":
        x0v = x0 if x0 is not None else np.zeros(system.ndof)
        t0 = system.tag0(x0v)
        # the fused path assumes the magnetic-row data has the
        # time-stepping structure "mass matrix applied to a data state";
        # time-dependent essential data breaks that, so verify the shadow
        # identity on the initial residual and fall back to the (always
        # correct) mass-solve path when it fails
        slB = system.slices["B"]
        r0B = (system.rhs - system.A @ x0v)[slB]
        dev = np.abs((system.A @ t0)[slB] - r0B).max()
        if dev <= 1e-10 * max(1.0, np.abs(r0B).max()):
            tag0 = t0
    method = cfg.krylov.method
    if method == "minres":
        return kry.minres(apply_A, P, system.rhs, cfg.krylov, x0=x0,
                          deflate=deflate, tag0=tag0,
                          iterate_callback=iterate_callback)
    if method == "gmres":
        return kry.gmres(apply_A, P, system.rhs, cfg.krylov, x0=x0,
                         deflate=deflate, tag0=tag0,
                         iterate_callback=iterate_callback)
    return kry.fgmres(apply_A, P, system.rhs, cfg.krylov, x0=x0,
                      deflate=deflate, tag0=tag0,
                      iterate_callback=iterate_callback)


@dataclass
class PicardStats:
    nl_iters: int
    krylov_iters: list
    converged: bool
    residuals: list
    max_div_krylov: float = 0.0


def picard_solve(spaces: Spaces, params: PhysParams, prev_state: BlockVector,
                 cfg: SolverConfig, bc_state: BlockVector, *,
                 hist_u=None, hist_B=None, keff=None,
                 forcing: Forcing | None = None, stabilized=False,
                 nl_tol=1e-6, nl_max_iter=50, track_div=False,
                 warn_k0=False, u_cache=None):
    """Iterate the Picard linearization until the relative nonlinear
    residual drops below nl_tol.  The frozen state of the first iterate
    is the previous time level."""
    x_state = prev_state.copy()
    for f in FIELDS:
        d = spaces.maps[f].dirichlet
        x_state[f][d] = bc_state[f][d]
    hist_u = prev_state.u if hist_u is None else hist_u
    hist_B = prev_state.B if hist_B is None else hist_B

    div_tracker = [0.0]
    kiters = []
    residuals = []
    res0 = None
    converged = False
    nl = 0
    # optional cross-step reuse of the velocity-block factorization for the
    # preconditioner (see time_loop's u_refresh); None -> per-step factor
    u_solver = u_cache.get("solver") if u_cache else None
    for it in range(nl_max_iter + 1):
        system = assemble_picard(
            spaces, params, x_state, bc_state, hist_u=hist_u, hist_B=hist_B,
            keff=keff, forcing=forcing, convention=cfg.convention,
            stabilized=stabilized, warn_k0=warn_k0 and it == 0)
        xfree = system.pack(x_state)
        r = system.rhs - system.A @ xfree
        if cfg.krylov.deflate_pressure:
            r = system.deflate(r)
        resn = float(np.linalg.norm(r))
        residuals.append(resn)
        if res0 is None:
            res0 = resn
        if res0 == 0.0 or resn <= nl_tol * res0:
            converged = True
            break
        if it == nl_max_iter:
            break
        callback = None
        if track_div:
            bc_div = spaces.Div @ _with_bc(spaces, "B", bc_state)
            freeB = spaces.maps["B"].free
            DivF = spaces.Div[:, freeB]
            slB = system.slices["B"]

            def callback(xi, _DivF=DivF, _slB=slB, _bc=bc_div):
                d = float(np.max(np.abs(_bc + _DivF @ xi[_slB])))
                if d > div_tracker[0]:
                    div_tracker[0] = d

        # The velocity-block factorization of the first iterate is reused as
        # the preconditioner's u-solve for the rest of the step: the frozen
        # magnetic field drifts only slightly between nonlinear iterates, so
        # the preconditioner stays uniformly equivalent while each subsequent
        # iterate skips the dominant factorization cost.  (The operator A
        # itself is always the freshly assembled one.)
        sub = pc.build_subsolvers(cfg.precond, system, u_solver=u_solver)
        if u_solver is None and not cfg.precond.inexact:
            u_solver = sub["u"]
            if u_cache is not None:
                u_cache["solver"] = u_solver
        res = solve_system(system, cfg, x0=xfree, iterate_callback=callback,
                           subsolvers=sub)
        if not res.converged:
            raise RuntimeError(
                f"Krylov solve failed at Picard iteration {it + 1} "
                f"(flag={res.flag}, relres={res.residuals[-1]:.2e})")
        kiters.append(res.iters)
        system.unpack_into(res.x, x_state)
        nl = it + 1
        if res.iters == 0:
            # The warm-started Krylov solve already satisfies its relative
            # tolerance, so the state is a fixed point of the linearization
            # at the accuracy the linear solver can deliver; iterating
            # further would reassemble the identical system forever.
            converged = True
            break
    return x_state, PicardStats(nl, kiters, converged, residuals, div_tracker[0])


def _with_bc(spaces, fname, bc_state):
    v = np.zeros(spaces.maps[fname].ndof)
    d = spaces.maps[fname].dirichlet
    v[d] = bc_state[fname][d]
    return v


@dataclass
class StepRecord:
    step: int
    t: float
    nl_iters: int
    krylov_iters: list
    div_inf: float
    k0: float
    max_div_krylov: float
    errors: dict | None = None


@dataclass
class TimeLoopResult:
    records: list
    state: BlockVector
    E_history: list
    B0: np.ndarray
    mean_krylov: float
    max_krylov: int
    min_k0: float
    max_div: float
    max_div_krylov: float


def time_loop(spaces: Spaces, params: PhysParams, cfg: SolverConfig, *,
              t_end: float, state0: BlockVector, bc_state_fn,
              forcing_fn=None, exact_fn=None, scheme="backward_euler",
              stabilized=False, nl_tol=1e-6, nl_max_iter=50,
              track_div=False, max_steps=None, keep_E_history=True,
              step_callback=None, u_refresh=1) -> TimeLoopResult:
    if scheme not in ("backward_euler", "bdf2"):
        raise ValueError(f"unknown scheme {scheme!r}")
    k = params.k
    nsteps = int(round(t_end / k))
    if max_steps is not None:
        nsteps = min(nsteps, max_steps)
    state = state0.copy()
    state_prev = None  # two-level history for BDF2
    records = []
    E_hist = []
    all_kiters = []
    min_k0 = np.inf
    max_div = 0.0
    max_div_kry = 0.0
    B0 = state0.B.copy()
    # u_refresh > 1 lets the preconditioner keep the velocity-block
    # factorization for that many consecutive steps; the frozen field it
    # was built from goes stale, which can only cost Krylov iterations,
    # never accuracy (stopping is residual-based on the fresh operator)
    u_cache = {"solver": None, "age": 0} if u_refresh > 1 else None

    for step in range(1, nsteps + 1):
        if u_cache is not None and u_cache["age"] >= u_refresh:
            u_cache.update(solver=None, age=0)
        t = step * k
        bc_state = bc_state_fn(t)
        forcing = forcing_fn(t) if forcing_fn is not None else None
        if scheme == "bdf2" and state_prev is not None:
            keff = 2.0 * k / 3.0
            hist_u = (4.0 * state.u - state_prev.u) / 3.0
            hist_B = (4.0 * state.B - state_prev.B) / 3.0
        else:
            keff = k
            hist_u = state.u
            hist_B = state.B
        new_state, stats = picard_solve(
            spaces, params, state, cfg, bc_state, hist_u=hist_u,
            hist_B=hist_B, keff=keff, forcing=forcing, stabilized=stabilized,
            nl_tol=nl_tol, nl_max_iter=nl_max_iter, track_div=track_div,
            u_cache=u_cache)
        if u_cache is not None:
            u_cache["age"] += 1
        if not all(np.all(np.isfinite(new_state[f])) for f in FIELDS):
            raise RuntimeError(f"non-finite state at step {step}")
        state_prev, state = state, new_state
        div_inf = float(np.max(np.abs(spaces.Div @ state.B)))
        k0 = compute_k0(spaces, params, state.B) if params.s > 0 else np.inf
        errors = None
        if exact_fn is not None:
            errors = field_errors(spaces, state, exact_fn(t))
        rec = StepRecord(step, t, stats.nl_iters, stats.krylov_iters,
                         div_inf, k0, stats.max_div_krylov, errors)
        records.append(rec)
        all_kiters.extend(stats.krylov_iters)
        min_k0 = min(min_k0, k0)
        max_div = max(max_div, div_inf)
        max_div_kry = max(max_div_kry, stats.max_div_krylov)
        if keep_E_history:
            E_hist.append(state.E.copy())
        if step_callback is not None:
            step_callback(rec, state)
    mean_k = float(np.mean(all_kiters)) if all_kiters else 0.0
    max_k = int(np.max(all_kiters)) if all_kiters else 0
    return TimeLoopResult(records, state, E_hist, B0, mean_k, max_k,
                          min_k0, max_div, max_div_kry)


# ---------------------------------------------------------------------------
# error norms against exact solutions
# ---------------------------------------------------------------------------

def field_errors(spaces: Spaces, state: BlockVector, exact: dict) -> dict:
    """L2 errors (and the H1 seminorm for u when 'du' is given) against
    closures evaluated at quadrature points.  The pressure error is taken
    after matching means (the discrete pressure is defined up to a
    constant)."""
    g = spaces.geom
    qx, qy = g.qpts[..., 0], g.qpts[..., 1]
    out = {}
    if "u" in exact:
        uq, gq = fem.eval_vector_p2(g, spaces.u, state.u)
        ex, ey = exact["u"](qx, qy)
        d2 = (uq[..., 0] - ex) ** 2 + (uq[..., 1] - ey) ** 2
        out["u_l2"] = float(np.sqrt(np.sum(g.qw * d2)))
        if "du" in exact:
            dd = np.asarray(exact["du"](qx, qy))  # (2, 2, T, Q)
            diff = gq - np.moveaxis(dd, (0, 1), (2, 3))
            out["u_h1"] = float(np.sqrt(np.sum(g.qw * np.einsum(
                "tqab,tqab->tq", diff, diff))))
    if "p" in exact:
        pq = np.broadcast_to(state.p[:, None], g.qw.shape)
        eq = np.asarray(exact["p"](qx, qy))
        mean_h = np.sum(g.qw * pq)
        mean_e = np.sum(g.qw * eq)
        d2 = (pq - mean_h - (eq - mean_e)) ** 2
        out["p_l2"] = float(np.sqrt(np.sum(g.qw * d2)))
    if "B" in exact:
        Bq = fem.eval_rt0(g, state.B)
        ex, ey = exact["B"](qx, qy)
        d2 = (Bq[..., 0] - ex) ** 2 + (Bq[..., 1] - ey) ** 2
        out["B_l2"] = float(np.sqrt(np.sum(g.qw * d2)))
    if "E" in exact:
        vals = state.E[spaces.mesh.triangles]     # (T, 3)
        Eq = np.einsum("ti,qi->tq", vals, fem.TRI_QUAD_BARY)
        eq = np.asarray(exact["E"](qx, qy))
        out["E_l2"] = float(np.sqrt(np.sum(g.qw * (Eq - eq) ** 2)))
    return out
