"""Experiment drivers: convergence studies, lid-driven cavity,
robustness sweeps, and spectral diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manufactured as mfr
from . import verify
from .krylov import KrylovConfig
from .mesh import build_uniform_square
from .precond import PrecondSpec, Preconditioner, measure_rho
from .system import (BlockVector, PhysParams, SolverConfig, Spaces,
                     assemble_picard, compute_k0, time_loop)


def default_solver(method="gmres", family="tri_exact", rel_tol=1e-8,
                   b_block_mode="mass_cholesky", max_iter=500) -> SolverConfig:
    return SolverConfig(PrecondSpec(family=family, b_block_mode=b_block_mode),
                        KrylovConfig(method=method, rel_tol=rel_tol,
                                     max_iter=max_iter))


# ---------------------------------------------------------------------------
# manufactured-solution convergence
# ---------------------------------------------------------------------------

def manufactured_run(n: int, k: float, t_end: float, scheme: str,
                     params: PhysParams | None = None,
                     solver: SolverConfig | None = None):
    params = (params or PhysParams()).with_k(k)
    solver = solver or default_solver(rel_tol=1e-10)
    mesh = build_uniform_square(n)
    spaces = Spaces(mesh, params)
    res = time_loop(
        spaces, params, solver, t_end=t_end,
        state0=mfr.initial_state(spaces),
        bc_state_fn=lambda t: mfr.bc_state(spaces, t),
        forcing_fn=lambda t: mfr.forcing(params, t),
        exact_fn=mfr.exact_fields, scheme=scheme, keep_E_history=False)
    return res, spaces


def converge_run(n: int, k: float, t_end: float, scheme: str,
                 params: PhysParams | None = None,
                 solver: SolverConfig | None = None):
    res, _ = manufactured_run(n, k, t_end, scheme, params, solver)
    errs = res.records[-1].errors
    return {"n": n, "k": k, "scheme": scheme, "max_div": res.max_div,
            "mean_krylov": res.mean_krylov, **errs}


def state_diff_errors(spaces: Spaces, st1, st2) -> dict:
    """L2 norms of the difference of two discrete states on a shared mesh."""
    from . import fem
    g = spaces.geom
    u1, _ = fem.eval_vector_p2(g, spaces.u, st1.u)
    u2, _ = fem.eval_vector_p2(g, spaces.u, st2.u)
    B1 = fem.eval_rt0(g, st1.B)
    B2 = fem.eval_rt0(g, st2.B)
    dEv = (st1.E - st2.E)[spaces.mesh.triangles]   # (T, 3) vertex values
    Eq = np.einsum("ti,qi->tq", dEv, fem.TRI_QUAD_BARY)
    du = np.sum((u1 - u2) ** 2, axis=-1)
    dB = np.sum((B1 - B2) ** 2, axis=-1)
    return {key: float(np.sqrt(np.sum(g.qw * d)))
            for key, d in (("u_l2", du), ("B_l2", dB), ("E_l2", Eq ** 2))}


def loglog_slope(hs, errs) -> float:
    hs, errs = np.asarray(hs, float), np.asarray(errs, float)
    A = np.column_stack([np.log(hs), np.ones(len(hs))])
    coef, *_ = np.linalg.lstsq(A, np.log(errs), rcond=None)
    return float(coef[0])


def spatial_study(ns=(8, 16, 32, 64), k=0.01, t_end=0.1,
                  solver: SolverConfig | None = None):
    rows = [converge_run(n, k, t_end, "backward_euler", solver=solver)
            for n in ns]
    hs = [1.0 / n for n in ns]
    slopes = {key: loglog_slope(hs, [r[key] for r in rows])
              for key in ("u_l2", "u_h1", "p_l2", "B_l2", "E_l2")}
    return rows, slopes


def temporal_study(ks=(0.1, 0.05, 0.025, 0.0125), n=32, t_end=0.8,
                   solver: SolverConfig | None = None):
    """Temporal order on a fixed mesh.

    Exact-solution errors saturate at the spatial discretisation floor once
    the time step is small, so the order is estimated from differences of
    solutions at consecutive step sizes: for second order,
    ``|x_k - x_{k/2}| ~ C k^2 (1 - 1/4)``, and the spatial component of the
    error cancels exactly because all runs share one mesh.  Per-step-size
    exact errors are still returned in ``rows`` for inspection.
    """
    runs = [manufactured_run(n, k, t_end, "bdf2", solver=solver) for k in ks]
    rows = []
    for k, (res, _) in zip(ks, runs):
        errs = res.records[-1].errors
        rows.append({"n": n, "k": k, "scheme": "bdf2", "max_div": res.max_div,
                     "mean_krylov": res.mean_krylov, **errs})
    spaces = runs[0][1]
    diffs = [state_diff_errors(spaces, runs[i][0].state, runs[i + 1][0].state)
             for i in range(len(runs) - 1)]
    k_pairs = list(ks[:-1])
    slopes = {key: loglog_slope(k_pairs, [d[key] for d in diffs])
              for key in ("u_l2", "B_l2", "E_l2")}
    slopes["combined"] = loglog_slope(
        k_pairs, [d["u_l2"] + d["B_l2"] + d["E_l2"] for d in diffs])
    return rows, slopes


# ---------------------------------------------------------------------------
# lid-driven cavity
# ---------------------------------------------------------------------------

def cavity_bc_state(spaces: Spaces) -> BlockVector:
    """u = (1,0) on the lid y=1 (leaky corners), u = 0 on the walls;
    n.B = n.B0 with the background field B0 = (0,1); E = 0."""
    def lid(x, y):
        return np.where(y >= 1.0 - 1e-12, 1.0, 0.0), np.zeros_like(x)

    def b0(x, y):
        return np.zeros_like(x), np.ones_like(x)

    return spaces.interpolate_state(u=lid, B=b0)


def cavity_initial_state(spaces: Spaces) -> BlockVector:
    st = spaces.zero_state()
    st.B = spaces.interpolate_state(B=lambda x, y: (np.zeros_like(x),
                                                    np.ones_like(x))).B
    return st


def cavity_run(n: int, k: float, Re: float, Rm: float,
               solver: SolverConfig, *, s=1.0, t_end=0.2, max_steps=None,
               track_div=False, nl_tol=1e-6, step_callback=None,
               u_refresh=1):
    params = PhysParams(Re=Re, Rm=Rm, s=s, k=k)
    mesh = build_uniform_square(n)
    spaces = Spaces(mesh, params)
    bc = cavity_bc_state(spaces)
    return time_loop(
        spaces, params, solver, t_end=t_end,
        state0=cavity_initial_state(spaces),
        bc_state_fn=lambda t: bc, scheme="backward_euler",
        nl_tol=nl_tol, track_div=track_div, max_steps=max_steps,
        keep_E_history=False, step_callback=step_callback,
        u_refresh=u_refresh)


def cavity_grid(n: int, k: float, solver_fn, *, t_end=0.2, max_steps=None,
                re_rm=((1, 1), (1, 400), (400, 1), (400, 400)), **kw):
    """Run the (Re, Rm) grid; solver_fn() builds a fresh SolverConfig."""
    out = {}
    for Re, Rm in re_rm:
        res = cavity_run(n, k, Re, Rm, solver_fn(), t_end=t_end,
                         max_steps=max_steps, **kw)
        out[(Re, Rm)] = res
    return out


# ---------------------------------------------------------------------------
# robustness sweep
# ---------------------------------------------------------------------------

def sweep_tables(families=("tri_exact", "tri_inexact"), method="fgmres",
                 ns=(32, 64), ks=(0.02, 0.01, 0.005, 0.0025),
                 re_rm=((1, 1), (1, 400), (400, 1), (400, 400)),
                 rel_tol=1e-6, max_steps=10, u_refresh=10):
    """One iteration-count table per (family, Re, Rm): rows k, columns n.
    Runs truncate to max_steps time steps; counts stabilize after a few.
    The reported max iteration count comes from the cold first solve, so
    reusing the preconditioner's velocity factor (u_refresh) only
    cheapens the warm steps."""
    tables = {}
    for family in families:
        for Re, Rm in re_rm:
            cells = {}
            for k in ks:
                for n in ns:
                    cfg = default_solver(method=method, family=family,
                                         rel_tol=rel_tol)
                    res = cavity_run(n, k, Re, Rm, cfg,
                                     max_steps=max_steps, u_refresh=u_refresh)
                    cells[(k, n)] = {"mean": res.mean_krylov,
                                     "max": res.max_krylov}
            tables[(family, Re, Rm)] = cells
    return tables


# ---------------------------------------------------------------------------
# spectral diagnostics
# ---------------------------------------------------------------------------

def spectrum_point(n: int, k: float, Re=1.0, Rm=1.0, s=1.0,
                   pcg_tol=1e-3) -> dict:
    """Constants of the cavity-start Picard system on a small mesh:
    kappa(D A), FOV (gamma, Gamma) of M_L A, inf-sup beta_h, and the
    measured contraction rho of the inexact velocity solve."""
    params = PhysParams(Re=Re, Rm=Rm, s=s, k=k)
    mesh = build_uniform_square(n)
    spaces = Spaces(mesh, params)
    bc = cavity_bc_state(spaces)
    state = cavity_initial_state(spaces)
    k0 = compute_k0(spaces, params, state.B)

    sym = assemble_picard(spaces, params, state, bc, convention="symmetric")
    kappa = verify.condition_number_MA(sym)

    tri = assemble_picard(spaces, params, state, bc, convention="triangular")
    P = Preconditioner(PrecondSpec(family="tri_exact"), tri)
    gamma, Gamma = verify.fov_bounds(tri, P)
    beta = verify.inf_sup_estimate(tri)
    rho = measure_rho(tri.A1, rel_tol=pcg_tol) if n <= 8 else np.nan
    return {"n": n, "k": k, "k0": k0, "kappa": kappa, "gamma": gamma,
            "Gamma": Gamma, "beta_h": beta, "rho": rho}
