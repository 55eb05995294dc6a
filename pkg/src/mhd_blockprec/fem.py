"""Finite-element spaces and assembly for the 2D incompressible MHD system.

Spaces
------
* velocity  u : vector P2 (dofs at vertices and edge midpoints, x/y interleaved)
* pressure  p : P0 (one dof per triangle)
* magnetic  B : lowest-order Raviart-Thomas, dof c_e = int_e B.n ds with the
  edge normal obtained by rotating the (low-index -> high-index) tangent
  clockwise; this convention makes the discrete curl (P1 -> RT0) exactly the
  signed vertex-edge incidence matrix with integer entries
* electric  E : scalar P1

All assemblers return matrices over the FULL dof sets; Dirichlet reduction
is a separate explicit step (`reduce_matrix` / `lift_dirichlet`) so that
inhomogeneous boundary data can be lifted symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix

# ---------------------------------------------------------------------------
# quadrature: symmetric 6-point triangle rule, exact through degree 4
# ---------------------------------------------------------------------------

_a1 = 0.445948490915965
_a2 = 0.091576213509771
TRI_QUAD_BARY = np.array(
    [
        [1 - 2 * _a1, _a1, _a1],
        [_a1, 1 - 2 * _a1, _a1],
        [_a1, _a1, 1 - 2 * _a1],
        [1 - 2 * _a2, _a2, _a2],
        [_a2, 1 - 2 * _a2, _a2],
        [_a2, _a2, 1 - 2 * _a2],
    ]
)
# relative weights (sum to 1); multiply by triangle area
TRI_QUAD_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)

# 3-point Gauss rule on [0,1] (degree 5) for edge moments
_g = np.sqrt(3.0 / 5.0) / 2.0
EDGE_QUAD_T = np.array([0.5 - _g, 0.5, 0.5 + _g])
EDGE_QUAD_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


def reference_quadrature():
    """(barycentric points, relative weights) of the triangle rule."""
    return TRI_QUAD_BARY.copy(), TRI_QUAD_W.copy()


# P2 shape functions and barycentric derivatives at the quad points.
# local nodes: [v0, v1, v2, m0, m1, m2], m_i = midpoint of edge opposite v_i
def _p2_shape(bary: np.ndarray):
    lam = bary  # (Q, 3)
    Q = lam.shape[0]
    N = np.empty((Q, 6))
    dN = np.zeros((Q, 6, 3))  # derivative w.r.t. each barycentric coordinate
    for i in range(3):
        N[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        dN[:, i, i] = 4 * lam[:, i] - 1
        j, k = (i + 1) % 3, (i + 2) % 3
        N[:, 3 + i] = 4 * lam[:, j] * lam[:, k]
        dN[:, 3 + i, j] = 4 * lam[:, k]
        dN[:, 3 + i, k] = 4 * lam[:, j]
    return N, dN


P2_N, P2_DN = _p2_shape(TRI_QUAD_BARY)


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

class CoefficientField:
    """Scalar coefficient, constant or a closure over points.

    Evaluation returns an array matching the leading shape of `points`
    (points has shape (..., 2)).  Values are checked to be strictly
    positive, as required of the material coefficients."""

    def __init__(self, value):
        if callable(value):
            self._fn = value
            self.constant = None
        else:
            v = float(value)
            if not np.isfinite(v):
                raise ValueError("coefficient must be finite")
            self.constant = v
            self._fn = None
        # positivity of constants checked eagerly
        if self.constant is not None and self.constant <= 0.0:
            raise ValueError("coefficient field must be strictly positive")

    def eval(self, points: np.ndarray) -> np.ndarray:
        if self.constant is not None:
            return np.full(points.shape[:-1], self.constant)
        vals = np.asarray(self._fn(points[..., 0], points[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, points.shape[:-1]).copy()
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
            raise ValueError("coefficient field must be strictly positive and finite")
        return vals


def as_coefficient(c) -> CoefficientField:
    return c if isinstance(c, CoefficientField) else CoefficientField(c)


# ---------------------------------------------------------------------------
# dof maps
# ---------------------------------------------------------------------------

@dataclass
class DofMap:
    kind: str  # VectorP2 | P0 | RT0 | P1
    ndof: int
    cell_dofs: np.ndarray        # (T, nloc)
    dirichlet: np.ndarray        # boolean mask over dofs
    free: np.ndarray             # indices of non-Dirichlet dofs

    @property
    def nfree(self) -> int:
        return self.free.shape[0]


def _make_dofmap(kind, ndof, cell_dofs, dirichlet):
    free = np.flatnonzero(~dirichlet)
    return DofMap(kind, ndof, cell_dofs, dirichlet, free)


def vector_p2_dofmap(mesh) -> DofMap:
    V, E = mesh.num_vertices, mesh.num_edges
    nodes = np.concatenate([mesh.triangles, V + mesh.tri_edges], axis=1)  # (T, 6)
    cell = np.empty((mesh.num_triangles, 12), dtype=np.int64)
    cell[:, 0::2] = 2 * nodes
    cell[:, 1::2] = 2 * nodes + 1
    node_bdry = np.concatenate([mesh.vertex_on_boundary, mesh.edge_on_boundary])
    dirichlet = np.repeat(node_bdry, 2)
    return _make_dofmap("VectorP2", 2 * (V + E), cell, dirichlet)


def p0_dofmap(mesh) -> DofMap:
    T = mesh.num_triangles
    cell = np.arange(T, dtype=np.int64)[:, None]
    return _make_dofmap("P0", T, cell, np.zeros(T, dtype=bool))


def rt0_dofmap(mesh) -> DofMap:
    return _make_dofmap("RT0", mesh.num_edges, mesh.tri_edges.copy(),
                        mesh.edge_on_boundary.copy())


def p1_dofmap(mesh) -> DofMap:
    return _make_dofmap("P1", mesh.num_vertices, mesh.triangles.copy(),
                        mesh.vertex_on_boundary.copy())


# ---------------------------------------------------------------------------
# geometry caches
# ---------------------------------------------------------------------------

class MeshGeometry:
    """Per-triangle quantities shared by every assembler."""

    def __init__(self, mesh):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]          # (T, 3, 2)
        self.corners = p
        self.areas = mesh.triangle_areas()         # (T,)
        # grad of barycentric coords: rot90ccw(p_{i+2} - p_{i+1}) / (2A)
        g = np.empty((mesh.num_triangles, 3, 2))
        for i in range(3):
            v = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            g[:, i, 0] = -v[:, 1]
            g[:, i, 1] = v[:, 0]
        g /= (2.0 * self.areas)[:, None, None]
        self.grad_bary = g                         # (T, 3, 2)
        # physical quadrature points
        self.qpts = np.einsum("qi,tid->tqd", TRI_QUAD_BARY, p)   # (T, Q, 2)
        # P2 gradients at quad points: (T, Q, 6, 2)
        self.p2_grad = np.einsum("qik,tkd->tqid", P2_DN, g)
        self.qw = TRI_QUAD_W[None, :] * self.areas[:, None]      # (T, Q)

    def rt0_basis(self):
        """RT0 basis values at quad points: (T, Q, 3, 2), local fn i on the
        edge opposite vertex i, normalized to unit flux w.r.t. the global
        edge normal."""
        mesh = self.mesh
        s = mesh.tri_edge_signs.astype(float)       # (T, 3)
        coef = s / (2.0 * self.areas[:, None])      # (T, 3)
        diff = self.qpts[:, :, None, :] - self.corners[:, None, :, :]  # (T,Q,3,2)
        return coef[:, None, :, None] * diff

    def rt0_div(self):
        """Constant divergence of each local RT0 basis function: (T, 3)."""
        return self.mesh.tri_edge_signs / self.areas[:, None]


def _scatter(rows, cols, data, shape) -> SparseMatrix:
    m = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    return SparseMatrix(m.tocsr())


def _scatter_local(cell_rows, cell_cols, local, shape) -> SparseMatrix:
    T, nr = cell_rows.shape
    nc = cell_cols.shape[1]
    rows = np.broadcast_to(cell_rows[:, :, None], (T, nr, nc))
    cols = np.broadcast_to(cell_cols[:, None, :], (T, nr, nc))
    return _scatter(rows, cols, local, shape)


# ---------------------------------------------------------------------------
# field evaluation at quadrature points
# ---------------------------------------------------------------------------

def eval_rt0(geom: MeshGeometry, coeffs: np.ndarray) -> np.ndarray:
    """RT0 field values at all quad points: (T, Q, 2)."""
    c = coeffs[geom.mesh.tri_edges]                 # (T, 3)
    return np.einsum("tc,tqcd->tqd", c, geom.rt0_basis())


def eval_vector_p2(geom: MeshGeometry, dofmap: DofMap, coeffs: np.ndarray):
    """Vector P2 field and gradient at quad points: (T,Q,2) and (T,Q,2,2)
    with grad[..., a, b] = d u_a / d x_b."""
    cd = coeffs[dofmap.cell_dofs]                   # (T, 12)
    cx, cy = cd[:, 0::2], cd[:, 1::2]               # (T, 6)
    u = np.empty(geom.qpts.shape)
    u[..., 0] = np.einsum("ti,qi->tq", cx, P2_N)
    u[..., 1] = np.einsum("ti,qi->tq", cy, P2_N)
    gr = np.empty(geom.qpts.shape[:2] + (2, 2))
    gr[..., 0, :] = np.einsum("ti,tqid->tqd", cx, geom.p2_grad)
    gr[..., 1, :] = np.einsum("ti,tqid->tqd", cy, geom.p2_grad)
    return u, gr


# ---------------------------------------------------------------------------
# assembly of the individual blocks
# ---------------------------------------------------------------------------

def assemble_vector_p2_mass(geom: MeshGeometry, dofmap: DofMap,
                            weight: float = 1.0) -> SparseMatrix:
    T = geom.mesh.num_triangles
    scal = weight * np.einsum("tq,qi,qj->tij", geom.qw, P2_N, P2_N)  # (T,6,6)
    local = np.zeros((T, 12, 12))
    local[:, 0::2, 0::2] = scal
    local[:, 1::2, 1::2] = scal
    return _scatter_local(dofmap.cell_dofs, dofmap.cell_dofs, local,
                          (dofmap.ndof, dofmap.ndof))


def assemble_vector_p2_stiffness(geom: MeshGeometry, dofmap: DofMap,
                                 weight: float = 1.0) -> SparseMatrix:
    T = geom.mesh.num_triangles
    scal = weight * np.einsum("tq,tqid,tqjd->tij", geom.qw, geom.p2_grad, geom.p2_grad)
    local = np.zeros((T, 12, 12))
    local[:, 0::2, 0::2] = scal
    local[:, 1::2, 1::2] = scal
    return _scatter_local(dofmap.cell_dofs, dofmap.cell_dofs, local,
                          (dofmap.ndof, dofmap.ndof))


def assemble_vector_p2_divdiv(geom: MeshGeometry, dofmap: DofMap,
                              weight: float = 1.0) -> SparseMatrix:
    # div of basis (N_i e_a) is dN_i/dx_a: (T, Q, 12)
    T, Q = geom.qw.shape
    dv = np.empty((T, Q, 12))
    dv[:, :, 0::2] = geom.p2_grad[..., 0]
    dv[:, :, 1::2] = geom.p2_grad[..., 1]
    local = weight * np.einsum("tq,tql,tqm->tlm", geom.qw, dv, dv)
    return _scatter_local(dofmap.cell_dofs, dofmap.cell_dofs, local,
                          (dofmap.ndof, dofmap.ndof))


def _cross_basis(geom: MeshGeometry, B_q: np.ndarray) -> np.ndarray:
    """(phi_l x B) at quad points for the 12 local velocity basis functions,
    with the 2D scalar cross product u x B = u1 B2 - u2 B1: (T, Q, 12)."""
    T, Q = geom.qw.shape
    c = np.empty((T, Q, 12))
    c[:, :, 0::2] = P2_N[None, :, :] * B_q[:, :, None, 1]
    c[:, :, 1::2] = -P2_N[None, :, :] * B_q[:, :, None, 0]
    return c


def assemble_cross_coupling(geom: MeshGeometry, dofmap: DofMap, params,
                            B_minus: np.ndarray) -> SparseMatrix:
    """W with entries s (sigma_r u x B-, v x B-); zero when s=0 or B-=0."""
    shape = (dofmap.ndof, dofmap.ndof)
    if params.s == 0 or not np.any(B_minus != 0.0):
        return SparseMatrix(sp.csr_matrix(shape))
    B_q = eval_rt0(geom, B_minus)
    sig = params.sigma_r.eval(geom.qpts)
    c = _cross_basis(geom, B_q)
    local = params.s * np.einsum("tq,tq,tql,tqm->tlm", geom.qw, sig, c, c)
    return _scatter_local(dofmap.cell_dofs, dofmap.cell_dofs, local, shape)


def assemble_velocity_block(geom: MeshGeometry, dofmap: DofMap, params,
                            B_minus: np.ndarray) -> SparseMatrix:
    """A1 = k^{-1} M + Re^{-1} K + k^{-1} D_div + s (sigma_r u x B-, v x B-)."""
    if params.k <= 0 or params.Re <= 0 or params.s < 0:
        raise ValueError("k, Re must be positive and s non-negative")
    kinv = 1.0 / params.k
    A = (kinv * assemble_vector_p2_mass(geom, dofmap).csr
         + (1.0 / params.Re) * assemble_vector_p2_stiffness(geom, dofmap).csr
         + kinv * assemble_vector_p2_divdiv(geom, dofmap).csr
         + assemble_cross_coupling(geom, dofmap, params, B_minus).csr)
    return SparseMatrix(A.tocsr(), symmetric=True)


def assemble_div_coupling(geom: MeshGeometry, u_map: DofMap, p_map: DofMap) -> SparseMatrix:
    """(div v, q): rows P0, cols vector P2."""
    T, Q = geom.qw.shape
    dv = np.empty((T, Q, 12))
    dv[:, :, 0::2] = geom.p2_grad[..., 0]
    dv[:, :, 1::2] = geom.p2_grad[..., 1]
    local = np.einsum("tq,tql->tl", geom.qw, dv)[:, None, :]  # (T, 1, 12)
    return _scatter_local(p_map.cell_dofs, u_map.cell_dofs, local,
                          (p_map.ndof, u_map.ndof))


def assemble_rt0_mass(geom: MeshGeometry, mu_r, weight: float = 1.0) -> SparseMatrix:
    if weight <= 0:
        raise ValueError("weight must be positive")
    mu_inv = 1.0 / as_coefficient(mu_r).eval(geom.qpts)
    psi = geom.rt0_basis()
    local = weight * np.einsum("tq,tq,tqid,tqjd->tij", geom.qw, mu_inv, psi, psi)
    E = geom.mesh.num_edges
    return _scatter_local(geom.mesh.tri_edges, geom.mesh.tri_edges, local, (E, E))


def assemble_rt0_divdiv(geom: MeshGeometry, mu_r, weight: float = 1.0) -> SparseMatrix:
    if weight <= 0:
        raise ValueError("weight must be positive")
    mu_inv = 1.0 / as_coefficient(mu_r).eval(geom.qpts)
    w = np.einsum("tq,tq->t", geom.qw, mu_inv)      # int_T mu^-1
    dv = geom.rt0_div()                              # (T, 3)
    local = weight * w[:, None, None] * dv[:, :, None] * dv[:, None, :]
    E = geom.mesh.num_edges
    return _scatter_local(geom.mesh.tri_edges, geom.mesh.tri_edges, local, (E, E))


def assemble_p1_mass(geom: MeshGeometry, sigma_r, weight: float = 1.0) -> SparseMatrix:
    if weight <= 0:
        raise ValueError("weight must be positive")
    sig = as_coefficient(sigma_r).eval(geom.qpts)
    local = weight * np.einsum("tq,tq,qi,qj->tij", geom.qw, sig,
                               TRI_QUAD_BARY, TRI_QUAD_BARY)
    V = geom.mesh.num_vertices
    return _scatter_local(geom.mesh.triangles, geom.mesh.triangles, local, (V, V))


def assemble_p1_stiffness(geom: MeshGeometry, weight: float = 1.0) -> SparseMatrix:
    local = weight * np.einsum("t,tid,tjd->tij", geom.areas,
                               geom.grad_bary, geom.grad_bary)
    V = geom.mesh.num_vertices
    return _scatter_local(geom.mesh.triangles, geom.mesh.triangles, local, (V, V))


def assemble_discrete_curl(mesh) -> sp.csr_matrix:
    """Integer incidence matrix K (edges x vertices): the RT0 coefficient of
    curl(phi_v) on edge e is phi_v(head) - phi_v(tail)."""
    E = mesh.num_edges
    rows = np.repeat(np.arange(E, dtype=np.int64), 2)
    cols = mesh.edges.ravel()
    data = np.tile(np.array([-1, 1], dtype=np.int64), E)
    return sp.csr_matrix((data, (rows, cols)), shape=(E, mesh.num_vertices))


def div_incidence(mesh) -> sp.csr_matrix:
    """Integer signed triangle-edge incidence S with (div B)|_T = (S c)_T / |T|."""
    T = mesh.num_triangles
    rows = np.repeat(np.arange(T, dtype=np.int64), 3)
    cols = mesh.tri_edges.ravel()
    data = mesh.tri_edge_signs.ravel().astype(np.int64)
    return sp.csr_matrix((data, (rows, cols)), shape=(T, mesh.num_edges))


def assemble_discrete_div(mesh) -> sp.csr_matrix:
    """(div B)|_T per triangle: rows scaled by 1/|T|."""
    S = div_incidence(mesh)
    areas = mesh.triangle_areas()
    return sp.diags(1.0 / areas) @ S


def assemble_e_curlcurl(mesh, mu_r, weight: float = 1.0) -> SparseMatrix:
    """weight * K^T M_B(mu^-1) K; equals the weighted P1 Laplacian when mu=1."""
    geom = MeshGeometry(mesh)
    K = assemble_discrete_curl(mesh).astype(float)
    MB = assemble_rt0_mass(geom, mu_r, 1.0).csr
    return SparseMatrix(weight * (K.T @ MB @ K))


def assemble_lorentz_coupling(geom: MeshGeometry, u_map: DofMap, e_map: DofMap,
                              params, B_minus: np.ndarray) -> SparseMatrix:
    """F with entries s (sigma_r u x B-, F_test): rows P1, cols vector P2."""
    shape = (e_map.ndof, u_map.ndof)
    if params.s == 0 or not np.any(B_minus != 0.0):
        return SparseMatrix(sp.csr_matrix(shape))
    B_q = eval_rt0(geom, B_minus)
    sig = params.sigma_r.eval(geom.qpts)
    c = _cross_basis(geom, B_q)                          # (T, Q, 12)
    local = params.s * np.einsum("tq,tq,qj,tql->tjl", geom.qw, sig,
                                 TRI_QUAD_BARY, c)       # (T, 3, 12)
    return _scatter_local(e_map.cell_dofs, u_map.cell_dofs, local, shape)


def assemble_convection_rhs(geom: MeshGeometry, u_map: DofMap,
                            u_minus: np.ndarray) -> np.ndarray:
    """-d(u-, u-, v) with d(w,u,v) = 0.5[(w.grad u, v) - (w.grad v, u)]."""
    if not np.any(u_minus != 0.0):
        return np.zeros(u_map.ndof)
    u, gr = eval_vector_p2(geom, u_map, u_minus)
    conv = np.einsum("tqb,tqab->tqa", u, gr)             # (u.grad)u
    T, Q = geom.qw.shape
    t1 = np.empty((T, Q, 12))
    t1[:, :, 0::2] = conv[:, :, None, 0] * P2_N[None]
    t1[:, :, 1::2] = conv[:, :, None, 1] * P2_N[None]
    ugradN = np.einsum("tqd,tqid->tqi", u, geom.p2_grad)  # (T, Q, 6)
    t2 = np.empty((T, Q, 12))
    t2[:, :, 0::2] = u[:, :, None, 0] * ugradN
    t2[:, :, 1::2] = u[:, :, None, 1] * ugradN
    local = -0.5 * np.einsum("tq,tql->tl", geom.qw, t1 - t2)
    rhs = np.zeros(u_map.ndof)
    np.add.at(rhs, u_map.cell_dofs.ravel(), local.ravel())
    return rhs


def trilinear_d(geom: MeshGeometry, u_map: DofMap, w: np.ndarray,
                u: np.ndarray, v: np.ndarray) -> float:
    """d(w, u, v) evaluated directly (for tests and residuals)."""
    wq, _ = eval_vector_p2(geom, u_map, w)
    uq, gu = eval_vector_p2(geom, u_map, u)
    vq, gv = eval_vector_p2(geom, u_map, v)
    t1 = np.einsum("tq,tqb,tqab,tqa->", geom.qw, wq, gu, vq)
    t2 = np.einsum("tq,tqb,tqab,tqa->", geom.qw, wq, gv, uq)
    return 0.5 * (t1 - t2)


def assemble_load_vector_p2(geom: MeshGeometry, u_map: DofMap,
                            f: Callable) -> np.ndarray:
    """(f, v) for a vector-valued closure f(x, y) -> (2,) arrays."""
    fx, fy = f(geom.qpts[..., 0], geom.qpts[..., 1])
    rhs_loc = np.empty((geom.qw.shape[0], geom.qw.shape[1], 12))
    rhs_loc[:, :, 0::2] = np.asarray(fx)[:, :, None] * P2_N[None]
    rhs_loc[:, :, 1::2] = np.asarray(fy)[:, :, None] * P2_N[None]
    local = np.einsum("tq,tql->tl", geom.qw, rhs_loc)
    rhs = np.zeros(u_map.ndof)
    np.add.at(rhs, u_map.cell_dofs.ravel(), local.ravel())
    return rhs


def assemble_load_p1(geom: MeshGeometry, e_map: DofMap, f: Callable,
                     sigma_r=None) -> np.ndarray:
    """(w f, F) for scalar closures, optional positive weight w."""
    vals = np.asarray(f(geom.qpts[..., 0], geom.qpts[..., 1]), dtype=float)
    if sigma_r is not None:
        vals = vals * as_coefficient(sigma_r).eval(geom.qpts)
    local = np.einsum("tq,tq,qj->tj", geom.qw, vals, TRI_QUAD_BARY)
    rhs = np.zeros(e_map.ndof)
    np.add.at(rhs, e_map.cell_dofs.ravel(), local.ravel())
    return rhs


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def interpolate_p1(mesh, f) -> np.ndarray:
    return np.asarray(f(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float)


def interpolate_p0(mesh, f) -> np.ndarray:
    c = mesh.vertices[mesh.triangles].mean(axis=1)
    return np.asarray(f(c[:, 0], c[:, 1]), dtype=float)


def interpolate_rt0(mesh, f) -> np.ndarray:
    """c_e = int_e f.n ds by 3-point Gauss; exact for polynomial fluxes
    through degree 5 along each straight edge."""
    tail = mesh.vertices[mesh.edges[:, 0]]
    head = mesh.vertices[mesh.edges[:, 1]]
    t = head - tail                               # (E, 2); |n ds| = |t| dt
    c = np.zeros(mesh.num_edges)
    for tq, wq in zip(EDGE_QUAD_T, EDGE_QUAD_W):
        x = tail + tq * t
        fx, fy = f(x[:, 0], x[:, 1])
        # n ds = (t_y, -t_x) dt  (tangent rotated clockwise)
        c += wq * (np.asarray(fx) * t[:, 1] - np.asarray(fy) * t[:, 0])
    return c


def interpolate_vector_p2(mesh, f) -> np.ndarray:
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    pts = np.vstack([mesh.vertices, mids])
    fx, fy = f(pts[:, 0], pts[:, 1])
    out = np.empty(2 * pts.shape[0])
    out[0::2] = fx
    out[1::2] = fy
    return out


def interpolate(mesh, space: str, f) -> np.ndarray:
    """Dispatch on space kind in {VectorP2, P0, RT0, P1}."""
    table = {"VectorP2": interpolate_vector_p2, "P0": interpolate_p0,
             "RT0": interpolate_rt0, "P1": interpolate_p1}
    try:
        return table[space](mesh, f)
    except KeyError:
        raise ValueError(f"unknown space {space!r}") from None


# ---------------------------------------------------------------------------
# Dirichlet reduction
# ---------------------------------------------------------------------------

def reduce_matrix(A, row_map: DofMap, col_map: DofMap) -> sp.csr_matrix:
    m = A.csr if isinstance(A, SparseMatrix) else sp.csr_matrix(A)
    return m[row_map.free][:, col_map.free].tocsr()


def lift_dirichlet(A, row_map: DofMap, col_map: DofMap,
                   values: np.ndarray) -> np.ndarray:
    """rhs correction -A[free, dirichlet] @ values[dirichlet] for symmetric
    elimination of inhomogeneous Dirichlet data."""
    m = A.csr if isinstance(A, SparseMatrix) else sp.csr_matrix(A)
    dir_idx = np.flatnonzero(col_map.dirichlet)
    if dir_idx.size == 0 or not np.any(values[dir_idx] != 0.0):
        return np.zeros(row_map.nfree)
    return -(m[row_map.free][:, dir_idx] @ values[dir_idx])
