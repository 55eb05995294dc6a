"""Finite-element assembly: quadrature, dof maps, bilinear forms,
incidence operators, interpolation."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mhd_blockprec import fem
from mhd_blockprec.mesh import build_uniform_square
from mhd_blockprec.system import PhysParams


@pytest.fixture(scope="module")
def mesh4():
    return build_uniform_square(4)


@pytest.fixture(scope="module")
def geom4(mesh4):
    return fem.MeshGeometry(mesh4)


def params(Re=1.0, Rm=1.0, s=1.0, k=0.01):
    return PhysParams(Re=Re, Rm=Rm, s=s, k=k)


# ---------------------------------------------------------------- quadrature

def _bary_to_monomial_integral(a, b):
    # exact integral of x^a y^b over the reference triangle {x,y>=0, x+y<=1}
    from math import factorial
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_triangle_quadrature_degree4():
    pts, w = fem.reference_quadrature()
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    for a in range(5):
        for b in range(5 - a):
            val = 0.5 * np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert val == pytest.approx(_bary_to_monomial_integral(a, b),
                                        abs=1e-14), (a, b)


def test_edge_quadrature_degree5():
    for d in range(6):
        val = np.sum(fem.EDGE_QUAD_W * fem.EDGE_QUAD_T ** d)
        assert val == pytest.approx(1.0 / (d + 1), abs=1e-14)


# ------------------------------------------------------------------ dof maps

def test_dof_counts(mesh4):
    V, E, T = mesh4.num_vertices, mesh4.num_edges, mesh4.num_triangles
    assert fem.vector_p2_dofmap(mesh4).ndof == 2 * (V + E)
    assert fem.p0_dofmap(mesh4).ndof == T
    assert fem.rt0_dofmap(mesh4).ndof == E
    assert fem.p1_dofmap(mesh4).ndof == V


def test_dirichlet_sets(mesh4):
    u_map = fem.vector_p2_dofmap(mesh4)
    # u constrained on boundary vertices and boundary edge midpoints (x2 comps)
    nb = mesh4.vertex_on_boundary.sum() + mesh4.edge_on_boundary.sum()
    assert u_map.dirichlet.sum() == 2 * nb
    assert fem.p0_dofmap(mesh4).nfree == mesh4.num_triangles
    b_map = fem.rt0_dofmap(mesh4)
    assert np.array_equal(b_map.dirichlet, mesh4.edge_on_boundary)
    e_map = fem.p1_dofmap(mesh4)
    assert np.array_equal(e_map.dirichlet, mesh4.vertex_on_boundary)


def test_coefficient_field_positive():
    c = fem.as_coefficient(2.0)
    assert np.all(c.eval(np.zeros((5, 2))) == 2.0)
    with pytest.raises(ValueError):
        fem.as_coefficient(0.0)
    bad = fem.as_coefficient(lambda x, y: x - 10.0)
    with pytest.raises(ValueError):
        bad.eval(np.zeros((3, 2)))


# ------------------------------------------------------------- velocity block

def test_velocity_block_no_coupling_when_b_zero(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    p = params(Re=2.0, k=0.05, s=3.0)
    B0 = np.zeros((mesh4.num_triangles, len(fem.TRI_QUAD_W), 2))
    A = fem.assemble_velocity_block(geom4, u_map, p, B0)
    M = fem.assemble_vector_p2_mass(geom4, u_map)
    K = fem.assemble_vector_p2_stiffness(geom4, u_map)
    D = fem.assemble_vector_p2_divdiv(geom4, u_map)
    ref = M.csr / p.k + K.csr / p.Re + D.csr / p.k
    assert abs(A.csr - ref).max() < 1e-13


def test_cross_energy_constant_fields(mesh4, geom4):
    # u=(1,0), B=(0,1): u x B = 1, energy = s * |Omega| = s
    u_map = fem.vector_p2_dofmap(mesh4)
    s = 1.7
    Bc = fem.interpolate_rt0(
        mesh4, lambda x, y: (np.zeros_like(x), np.ones_like(x)))
    W = fem.assemble_cross_coupling(geom4, u_map, params(s=s), Bc)
    ones = np.zeros(u_map.ndof)
    ones[0::2] = 1.0
    assert ones @ (W.csr @ ones) == pytest.approx(s, abs=1e-12)


def test_velocity_block_spd_dense_oracle():
    m = build_uniform_square(2)
    geom = fem.MeshGeometry(m)
    u_map = fem.vector_p2_dofmap(m)
    Bc = fem.interpolate_rt0(m, lambda x, y: (y, x))
    A = fem.assemble_velocity_block(geom, u_map, params(s=2.0), Bc)
    D = A.csr.toarray()
    assert abs(D - D.T).max() < 1e-13
    Dff = D[np.ix_(u_map.free, u_map.free)]
    assert np.linalg.eigvalsh(Dff).min() > 0


def test_velocity_block_rejects_bad_params(geom4, mesh4):
    u_map = fem.vector_p2_dofmap(mesh4)
    Bq = np.zeros((mesh4.num_triangles, len(fem.TRI_QUAD_W), 2))
    with pytest.raises(ValueError):
        fem.assemble_velocity_block(geom4, u_map, params(k=-1.0), Bq)
    with pytest.raises(ValueError):
        fem.assemble_velocity_block(geom4, u_map, params(Re=0.0), Bq)


# --------------------------------------------------------------- div coupling

def test_div_coupling_constant_field(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    p_map = fem.p0_dofmap(mesh4)
    Bd = fem.assemble_div_coupling(geom4, u_map, p_map)
    c = fem.interpolate_vector_p2(
        mesh4, lambda x, y: (np.ones_like(x), -2 * np.ones_like(x)))
    assert abs(Bd.csr @ c).max() < 1e-13


def test_div_coupling_linear_field_quadrature_oracle(mesh4, geom4):
    # v = (x, 0): div v = 1, so (div v, q_T) = area(T) for the indicator q_T
    u_map = fem.vector_p2_dofmap(mesh4)
    p_map = fem.p0_dofmap(mesh4)
    Bd = fem.assemble_div_coupling(geom4, u_map, p_map)
    c = fem.interpolate_vector_p2(mesh4, lambda x, y: (x, np.zeros_like(x)))
    assert np.allclose(Bd.csr @ c, mesh4.triangle_areas(), atol=1e-13)


def test_div_coupling_divergence_theorem(mesh4, geom4):
    # sum over q of (div v, q) = integral of div v = boundary flux of v
    u_map = fem.vector_p2_dofmap(mesh4)
    p_map = fem.p0_dofmap(mesh4)
    Bd = fem.assemble_div_coupling(geom4, u_map, p_map)
    c = fem.interpolate_vector_p2(mesh4, lambda x, y: (x * x, x * y))
    # div v = 3x; integral over unit square = 3/2 (v is quadratic: exact)
    assert (Bd.csr @ c).sum() == pytest.approx(1.5, abs=1e-12)


# ----------------------------------------------------------------- B/E blocks

def test_rt0_mass_constant_energy(mesh4, geom4):
    MB = fem.assemble_rt0_mass(geom4, 1.0)
    c = fem.interpolate_rt0(mesh4,
                            lambda x, y: (np.zeros_like(x), np.ones_like(x)))
    assert c @ (MB.csr @ c) == pytest.approx(1.0, abs=1e-12)
    MB2 = fem.assemble_rt0_mass(geom4, 1.0, weight=2.0)
    assert abs(MB2.csr - 2.0 * MB.csr).max() < 1e-13


def test_rt0_mass_quadrature_oracle():
    # entry-by-entry check against direct midpoint-rule-free quadrature
    m = build_uniform_square(2)
    geom = fem.MeshGeometry(m)
    MB = fem.assemble_rt0_mass(geom, 1.0).csr.toarray()
    ref = np.zeros_like(MB)
    pts, w = fem.reference_quadrature()
    basis = geom.rt0_basis()          # (T, Q, 3, 2)
    for t in range(m.num_triangles):
        ed = m.tri_edges[t]
        for i in range(3):
            for j in range(3):
                val = geom.areas[t] * np.sum(
                    w * np.sum(basis[t, :, i] * basis[t, :, j], axis=1))
                ref[ed[i], ed[j]] += val
    assert abs(MB - ref).max() < 1e-13


def test_rt0_divdiv_kills_curls(mesh4, geom4):
    DD = fem.assemble_rt0_divdiv(geom4, 1.0)
    K = fem.assemble_discrete_curl(mesh4)
    rng = np.random.default_rng(3)
    E = rng.standard_normal(mesh4.num_vertices)
    c = K @ E
    assert abs(c @ (DD.csr @ c)) < 1e-12


def test_rt0_divdiv_kernel_dimension():
    m = build_uniform_square(2)
    geom = fem.MeshGeometry(m)
    DD = fem.assemble_rt0_divdiv(geom, 1.0).csr.toarray()
    rank = np.linalg.matrix_rank(DD, tol=1e-10)
    # kernel of div on RT0 = image of the discrete curl on all P1
    # (dim = V - 1, the constant is the curl kernel)
    assert DD.shape[0] - rank == m.num_vertices - 1


def test_curlcurl_is_p1_stiffness(mesh4, geom4):
    L = fem.assemble_e_curlcurl(mesh4, 1.0)
    Kp1 = fem.assemble_p1_stiffness(geom4)
    assert abs(L.csr - Kp1.csr).max() < 1e-13


def test_h4_matrix_spd():
    m = build_uniform_square(2)
    geom = fem.MeshGeometry(m)
    H4 = (fem.assemble_p1_mass(geom, 1.0, weight=1.5).csr
          + fem.assemble_e_curlcurl(m, 1.0, weight=0.01).csr)
    e_map = fem.p1_dofmap(m)
    D = H4.toarray()[np.ix_(e_map.free, e_map.free)]
    assert abs(D - D.T).max() < 1e-13
    assert np.linalg.eigvalsh(D).min() > 0


# ------------------------------------------------------- incidence operators

def test_discrete_curl_triangle_cycles(mesh4):
    K = fem.assemble_discrete_curl(mesh4).toarray()
    # signed sum of K rows around any triangle boundary telescopes to zero
    for t in range(mesh4.num_triangles):
        ed = mesh4.tri_edges[t]
        sg = mesh4.tri_edge_signs[t]
        assert np.all(sg @ K[ed] == 0)


def test_exact_sequence_integer():
    for n in range(1, 17):
        m = build_uniform_square(n)
        K = fem.assemble_discrete_curl(m)
        S = fem.div_incidence(m)
        P = S @ K
        assert P.dtype.kind == "i"
        assert P.nnz == 0 or abs(P.data).max() == 0


def test_weak_strong_curl_consistency(mesh4):
    # quadrature assembly of (mu^-1 curl E, C) must equal M_B(mu^-1) K
    geom = fem.MeshGeometry(mesh4)
    mu = lambda x, y: 1.0 + 0.3 * x + 0.1 * y
    MB = fem.assemble_rt0_mass(geom, lambda x, y: mu(x, y))
    K = fem.assemble_discrete_curl(mesh4)
    ref = MB.csr @ K
    # independent path: interpolate curl of each hat function directly
    for v in range(0, mesh4.num_vertices, 7):
        e = np.zeros(mesh4.num_vertices)
        e[v] = 1.0
        assert abs(ref @ e - MB.csr @ (K @ e)).max() < 1e-12


def test_discrete_div_values(mesh4):
    Div = fem.assemble_discrete_div(mesh4)
    c0 = fem.interpolate_rt0(mesh4,
                             lambda x, y: (np.zeros_like(x), np.ones_like(x)))
    assert abs(Div @ c0).max() < 1e-13
    c1 = fem.interpolate_rt0(mesh4, lambda x, y: (x, y))
    assert np.allclose(Div @ c1, 2.0, atol=1e-12)


# ------------------------------------------------------------- couplings/rhs

def test_lorentz_zero_field(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    e_map = fem.p1_dofmap(mesh4)
    B0 = np.zeros((mesh4.num_triangles, len(fem.TRI_QUAD_W), 2))
    F = fem.assemble_lorentz_coupling(geom4, u_map, e_map, params(), B0)
    assert F.nnz == 0 or abs(F.csr).max() == 0


def test_lorentz_scales_with_s(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    e_map = fem.p1_dofmap(mesh4)
    Bc = fem.interpolate_rt0(mesh4, lambda x, y: (y, -x))
    F1 = fem.assemble_lorentz_coupling(geom4, u_map, e_map, params(s=1.0), Bc)
    F2 = fem.assemble_lorentz_coupling(geom4, u_map, e_map, params(s=2.0), Bc)
    assert abs(F2.csr - 2.0 * F1.csr).max() < 1e-12


def test_lorentz_transpose_consistency(mesh4, geom4):
    # the u-row block -s(sigma E x B, v) = s(sigma E, v x B) must equal F^T
    u_map = fem.vector_p2_dofmap(mesh4)
    e_map = fem.p1_dofmap(mesh4)
    p = params(s=1.3)
    Bc = fem.interpolate_rt0(mesh4, lambda x, y: (y, x))
    Bq = fem.eval_rt0(geom4, Bc)
    F = fem.assemble_lorentz_coupling(geom4, u_map, e_map, p, Bc).csr.toarray()
    # independent quadrature of s(sigma E, v x B): columns = P1, rows = u dofs
    pts, w = fem.reference_quadrature()
    cross = fem._cross_basis(geom4, Bq)        # (T, Q, 12)
    bary = fem.TRI_QUAD_BARY
    ref = np.zeros((u_map.ndof, e_map.ndof))
    for t in range(mesh4.num_triangles):
        udofs = u_map.cell_dofs[t]
        vdofs = mesh4.triangles[t]
        blk = p.s * geom4.areas[t] * np.einsum(
            "q,qi,qj->ij", w, cross[t], bary)
        ref[np.ix_(udofs, vdofs)] += blk
    assert abs(F.T - ref).max() < 1e-12


def test_convection_rhs_zero(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    r = fem.assemble_convection_rhs(geom4, u_map, np.zeros(u_map.ndof))
    assert abs(r).max() == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_trilinear_skew_symmetry(seed):
    m = build_uniform_square(3)
    geom = fem.MeshGeometry(m)
    u_map = fem.vector_p2_dofmap(m)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(u_map.ndof)
    u = rng.standard_normal(u_map.ndof)
    assert abs(fem.trilinear_d(geom, u_map, w, u, u)) < 1e-12


def test_convection_rhs_matches_trilinear(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    c = fem.interpolate_vector_p2(mesh4, lambda x, y: (y, np.zeros_like(x)))
    r = fem.assemble_convection_rhs(geom4, u_map, c)
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.standard_normal(u_map.ndof)
        assert r @ v == pytest.approx(-fem.trilinear_d(geom4, u_map, c, c, v),
                                      abs=1e-12)


# -------------------------------------------------------------- interpolation

def test_interpolate_p1_constant(mesh4):
    c = fem.interpolate(mesh4, "P1", lambda x, y: np.ones_like(x))
    assert np.allclose(c, 1.0)


def test_interpolate_rt0_constant_closed_form(mesh4):
    c = fem.interpolate(mesh4, "RT0",
                        lambda x, y: (np.zeros_like(x), np.ones_like(x)))
    # c_e = int_e (0,1).n = (0,1).(t_y,-t_x)*|e| = -(x_head - x_tail)
    tang = mesh4.vertices[mesh4.edges[:, 1]] - mesh4.vertices[mesh4.edges[:, 0]]
    assert np.allclose(c, -tang[:, 0], atol=1e-14)


def test_lift_dirichlet_zero_values(mesh4, geom4):
    u_map = fem.vector_p2_dofmap(mesh4)
    M = fem.assemble_vector_p2_mass(geom4, u_map)
    corr = fem.lift_dirichlet(M.csr, u_map, u_map, np.zeros(u_map.ndof))
    assert abs(corr).max() == 0


def test_lift_dirichlet_consistency():
    # A_ff x_f = b_f - A_fd x_d: check by full solve of a P1 Poisson problem
    m = build_uniform_square(4)
    geom = fem.MeshGeometry(m)
    e_map = fem.p1_dofmap(m)
    Kp1 = fem.assemble_p1_stiffness(geom).csr
    g = fem.interpolate_p1(m, lambda x, y: x)    # harmonic boundary data
    corr = fem.lift_dirichlet(Kp1, e_map, e_map, g)
    Kff = Kp1[e_map.free][:, e_map.free]
    xf = np.linalg.solve(Kff.toarray(), corr)
    full = g.copy()
    full[e_map.free] = xf
    # solution of Laplace with data x is x itself (interpolated exactly by P1)
    assert np.allclose(full, g, atol=1e-12)
