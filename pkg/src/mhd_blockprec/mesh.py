"""Uniform triangulations of the unit square with consistent entity numbering.

Every edge is stored oriented from its lower-index vertex to its
higher-index vertex.  Per-triangle signs reconcile this global
orientation with the counterclockwise traversal of each triangle's
boundary; they are what make the Raviart-Thomas flux dofs and the
vertex-edge incidence (discrete curl) matrix globally consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Mesh2d:
    """Triangulation of [0,1]^2 into 2*n^2 right triangles.

    Attributes
    ----------
    n : subdivisions per side (h = 1/n).
    vertices : (V, 2) float array of coordinates.
    edges : (E, 2) int array, each row (tail, head) with tail < head.
    triangles : (T, 3) int array of CCW vertex triples.
    vertex_on_boundary, edge_on_boundary : boolean masks.
    tri_edges : (T, 3) int array; local edge i is opposite local vertex i.
    tri_edge_signs : (T, 3) int8; +1 where the global edge orientation
        agrees with the CCW traversal of the triangle boundary.
    """

    n: int
    vertices: np.ndarray
    edges: np.ndarray
    triangles: np.ndarray
    vertex_on_boundary: np.ndarray
    edge_on_boundary: np.ndarray
    tri_edges: np.ndarray
    tri_edge_signs: np.ndarray
    edge_triangles: np.ndarray = field(repr=False)  # (E, 2), -1 = none

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]  # (T, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_vectors(self) -> np.ndarray:
        """Tail-to-head vectors, one per edge."""
        return self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]

    # --- entity queries -------------------------------------------------

    def triangle_edges(self, t: int):
        """Edges of triangle t (opposite-vertex order) with orientation signs."""
        if not 0 <= t < self.num_triangles:
            raise IndexError(f"triangle index {t} out of range")
        return self.tri_edges[t], self.tri_edge_signs[t]

    def edge_vertices(self, e: int):
        if not 0 <= e < self.num_edges:
            raise IndexError(f"edge index {e} out of range")
        return tuple(self.edges[e])

    def is_boundary_edge(self, e: int) -> bool:
        if not 0 <= e < self.num_edges:
            raise IndexError(f"edge index {e} out of range")
        return bool(self.edge_on_boundary[e])

    def is_boundary_vertex(self, v: int) -> bool:
        if not 0 <= v < self.num_vertices:
            raise IndexError(f"vertex index {v} out of range")
        return bool(self.vertex_on_boundary[v])

    def triangles_of_edge(self, e: int):
        if not 0 <= e < self.num_edges:
            raise IndexError(f"edge index {e} out of range")
        return tuple(int(t) for t in self.edge_triangles[e] if t >= 0)

    # --- debugging dump -------------------------------------------------

    def dump(self, path) -> None:
        """Plain-text listing: vertices, edges, triangles (one per line)."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# uniform square mesh n={self.n}\n")
            f.write(f"# vertices {self.num_vertices}\n")
            for i, (x, y) in enumerate(self.vertices):
                b = int(self.vertex_on_boundary[i])
                f.write(f"v {i} {x:.17g} {y:.17g} {b}\n")
            f.write(f"# edges {self.num_edges} (tail head boundary)\n")
            for i, (a, b_) in enumerate(self.edges):
                f.write(f"e {i} {a} {b_} {int(self.edge_on_boundary[i])}\n")
            f.write(f"# triangles {self.num_triangles} (ccw vertices)\n")
            for i, tri in enumerate(self.triangles):
                f.write(f"t {i} {tri[0]} {tri[1]} {tri[2]}\n")


def build_uniform_square(n: int) -> Mesh2d:
    """Triangulate [0,1]^2 with an n-by-n grid of cells, each split along
    its lower-left to upper-right diagonal.  Returns 2*n^2 CCW triangles."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)

    nv = n + 1
    xs = np.linspace(0.0, 1.0, nv)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])  # v = iy*(n+1) + ix

    def vid(ix, iy):
        return iy * nv + ix

    tris = []
    for iy in range(n):
        for ix in range(n):
            a = vid(ix, iy)
            b = vid(ix + 1, iy)
            c = vid(ix + 1, iy + 1)
            d = vid(ix, iy + 1)
            tris.append((a, b, c))  # lower-right triangle
            tris.append((a, c, d))  # upper-left triangle
    triangles = np.asarray(tris, dtype=np.int64)

    # collect unique edges, sorted low->high vertex
    pairs = np.concatenate(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=0
    )
    pairs_sorted = np.sort(pairs, axis=1)
    edges, inverse = np.unique(pairs_sorted, axis=0, return_inverse=True)
    ntri = triangles.shape[0]
    # tri_edges[t, i] is the edge opposite local vertex i
    tri_edges = np.column_stack(
        [inverse[:ntri], inverse[ntri : 2 * ntri], inverse[2 * ntri :]]
    ).astype(np.int64)
    # sign +1 iff CCW traversal (v_{i+1} -> v_{i+2}) runs low->high
    tri_edge_signs = np.where(pairs[:, 0] < pairs[:, 1], 1, -1).astype(np.int8)
    tri_edge_signs = np.column_stack(
        [tri_edge_signs[:ntri], tri_edge_signs[ntri : 2 * ntri], tri_edge_signs[2 * ntri :]]
    )

    nedge = edges.shape[0]
    edge_triangles = np.full((nedge, 2), -1, dtype=np.int64)
    counts = np.zeros(nedge, dtype=np.int64)
    for t in range(ntri):
        for e in tri_edges[t]:
            edge_triangles[e, counts[e]] = t
            counts[e] += 1
    edge_on_boundary = counts == 1

    x, y = vertices[:, 0], vertices[:, 1]
    vertex_on_boundary = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)

    mesh = Mesh2d(
        n=n,
        vertices=vertices,
        edges=edges,
        triangles=triangles,
        vertex_on_boundary=vertex_on_boundary,
        edge_on_boundary=edge_on_boundary,
        tri_edges=tri_edges,
        tri_edge_signs=tri_edge_signs,
        edge_triangles=edge_triangles,
    )
    for arr in (vertices, edges, triangles, vertex_on_boundary, edge_on_boundary,
                tri_edges, tri_edge_signs, edge_triangles):
        arr.setflags(write=False)

    assert mesh.num_vertices - mesh.num_edges + mesh.num_triangles == 1
    return mesh
