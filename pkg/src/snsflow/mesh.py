"""Structured triangulations of the unit square and Taylor-Hood dof maps.

The mesh family is the uniform n x n grid of squares, each split along the
bottom-left -> top-right diagonal. Velocity uses quadratic (P2) nodes at the
vertices and edge midpoints, pressure uses linear (P1) nodes at the vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ioutil import atomic_write_text

BOUNDARY_TOL = 1e-14


@dataclass(frozen=True)
class TriMesh:
    """Conforming triangulation of [0,1]^2 with edge bookkeeping.

    Immutable after construction; safe to share across workers.
    """

    n: int                           # grid resolution (n x n squares)
    vertices: np.ndarray             # (V, 2) coordinates
    triangles: np.ndarray            # (T, 3) vertex indices, counter-clockwise
    edges: np.ndarray                # (E, 2) vertex index pairs, sorted
    edge_midpoints: np.ndarray       # (E, 2) stored explicitly for bit-stable P2 nodes
    triangle_edges: np.ndarray       # (T, 3) edge index opposite each local vertex
    boundary_vertex_flags: np.ndarray
    boundary_edge_flags: np.ndarray
    h: float                         # longest edge length

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices
        a, b, c = (p[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


@dataclass(frozen=True)
class DofMap:
    """Degree-of-freedom numbering for the P2/P1 velocity-pressure pair.

    Velocity dofs are component-blocked: dof(node m, component c) = c*(V+E) + m,
    with P2 node m a vertex (m < V) or an edge midpoint (m = V + edge index).
    Pressure dofs are the vertices. ``pressure_gauge`` holds the weights of the
    zero-mean constraint: gauge . p = integral of p over the domain.
    """

    mesh: TriMesh
    n_velocity_dofs: int
    n_pressure_dofs: int
    local_to_global: np.ndarray      # (T, 6, 2) velocity dof per (tri, local node, comp)
    dirichlet_mask: np.ndarray       # (n_velocity_dofs,) bool, True on the boundary
    pressure_gauge: np.ndarray       # (n_pressure_dofs,) P1 basis integrals
    node_coords: np.ndarray = field(repr=False)  # (V+E, 2) P2 node coordinates

    @property
    def n_scalar_nodes(self) -> int:
        return self.n_velocity_dofs // 2

    def velocity_dof(self, node: int, component: int) -> int:
        return component * self.n_scalar_nodes + node


def build_structured_mesh(n: int) -> TriMesh:
    """Build the n x n diagonal-split triangulation of the unit square."""
    if n < 1:
        raise ValueError(f"mesh resolution must be >= 1, got n={n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    vertices = np.column_stack([xs[ii.T.ravel()], xs[jj.T.ravel()]])

    def vid(i, j):
        return j * (n + 1) + i

    triangles = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    triangles = np.asarray(triangles, dtype=np.int64)

    edge_index: dict[tuple[int, int], int] = {}
    edges = []
    triangle_edges = np.empty((len(triangles), 3), dtype=np.int64)
    for t, (a, b, c) in enumerate(triangles):
        # edge k is opposite local vertex k
        for k, (p, q) in enumerate(((b, c), (c, a), (a, b))):
            key = (min(p, q), max(p, q))
            ix = edge_index.get(key)
            if ix is None:
                ix = len(edges)
                edge_index[key] = ix
                edges.append(key)
            triangle_edges[t, k] = ix
    edges = np.asarray(edges, dtype=np.int64)
    edge_midpoints = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])

    boundary_vertex_flags = _on_boundary(vertices)
    boundary_edge_flags = _on_boundary(edge_midpoints)

    lengths = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
    return TriMesh(
        n=n,
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_midpoints=edge_midpoints,
        triangle_edges=triangle_edges,
        boundary_vertex_flags=boundary_vertex_flags,
        boundary_edge_flags=boundary_edge_flags,
        h=float(lengths.max()),
    )


def _on_boundary(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return ((np.abs(x) <= BOUNDARY_TOL) | (np.abs(x - 1.0) <= BOUNDARY_TOL)
            | (np.abs(y) <= BOUNDARY_TOL) | (np.abs(y - 1.0) <= BOUNDARY_TOL))


def build_dof_map(mesh: TriMesh) -> DofMap:
    """Number the Taylor-Hood dofs and mark the homogeneous Dirichlet set."""
    V, E, T = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
    nn = V + E
    node_coords = np.vstack([mesh.vertices, mesh.edge_midpoints])

    tri_nodes = np.hstack([mesh.triangles, V + mesh.triangle_edges])  # (T, 6)
    local_to_global = np.empty((T, 6, 2), dtype=np.int64)
    local_to_global[:, :, 0] = tri_nodes
    local_to_global[:, :, 1] = nn + tri_nodes

    node_on_boundary = np.concatenate([mesh.boundary_vertex_flags, mesh.boundary_edge_flags])
    dirichlet_mask = np.concatenate([node_on_boundary, node_on_boundary])

    gauge = np.zeros(V)
    np.add.at(gauge, mesh.triangles.ravel(), np.repeat(mesh.signed_areas() / 3.0, 3))

    return DofMap(
        mesh=mesh,
        n_velocity_dofs=2 * nn,
        n_pressure_dofs=V,
        local_to_global=local_to_global,
        dirichlet_mask=dirichlet_mask,
        pressure_gauge=gauge,
        node_coords=node_coords,
    )


def triangle_nodes(dofs: DofMap) -> np.ndarray:
    """(T, 6) global P2 scalar-node indices per triangle."""
    return dofs.local_to_global[:, :, 0]


def mesh_to_csv(mesh: TriMesh, path: str) -> None:
    """Dump the mesh in a sectioned CSV for debugging and plotting."""
    lines = ["# vertices", "index,x,y"]
    lines += [f"{i},{p[0]:.17g},{p[1]:.17g}" for i, p in enumerate(mesh.vertices)]
    lines += ["# triangles", "index,v0,v1,v2"]
    lines += [f"{i},{t[0]},{t[1]},{t[2]}" for i, t in enumerate(mesh.triangles)]
    lines += ["# edges", "index,v0,v1,mx,my,boundary"]
    lines += [
        f"{i},{e[0]},{e[1]},{m[0]:.17g},{m[1]:.17g},{int(b)}"
        for i, (e, m, b) in enumerate(zip(mesh.edges, mesh.edge_midpoints, mesh.boundary_edge_flags))
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")
