"""Quadrature and global assembly of the viscous, divergence, convection and
load forms on the Taylor-Hood pair.

Assembled operators are scipy.sparse CSR matrices (finalization sums duplicate
entries). Velocity blocks follow the component-blocked numbering of
:mod:`snsflow.mesh`. All element loops are vectorized with einsum; a single
assembly call is sequential, distinct calls may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

from .ioutil import atomic_write_text
from .mesh import DofMap, TriMesh, triangle_nodes
from .noise import NoiseField

SparseOperator = sp.csr_matrix

DEFAULT_QUADRATURE_DEGREE = 5
ELEVATED_QUADRATURE_DEGREE = 10


@dataclass(frozen=True)
class ProblemParams:
    """Kinematic viscosity and noise amplitude."""

    nu: float
    sigma: float = 0.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"viscosity must be positive, got nu={self.nu}")
        if self.sigma < 0:
            raise ValueError(f"noise amplitude must be >= 0, got sigma={self.sigma}")


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle {x>=0, y>=0, x+y<=1}.

    ``points`` are reference coordinates (xi, eta); ``weights`` sum to 1 and are
    scaled by the element area at use. ``degree`` is the declared polynomial
    exactness.
    """

    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        lam0 = 1.0 - self.points.sum(axis=1)
        return np.column_stack([lam0, self.points])


def triangle_rule_degree5() -> QuadratureRule:
    """The symmetric 7-point rule, exact for total degree 5."""
    a1, w1 = 0.101286507323456, 0.125939180544827
    a2, w2 = 0.470142064105115, 0.132394152788506
    pts = [(1.0 / 3.0, 1.0 / 3.0)]
    ws = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        pts += [(a, a), (1 - 2 * a, a), (a, 1 - 2 * a)]
        ws += [w, w, w]
    return QuadratureRule(np.array(pts), np.array(ws), degree=5)


def triangle_rule_collapsed(degree: int) -> QuadratureRule:
    """Gauss-Jacobi x Gauss-Legendre product rule via the collapsed-square map.

    Used as the elevated rule for closed-form integrands; any requested
    exactness degree is available.
    """
    m = (degree + 2) // 2
    xj, wj = roots_jacobi(m, 1.0, 0.0)      # weight (1-x) on [-1,1]
    xl, wl = roots_legendre(m)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj                          # maps the (1-x) Jacobi weight to [0,1]
    xl = 0.5 * (xl + 1.0)
    wl = 0.5 * wl
    pts = np.empty((m * m, 2))
    ws = np.empty(m * m)
    k = 0
    for i in range(m):
        for j in range(m):
            pts[k] = (xj[i], xl[j] * (1.0 - xj[i]))
            ws[k] = wj[i] * wl[j]
            k += 1
    return QuadratureRule(pts, ws / ws.sum(), degree=degree)


def p2_shape(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P2 basis values (nq, 6) and reference gradients (nq, 6, 2).

    Local nodes: 0..2 vertices, 3..5 midpoints of the edges opposite them.
    """
    nq = len(points)
    phi = np.empty((nq, 6))
    grad = np.empty((nq, 6, 2))
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    pairs = ((1, 2), (2, 0), (0, 1))
    for q, (xi, eta) in enumerate(points):
        lam = (1.0 - xi - eta, xi, eta)
        for i in range(3):
            phi[q, i] = lam[i] * (2.0 * lam[i] - 1.0)
            grad[q, i] = (4.0 * lam[i] - 1.0) * dlam[i]
        for k, (i, j) in enumerate(pairs):
            phi[q, 3 + k] = 4.0 * lam[i] * lam[j]
            grad[q, 3 + k] = 4.0 * (lam[i] * dlam[j] + lam[j] * dlam[i])
    return phi, grad


def p1_shape(points: np.ndarray) -> np.ndarray:
    lam0 = 1.0 - points.sum(axis=1)
    return np.column_stack([lam0, points])


class ElementGeometry:
    """Per-element affine maps and basis tables for one quadrature rule."""

    def __init__(self, mesh: TriMesh, rule: QuadratureRule | None = None):
        self.mesh = mesh
        self.rule = rule or triangle_rule_degree5()
        tri = mesh.triangles
        x0 = mesh.vertices[tri[:, 0]]
        e1 = mesh.vertices[tri[:, 1]] - x0
        e2 = mesh.vertices[tri[:, 2]] - x0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.area = 0.5 * det
        inv_jt = np.empty((len(tri), 2, 2))
        inv_jt[:, 0, 0] = e2[:, 1] / det
        inv_jt[:, 0, 1] = -e1[:, 1] / det
        inv_jt[:, 1, 0] = -e2[:, 0] / det
        inv_jt[:, 1, 1] = e1[:, 0] / det
        self.phi2, grad_ref = p2_shape(self.rule.points)
        self.phi1 = p1_shape(self.rule.points)
        # physical gradients: grad[t,q,i,d]
        self.grad2 = np.einsum("tde,qie->tqid", inv_jt, grad_ref)
        # quadrature point coordinates: x0 + xi*e1 + eta*e2
        self.qpoints = (x0[:, None, :]
                        + np.einsum("td,q->tqd", e1, self.rule.points[:, 0])
                        + np.einsum("td,q->tqd", e2, self.rule.points[:, 1]))
        self.wq = self.rule.weights

    def velocity_at_quadrature(self, dofs: DofMap, u: np.ndarray) -> np.ndarray:
        """(T, nq, 2) values of a velocity coefficient vector."""
        tn = triangle_nodes(dofs)
        nn = dofs.n_scalar_nodes
        ux = u[tn] @ self.phi2.T
        uy = u[nn + tn] @ self.phi2.T
        return np.stack([ux, uy], axis=2)

    def velocity_gradient_at_quadrature(self, dofs: DofMap, u: np.ndarray) -> np.ndarray:
        """(T, nq, 2, 2) entries du_i/dx_j."""
        tn = triangle_nodes(dofs)
        nn = dofs.n_scalar_nodes
        gx = np.einsum("tb,tqbj->tqj", u[tn], self.grad2)
        gy = np.einsum("tb,tqbj->tqj", u[nn + tn], self.grad2)
        return np.stack([gx, gy], axis=2)


def _scatter(values: np.ndarray, rows: np.ndarray, cols: np.ndarray,
             shape: tuple[int, int]) -> SparseOperator:
    """Accumulate (T, ni, nj) element blocks into a finalized CSR matrix."""
    ni, nj = values.shape[1], values.shape[2]
    r = np.repeat(rows, nj, axis=1).ravel()
    c = np.tile(cols, (1, ni)).ravel()
    return sp.coo_matrix((values.ravel(), (r, c)), shape=shape).tocsr()


def _block_diag2(block: SparseOperator) -> SparseOperator:
    return sp.bmat([[block, None], [None, block]], format="csr")


def scalar_stiffness(geom: ElementGeometry, dofs: DofMap) -> SparseOperator:
    tn = triangle_nodes(dofs)
    nn = dofs.n_scalar_nodes
    ke = np.einsum("q,t,tqid,tqjd->tij", geom.wq, geom.area, geom.grad2, geom.grad2)
    return _scatter(ke, tn, tn, (nn, nn))


def scalar_mass_p2(geom: ElementGeometry, dofs: DofMap) -> SparseOperator:
    tn = triangle_nodes(dofs)
    nn = dofs.n_scalar_nodes
    me = np.einsum("q,t,qi,qj->tij", geom.wq, geom.area, geom.phi2, geom.phi2)
    return _scatter(me, tn, tn, (nn, nn))


def assemble_viscous(mesh: TriMesh, dofs: DofMap, nu: float,
                     geom: ElementGeometry | None = None) -> SparseOperator:
    """Vector-valued viscous operator A with v^T A u = nu * int grad(u):grad(v)."""
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got nu={nu}")
    geom = geom or ElementGeometry(mesh)
    return (nu * _block_diag2(scalar_stiffness(geom, dofs))).tocsr()


def assemble_divergence(mesh: TriMesh, dofs: DofMap,
                        geom: ElementGeometry | None = None) -> SparseOperator:
    """Divergence operator B with q^T B u = -int q div(u); rows are pressure dofs."""
    geom = geom or ElementGeometry(mesh)
    tn = triangle_nodes(dofs)
    nn = dofs.n_scalar_nodes
    blocks = []
    for d in range(2):
        be = -np.einsum("q,t,qa,tqj->taj", geom.wq, geom.area, geom.phi1,
                        geom.grad2[:, :, :, d])
        blocks.append(_scatter(be, mesh.triangles, tn, (dofs.n_pressure_dofs, nn)))
    return sp.hstack(blocks, format="csr")


def assemble_convection_linearized(
    mesh: TriMesh, dofs: DofMap, w: np.ndarray,
    geom: ElementGeometry | None = None,
) -> tuple[SparseOperator, SparseOperator]:
    """Linearizations of the convective trilinear form around the velocity w.

    Returns (N1, N2) with v^T N1 u = c(w, u, v) (w transports u) and
    v^T N2 u = c(u, w, v) (u transports w), where
    c(a, b, v) = int (a . grad) b . v.
    """
    geom = geom or ElementGeometry(mesh)
    tn = triangle_nodes(dofs)
    nn = dofs.n_scalar_nodes
    wq_vals = geom.velocity_at_quadrature(dofs, w)       # (T,nq,2)
    wgrad = geom.velocity_gradient_at_quadrature(dofs, w)  # (T,nq,i,j)

    adv = np.einsum("tqd,tqbd->tqb", wq_vals, geom.grad2)
    c1 = np.einsum("q,t,tqb,qa->tab", geom.wq, geom.area, adv, geom.phi2)
    n1 = _block_diag2(_scatter(c1, tn, tn, (nn, nn)))

    blocks = [[None, None], [None, None]]
    for i in range(2):
        for j in range(2):
            ne = np.einsum("q,t,tq,qb,qa->tab", geom.wq, geom.area,
                           wgrad[:, :, i, j], geom.phi2, geom.phi2)
            blocks[i][j] = _scatter(ne, tn, tn, (nn, nn))
    n2 = sp.bmat(blocks, format="csr")
    return n1, n2


def assemble_load(mesh: TriMesh, dofs: DofMap,
                  f: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
                  degree: int = ELEVATED_QUADRATURE_DEGREE) -> np.ndarray:
    """Load vector L with L . v = int f . v, using an elevated rule by default.

    ``f`` maps coordinate arrays (x, y) to the two force components.
    """
    geom = ElementGeometry(mesh, triangle_rule_collapsed(degree))
    f1, f2 = f(geom.qpoints[:, :, 0], geom.qpoints[:, :, 1])
    f1 = np.broadcast_to(np.asarray(f1, dtype=float), geom.qpoints.shape[:2])
    f2 = np.broadcast_to(np.asarray(f2, dtype=float), geom.qpoints.shape[:2])
    tn = triangle_nodes(dofs)
    nn = dofs.n_scalar_nodes
    load = np.zeros(dofs.n_velocity_dofs)
    for d, fd in enumerate((f1, f2)):
        le = np.einsum("q,t,tq,qi->ti", geom.wq, geom.area, fd, geom.phi2)
        np.add.at(load, d * nn + tn.ravel(), le.ravel())
    return load


def assemble_noise_load(mesh: TriMesh, dofs: DofMap, noise: NoiseField,
                        geom: ElementGeometry | None = None) -> np.ndarray:
    """Load vector of the piecewise-constant noise realization.

    Requires the noise grid to be nested in the FE grid (cells per axis divide
    the mesh resolution), so every triangle lies in exactly one noise cell and
    the cell value is constant over it; the cell is found by centroid lookup.
    """
    n_noise = noise.grid.n_noise
    if n_noise < 1:
        raise ValueError("noise grid must have at least one cell")
    if mesh.n % n_noise != 0:
        raise ValueError(
            f"noise grid ({n_noise} cells per axis) is not nested in the "
            f"FE grid (n={mesh.n}); resolution must divide the mesh resolution")
    geom = geom or ElementGeometry(mesh)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    ix = np.minimum((centroids[:, 0] * n_noise).astype(int), n_noise - 1)
    iy = np.minimum((centroids[:, 1] * n_noise).astype(int), n_noise - 1)
    cell = iy * n_noise + ix
    scale = noise.sigma / np.sqrt(noise.grid.cell_volume)
    fvals = scale * noise.zeta[cell]                     # (T, 2)

    phi_int = np.einsum("q,t,qi->ti", geom.wq, geom.area, geom.phi2)  # int_T phi_i
    tn = triangle_nodes(dofs)
    nn = dofs.n_scalar_nodes
    load = np.zeros(dofs.n_velocity_dofs)
    for d in range(2):
        np.add.at(load, d * nn + tn.ravel(), (fvals[:, d:d + 1] * phi_int).ravel())
    return load


def operator_to_coo_text(op: SparseOperator, path: str) -> None:
    """Debug dump in (row, col, value) coordinate text format."""
    coo = op.tocoo()
    lines = ["row,col,value"]
    lines += [f"{r},{c},{v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)]
    atomic_write_text(path, "\n".join(lines) + "\n")
