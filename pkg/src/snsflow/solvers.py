"""Sparse saddle-point solves and Newton iterations for the steady problems.

Four solution paths share one bordered linear solver:

  * deterministic: Newton on a(u,v) + c(u,u,v) + b(v,p) = (F,v), Stokes start
  * stochastic correction: Newton on the correction equation with coupling
    terms around a frozen deterministic field, zero start
  * modified correction: the same equation with the quadratic self-term
    dropped, a single linear solve
  * monolithic: Newton on the full equation per noise sample

The pressure zero-mean gauge is a scalar Lagrange multiplier bordering the
continuity block, and Dirichlet conditions are imposed by symmetric
elimination, so the factorized matrix stays symmetric in structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .assembly import ElementGeometry, ProblemParams, SparseOperator
from .mesh import DofMap, TriMesh

RESIDUAL_CHECK_FACTOR = 1e-10


class SingularSystemError(RuntimeError):
    """Factorization failed or produced an unreliable solution."""


@dataclass
class FEField:
    """Velocity/pressure coefficient pair on one dof map."""

    velocity: np.ndarray
    pressure: np.ndarray
    dofs: DofMap

    def copy(self) -> "FEField":
        return FEField(self.velocity.copy(), self.pressure.copy(), self.dofs)

    def __add__(self, other: "FEField") -> "FEField":
        if other.dofs is not self.dofs:
            raise ValueError("fields live on different dof maps")
        return FEField(self.velocity + other.velocity,
                       self.pressure + other.pressure, self.dofs)

    @classmethod
    def zeros(cls, dofs: DofMap) -> "FEField":
        return cls(np.zeros(dofs.n_velocity_dofs), np.zeros(dofs.n_pressure_dofs), dofs)


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_iter: int = 25
    damping: float = 1.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping factor must lie in (0, 1]")


@dataclass
class SolveReport:
    """Outcome of one solve; iterations counts linear solves performed."""

    converged: bool
    iterations: int
    final_residual: float
    residual_history: list[float] = field(default_factory=list)
    method: str = ""
    sample_id: int = -1
    failure: str = ""

    def to_csv_row(self) -> str:
        return (f"{self.method},{self.sample_id},{int(self.converged)},"
                f"{self.iterations},{self.final_residual:.6e}")

    @staticmethod
    def csv_header() -> str:
        return "method,sample_id,converged,iterations,final_residual"


@dataclass
class AssembledOperators:
    """Constant blocks shared by every solve on one (mesh, dofs, params)."""

    mesh: TriMesh
    dofs: DofMap
    params: ProblemParams
    geom: ElementGeometry
    viscous: SparseOperator
    divergence: SparseOperator
    gauge: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.dofs.dirichlet_mask


def assemble_operators(mesh: TriMesh, dofs: DofMap, params: ProblemParams) -> AssembledOperators:
    geom = ElementGeometry(mesh)
    return AssembledOperators(
        mesh=mesh,
        dofs=dofs,
        params=params,
        geom=geom,
        viscous=assembly.assemble_viscous(mesh, dofs, params.nu, geom=geom),
        divergence=assembly.assemble_divergence(mesh, dofs, geom=geom),
        gauge=dofs.pressure_gauge,
    )


def _bordered_matrix(a_block: SparseOperator, b_block: SparseOperator,
                     gauge: np.ndarray) -> SparseOperator:
    gcol = sp.csr_matrix(gauge.reshape(-1, 1))
    return sp.bmat([[a_block, b_block.T, None],
                    [b_block, None, gcol],
                    [None, gcol.T, None]], format="csr")


def _apply_dirichlet(matrix: SparseOperator, n_velocity: int,
                     mask: np.ndarray) -> SparseOperator:
    free = np.ones(matrix.shape[0])
    free[:n_velocity][mask] = 0.0
    proj = sp.diags(free)
    return (proj @ matrix @ proj + sp.diags(1.0 - free)).tocsc()


def linear_saddle_solve(a_block: SparseOperator, b_block: SparseOperator,
                        rhs: np.ndarray, gauge: np.ndarray,
                        mask: np.ndarray | None = None) -> np.ndarray:
    """Direct factorization of the gauged saddle system.

    The unknown layout is [velocity, pressure, gauge multiplier]; ``rhs`` may
    cover the velocity block only (padded with zeros) or the full system.
    Dimension mismatches raise ValueError; a singular or unreliable
    factorization raises SingularSystemError.
    """
    n_u, n_p = a_block.shape[0], b_block.shape[0]
    if a_block.shape[0] != a_block.shape[1]:
        raise ValueError(f"velocity block must be square, got {a_block.shape}")
    if b_block.shape[1] != n_u:
        raise ValueError(f"divergence block shape {b_block.shape} does not match "
                         f"{n_u} velocity dofs")
    if gauge.shape != (n_p,):
        raise ValueError(f"gauge vector length {gauge.shape} does not match "
                         f"{n_p} pressure dofs")
    n_total = n_u + n_p + 1
    if len(rhs) == n_u:
        rhs = np.concatenate([rhs, np.zeros(n_p + 1)])
    elif len(rhs) != n_total:
        raise ValueError(f"rhs length {len(rhs)} matches neither the velocity "
                         f"block ({n_u}) nor the full system ({n_total})")

    matrix = _bordered_matrix(a_block, b_block, gauge)
    rhs = rhs.copy()
    if mask is not None:
        matrix = _apply_dirichlet(matrix, n_u, mask)
        rhs[:n_u][mask] = 0.0
    else:
        matrix = matrix.tocsc()

    try:
        solution = spla.splu(matrix).solve(rhs)
    except RuntimeError as exc:  # SuperLU signals exact singularity this way
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(solution)):
        raise SingularSystemError("factorization produced non-finite values")
    residual = np.linalg.norm(matrix @ solution - rhs)
    norm_k = spla.norm(matrix)
    bound = RESIDUAL_CHECK_FACTOR * (norm_k * np.linalg.norm(solution)
                                     + np.linalg.norm(rhs))
    if residual > bound:
        raise SingularSystemError(
            f"solve residual {residual:.3e} exceeds {bound:.3e}; "
            "system is numerically singular")
    return solution


def solve_stokes(ops: AssembledOperators, load: np.ndarray) -> FEField:
    """Linear solve without convection; the deterministic initial guess."""
    x = linear_saddle_solve(ops.viscous, ops.divergence, load, ops.gauge,
                            mask=ops.mask)
    n_u = ops.dofs.n_velocity_dofs
    return FEField(x[:n_u], x[n_u:n_u + ops.dofs.n_pressure_dofs], ops.dofs)


def _newton(ops: AssembledOperators, load: np.ndarray,
            frozen_convection: SparseOperator | None,
            u0: np.ndarray, p0: np.ndarray, cfg: NewtonConfig,
            presolves: int = 0) -> tuple[FEField, SolveReport]:
    """Newton iteration on A u + c(u,u,.) [+ frozen terms] + B^T p = load.

    ``frozen_convection`` adds the linear coupling terms of the correction
    equation; the Jacobian and the convection residual are reassembled from
    the current iterate every step (full Newton).
    """
    mesh, dofs, gauge = ops.mesh, ops.dofs, ops.gauge
    n_u, n_p = dofs.n_velocity_dofs, dofs.n_pressure_dofs
    mask = ops.mask
    u, p, lam = u0.copy(), p0.copy(), 0.0
    u[mask] = 0.0
    history: list[float] = []
    solves = presolves
    for _ in range(cfg.max_iter + 1):
        n1, n2 = assembly.assemble_convection_linearized(mesh, dofs, u, geom=ops.geom)
        linear_part = ops.viscous + n1 if frozen_convection is None \
            else ops.viscous + n1 + frozen_convection
        r_u = linear_part @ u + ops.divergence.T @ p - load
        r_u[mask] = 0.0
        r_p = ops.divergence @ u + gauge * lam
        r_g = gauge @ p
        residual = np.concatenate([r_u, r_p, [r_g]])
        r_norm = float(np.linalg.norm(residual))
        history.append(r_norm)
        if not np.isfinite(r_norm):
            return (FEField(u, p, dofs),
                    SolveReport(False, solves, r_norm, history,
                                failure="residual diverged"))
        if r_norm <= max(cfg.abs_tol, cfg.rel_tol * history[0]):
            return FEField(u, p, dofs), SolveReport(True, solves, r_norm, history)
        if solves - presolves >= cfg.max_iter:
            break
        jacobian = (linear_part + n2).tocsr()
        try:
            x = linear_saddle_solve(jacobian, ops.divergence, -residual, gauge,
                                    mask=mask)
        except SingularSystemError as exc:
            return (FEField(u, p, dofs),
                    SolveReport(False, solves, r_norm, history, failure=str(exc)))
        u = u + cfg.damping * x[:n_u]
        p = p + cfg.damping * x[n_u:n_u + n_p]
        lam = lam + cfg.damping * x[-1]
        solves += 1
    return (FEField(u, p, dofs),
            SolveReport(False, solves, history[-1], history,
                        failure="max iterations reached"))


def solve_deterministic_ns(ops: AssembledOperators, f_load: np.ndarray,
                           cfg: NewtonConfig | None = None) -> tuple[FEField, SolveReport]:
    """Steady Navier-Stokes solve with body force load; Stokes initial guess."""
    cfg = cfg or NewtonConfig()
    init = solve_stokes(ops, f_load)
    fld, report = _newton(ops, f_load, None, init.velocity, init.pressure, cfg,
                          presolves=1)
    report.method = "deterministic"
    return fld, report


def solve_stochastic_full(ops: AssembledOperators, xi: FEField,
                          noise_load: np.ndarray,
                          cfg: NewtonConfig | None = None) -> tuple[FEField, SolveReport]:
    """Nonlinear stochastic correction around the deterministic field xi."""
    cfg = cfg or NewtonConfig()
    n1, n2 = assembly.assemble_convection_linearized(ops.mesh, ops.dofs,
                                                     xi.velocity, geom=ops.geom)
    frozen = (n1 + n2).tocsr()
    fld, report = _newton(ops, noise_load, frozen,
                          np.zeros(ops.dofs.n_velocity_dofs),
                          np.zeros(ops.dofs.n_pressure_dofs), cfg)
    report.method = "split"
    return fld, report


def solve_stochastic_modified(ops: AssembledOperators, xi: FEField,
                              noise_load: np.ndarray) -> tuple[FEField, SolveReport]:
    """Linearized stochastic correction: one solve, no Newton loop."""
    n1, n2 = assembly.assemble_convection_linearized(ops.mesh, ops.dofs,
                                                     xi.velocity, geom=ops.geom)
    a_eff = (ops.viscous + n1 + n2).tocsr()
    n_u, n_p = ops.dofs.n_velocity_dofs, ops.dofs.n_pressure_dofs
    try:
        x = linear_saddle_solve(a_eff, ops.divergence, noise_load, ops.gauge,
                                mask=ops.mask)
    except SingularSystemError as exc:
        report = SolveReport(False, 1, float("inf"), [], method="modified",
                             failure=str(exc))
        return FEField.zeros(ops.dofs), report
    fld = FEField(x[:n_u], x[n_u:n_u + n_p], ops.dofs)
    residual = np.concatenate([
        np.where(ops.mask, 0.0, a_eff @ fld.velocity
                 + ops.divergence.T @ fld.pressure - noise_load),
        ops.divergence @ fld.velocity + ops.gauge * x[-1],
        [ops.gauge @ fld.pressure],
    ])
    r_norm = float(np.linalg.norm(residual))
    return fld, SolveReport(True, 1, r_norm, [r_norm], method="modified")


def solve_monolithic(ops: AssembledOperators, f_load: np.ndarray,
                     noise_load: np.ndarray, cfg: NewtonConfig | None = None,
                     initial_guess: FEField | None = None) -> tuple[FEField, SolveReport]:
    """Full per-sample solve; defaults to the deterministic solution as start."""
    cfg = cfg or NewtonConfig()
    if initial_guess is None:
        initial_guess, _ = solve_deterministic_ns(ops, f_load, cfg)
    fld, report = _newton(ops, f_load + noise_load, None,
                          initial_guess.velocity, initial_guess.pressure, cfg)
    report.method = "monolithic"
    return fld, report
