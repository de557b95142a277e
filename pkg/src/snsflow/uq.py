"""Monte Carlo orchestration, error statistics, and smallness diagnostics.

Samples are driven by per-index substreams of a counter-based generator, may
execute concurrently, and are always reduced in sample order with compensated
summation, so accumulated means are bit-identical across worker counts.

The amplitude convention: ``sigma`` is the per-cell standard deviation of the
piecewise-constant noise forcing, i.e. realizations are sampled with the
white-noise amplitude sigma * sqrt(cell volume). On the default 12x12 grid
this reproduces the reference perturbation ratios kappa ~= 0.215 * sigma.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import exp

import numpy as np
from scipy.special import gammaln

from . import assembly, manufactured, noise as noise_mod, solvers
from .ioutil import atomic_write_text
from .mesh import DofMap, build_dof_map, build_structured_mesh
from .solvers import FEField, NewtonConfig, SolveReport

METHODS = ("monolithic", "split", "modified")
SPLITTING_SMALLNESS_THRESHOLD = 7.0 / 8.0
MODIFIED_SMALLNESS_THRESHOLD = 5.0 / 8.0


@dataclass(frozen=True)
class McConfig:
    """One Monte Carlo experiment: physics, discretization, sampling, methods."""

    M: int = 100
    base_seed: int = 20240901
    sigma: float = 1.5
    nu: float = 0.02
    mesh_n: int = 12
    noise_n: int = 12
    methods: tuple[str, ...] = METHODS
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    mono_init: str = "deterministic"   # or "zero" for the stress regime

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"sample count must be >= 1, got M={self.M}")
        if not self.methods:
            raise ValueError("at least one method must be requested")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.mesh_n < 1 or self.noise_n < 1:
            raise ValueError("mesh and noise resolutions must be >= 1")
        if self.mesh_n % self.noise_n != 0:
            raise ValueError(
                f"noise grid must be nested in the FE grid: {self.noise_n} "
                f"does not divide {self.mesh_n}")
        if self.sigma < 0 or not self.nu > 0:
            raise ValueError("need sigma >= 0 and nu > 0")
        if self.mono_init not in ("deterministic", "zero"):
            raise ValueError(f"unknown monolithic initial guess {self.mono_init!r}")


@dataclass
class McStats:
    """Accumulated means and the error statistics of one experiment."""

    config: McConfig
    mean_fields: dict[str, FEField]
    eps_sh: float | None
    eps_mh: float | None
    eps_sh_rel: float | None
    eps_mh_rel: float | None
    kappa_samples: np.ndarray
    kappa_mean: float
    converged_counts: dict[str, int]
    failed_counts: dict[str, int]
    reports: list[SolveReport]
    deterministic_field: FEField
    forcing_norm: float


@dataclass(frozen=True)
class Diagnostics:
    """Computable proxy for the small-data conditions, plus the expected kappa.

    ``indicator`` is ||F||_L2 / nu^2 (an L2 stand-in for the dual norm the
    theory uses, so the flags are indicative rather than certifying).
    """

    indicator: float
    splitting_threshold: float
    modified_threshold: float
    splitting_ok: bool
    modified_ok: bool
    expected_kappa: float


class _KahanSum:
    """Compensated vector accumulator; deterministic for a fixed add order."""

    def __init__(self, size: int):
        self._sum = np.zeros(size)
        self._comp = np.zeros(size)

    def add(self, values: np.ndarray) -> None:
        y = values - self._comp
        t = self._sum + y
        self._comp = (t - self._sum) - y
        self._sum = t

    @property
    def total(self) -> np.ndarray:
        return self._sum


class _MeanAccumulator:
    def __init__(self, dofs: DofMap):
        self.velocity = _KahanSum(dofs.n_velocity_dofs)
        self.pressure = _KahanSum(dofs.n_pressure_dofs)
        self.count = 0
        self.dofs = dofs

    def add(self, fld: FEField) -> None:
        self.velocity.add(fld.velocity)
        self.pressure.add(fld.pressure)
        self.count += 1

    def mean(self) -> FEField | None:
        if self.count == 0:
            return None
        return FEField(self.velocity.total / self.count,
                       self.pressure.total / self.count, self.dofs)


def _noise_amplitude(cfg: McConfig) -> float:
    return cfg.sigma * np.sqrt(noise_mod.NoiseGrid(cfg.noise_n).cell_volume)


def run_experiment(cfg: McConfig, jobs: int = 1) -> McStats:
    """Run all requested methods over M shared noise draws and reduce."""
    mesh = build_structured_mesh(cfg.mesh_n)
    dofs = build_dof_map(mesh)
    params = assembly.ProblemParams(nu=cfg.nu, sigma=cfg.sigma)
    ops = solvers.assemble_operators(mesh, dofs, params)
    f_load = assembly.assemble_load(mesh, dofs,
                                    lambda x, y: manufactured.exact_forcing(x, y, cfg.nu))
    xi, xi_report = solvers.solve_deterministic_ns(ops, f_load, cfg.newton)
    zero_field = FEField.zeros(dofs)

    grid = noise_mod.NoiseGrid(cfg.noise_n)
    amplitude = _noise_amplitude(cfg)
    forcing_norm = manufactured.forcing_l2_norm(cfg.nu)

    def run_sample(k: int) -> dict:
        draw = noise_mod.sample_noise(grid, amplitude,
                                      noise_mod.substream_key(cfg.base_seed, k))
        noise_load = assembly.assemble_noise_load(mesh, dofs, draw, geom=ops.geom)
        out: dict = {"kappa": noise_mod.noise_l2_norm(draw) / forcing_norm}
        for method in cfg.methods:
            if method == "monolithic":
                init = xi if cfg.mono_init == "deterministic" else zero_field
                fld, rep = solvers.solve_monolithic(ops, f_load, noise_load,
                                                    cfg.newton, initial_guess=init)
            elif method == "split":
                eta, rep = solvers.solve_stochastic_full(ops, xi, noise_load, cfg.newton)
                fld = xi + eta
            else:
                eta, rep = solvers.solve_stochastic_modified(ops, xi, noise_load)
                fld = xi + eta
            rep.sample_id = k
            out[method] = (fld, rep)
        return out

    results: list[dict | None] = [None] * cfg.M
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for k, res in zip(range(cfg.M), pool.map(run_sample, range(cfg.M))):
                results[k] = res
    else:
        for k in range(cfg.M):
            results[k] = run_sample(k)

    # fixed-order reduction: per-method means plus pairwise-converged means
    per_method = {m: _MeanAccumulator(dofs) for m in cfg.methods}
    failed = {m: 0 for m in cfg.methods}
    pairs = [m for m in ("split", "modified")
             if m in cfg.methods and "monolithic" in cfg.methods]
    pair_acc = {m: (_MeanAccumulator(dofs), _MeanAccumulator(dofs)) for m in pairs}
    kappas = np.empty(cfg.M)
    reports: list[SolveReport] = [xi_report]
    for k in range(cfg.M):
        res = results[k]
        kappas[k] = res["kappa"]
        for method in cfg.methods:
            fld, rep = res[method]
            reports.append(rep)
            if rep.converged:
                per_method[method].add(fld)
            else:
                failed[method] += 1
        for m in pairs:
            fld_m, rep_m = res[m]
            fld_r, rep_r = res["monolithic"]
            if rep_m.converged and rep_r.converged:
                acc_m, acc_r = pair_acc[m]
                acc_m.add(fld_m)
                acc_r.add(fld_r)

    mean_fields = {m: acc.mean() for m, acc in per_method.items() if acc.mean() is not None}
    eps = {"split": (None, None), "modified": (None, None)}
    for m in pairs:
        acc_m, acc_r = pair_acc[m]
        mean_m, mean_r = acc_m.mean(), acc_r.mean()
        if mean_m is not None and mean_r is not None:
            eps[m] = error_statistics(mean_m, mean_r)

    return McStats(
        config=cfg,
        mean_fields=mean_fields,
        eps_sh=eps["split"][0],
        eps_mh=eps["modified"][0],
        eps_sh_rel=eps["split"][1],
        eps_mh_rel=eps["modified"][1],
        kappa_samples=kappas,
        kappa_mean=float(kappas.mean()),
        converged_counts={m: per_method[m].count for m in cfg.methods},
        failed_counts=failed,
        reports=reports,
        deterministic_field=xi,
        forcing_norm=forcing_norm,
    )


def error_statistics(mean_field: FEField, reference_mean: FEField) -> tuple[float, float]:
    """Absolute and relative L2 distance between two mean velocity fields.

    A zero reference norm yields a NaN relative error rather than a division
    blow-up.
    """
    eps = manufactured.l2_error(mean_field, reference_mean, part="velocity")
    ref_norm = manufactured.velocity_l2_norm(reference_mean.dofs,
                                             reference_mean.velocity)
    rel = eps / ref_norm if ref_norm > 0 else float("nan")
    return eps, rel


def mean_closeness_check(xi: FEField, stats: McStats) -> float:
    """L2 distance between the deterministic field and the monolithic mean."""
    reference = stats.mean_fields.get("monolithic")
    if reference is None:
        raise ValueError("stats carry no monolithic mean field")
    return manufactured.l2_error(xi, reference, part="velocity")


def diagnostics(cfg: McConfig) -> Diagnostics:
    """Evaluate the smallness indicator and the expected perturbation ratio."""
    forcing_norm = manufactured.forcing_l2_norm(cfg.nu)
    indicator = forcing_norm / cfg.nu ** 2
    n_cells = noise_mod.NoiseGrid(cfg.noise_n).n_cells
    # mean of the chi distribution with 2*n_cells degrees of freedom
    chi_mean = np.sqrt(2.0) * exp(gammaln(n_cells + 0.5) - gammaln(n_cells))
    expected_kappa = _noise_amplitude(cfg) * chi_mean / forcing_norm
    return Diagnostics(
        indicator=indicator,
        splitting_threshold=SPLITTING_SMALLNESS_THRESHOLD,
        modified_threshold=MODIFIED_SMALLNESS_THRESHOLD,
        splitting_ok=indicator <= SPLITTING_SMALLNESS_THRESHOLD,
        modified_ok=indicator <= MODIFIED_SMALLNESS_THRESHOLD,
        expected_kappa=float(expected_kappa),
    )


def write_stats_csv(path: str, stats_rows: list[McStats]) -> None:
    """One row per (method, sigma, M); monolithic rows carry failure counts only."""
    lines = ["method,sigma,M,epsilon,epsilon_rel,kappa_mean,failures"]
    for st in stats_rows:
        cfg = st.config
        for method in cfg.methods:
            if method == "split":
                e, r = st.eps_sh, st.eps_sh_rel
            elif method == "modified":
                e, r = st.eps_mh, st.eps_mh_rel
            else:
                e, r = None, None
            etxt = "" if e is None else f"{e:.6e}"
            rtxt = "" if r is None else f"{r:.6e}"
            lines.append(f"{method},{cfg.sigma:g},{cfg.M},{etxt},{rtxt},"
                         f"{st.kappa_mean:.6e},{st.failed_counts[method]}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_samples_csv(path: str, stats_rows: list[McStats]) -> None:
    lines = [SolveReport.csv_header()]
    for st in stats_rows:
        lines += [rep.to_csv_row() for rep in st.reports]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_field_csv(path: str, fld: FEField) -> None:
    """Mean-field sample points: x, y, u1, u2, |u| at every P2 node."""
    coords = fld.dofs.node_coords
    nn = fld.dofs.n_scalar_nodes
    u1, u2 = fld.velocity[:nn], fld.velocity[nn:]
    mag = np.hypot(u1, u2)
    lines = ["x,y,u1,u2,umag"]
    lines += [f"{c[0]:.17g},{c[1]:.17g},{a:.17g},{b:.17g},{m:.17g}"
              for c, a, b, m in zip(coords, u1, u2, mag)]
    atomic_write_text(path, "\n".join(lines) + "\n")
