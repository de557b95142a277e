"""Piecewise-constant approximation of spatial white noise on the unit square.

A realization on an n x n cell grid takes the value (sigma / sqrt(V)) * zeta_k
on cell k, with V = 1/n^2 the cell volume and zeta_k a pair of independent
standard normal draws (one per velocity component). Sampling uses the Philox
counter-based generator so realizations are reproducible and independent of
evaluation order; Monte Carlo substreams are keyed by (base seed, sample index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_text


@dataclass(frozen=True)
class NoiseGrid:
    """Uniform cell partition of [0,1]^2; cells indexed row-major by (iy, ix)."""

    n_noise: int

    def __post_init__(self):
        if self.n_noise < 1:
            raise ValueError(f"noise grid needs at least one cell, got n_noise={self.n_noise}")

    @property
    def n_cells(self) -> int:
        return self.n_noise ** 2

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.n_noise ** 2


@dataclass(frozen=True)
class NoiseField:
    """One realization: zeta has shape (n_cells, 2), finite, seed-reproducible."""

    grid: NoiseGrid
    sigma: float
    zeta: np.ndarray
    seed: int


def substream_key(base_seed: int, sample_index: int) -> int:
    """Disjoint 128-bit Philox key for one Monte Carlo sample."""
    if base_seed < 0 or sample_index < 0:
        raise ValueError("seed and sample index must be non-negative")
    return (int(base_seed) << 64) | int(sample_index)


def sample_noise(grid: NoiseGrid, sigma: float, seed: int) -> NoiseField:
    """Draw one realization; the same (grid, sigma, seed) reproduces it bit-exactly."""
    if sigma < 0:
        raise ValueError(f"noise amplitude must be >= 0, got sigma={sigma}")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    zeta = rng.standard_normal((grid.n_cells, 2))
    return NoiseField(grid=grid, sigma=float(sigma), zeta=zeta, seed=int(seed))


def evaluate_noise(field: NoiseField, x: float, y: float) -> np.ndarray:
    """Pointwise value (sigma / sqrt(V)) * zeta_k of the containing cell.

    Points on interior cell boundaries resolve to the cell whose lower-left
    corner they touch; the domain's upper edges fold into the last cells.
    """
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"point ({x}, {y}) lies outside the unit square")
    n = field.grid.n_noise
    ix = min(int(np.floor(x * n)), n - 1)
    iy = min(int(np.floor(y * n)), n - 1)
    scale = field.sigma / np.sqrt(field.grid.cell_volume)
    return scale * field.zeta[iy * n + ix]


def noise_l2_norm(field: NoiseField) -> float:
    """Exact L2 norm of the realization: sigma * sqrt(sum_k |zeta_k|^2).

    Piecewise-constant fields integrate exactly: each cell contributes
    V * (sigma/sqrt(V))^2 |zeta_k|^2 = sigma^2 |zeta_k|^2.
    """
    return float(field.sigma * np.sqrt(np.sum(field.zeta ** 2)))


def noise_to_csv(field: NoiseField, path: str) -> None:
    """Dump a realization as (cell_i, cell_j, zeta_x, zeta_y) rows."""
    n = field.grid.n_noise
    lines = ["cell_i,cell_j,zeta_x,zeta_y"]
    for k in range(field.grid.n_cells):
        iy, ix = divmod(k, n)
        lines.append(f"{ix},{iy},{field.zeta[k, 0]:.17g},{field.zeta[k, 1]:.17g}")
    atomic_write_text(path, "\n".join(lines) + "\n")
