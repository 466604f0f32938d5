"""Population generators, seeded sampling, and the Monte Carlo grid.

Populations follow the block layout with equal salient loadings and
half-positive / half-negative secondary loadings per (block, unwanted
factor) pair, so every generated matrix is perfectly balanced.  Sampling
uses a counter-based (Philox) stream keyed by (master seed, cell,
replication), which makes grid results independent of execution order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .constraints import build_one_step_constraints
from .errors import NumericalError, StructureError
from .estimation import FitOptions, SampleMoments, fit
from .fit_indices import degrees_of_freedom, rmsea
from .model import (
    CellRole,
    FactorModel,
    LoadingPattern,
    PopulationModel,
    standardizing_uniqueness,
)

# Sign of the first half-block of secondary loadings for q = 3, keyed by
# (block, unwanted factor); the second half takes the opposite sign.
_THREE_FACTOR_SIGNS = {
    (0, 1): 1.0,
    (0, 2): -1.0,
    (1, 0): -1.0,
    (1, 2): 1.0,
    (2, 0): -1.0,
    (2, 1): 1.0,
}


def _first_half_sign(block: int, unwanted: int, q: int) -> float:
    if q == 3:
        return _THREE_FACTOR_SIGNS[(block, unwanted)]
    return 1.0 if unwanted > block else -1.0


def block_pattern(q: int, per_factor: int, nonsalient: str = "zero") -> LoadingPattern:
    """Pattern with ``per_factor`` consecutive salient variables per factor."""
    blocks = [
        list(range(j * per_factor, (j + 1) * per_factor)) for j in range(q)
    ]
    return LoadingPattern.from_salient_blocks(blocks, q * per_factor, nonsalient)


def balanced_population(
    q: int, per_factor: int, salient: float, nonsalient: float, phi_value: float
) -> PopulationModel:
    """Standardized population with perfectly balanced secondary loadings.

    Salient cells all equal ``salient``; within each (block, unwanted
    factor) pair the first half of the block carries one sign of
    ``nonsalient`` and the second half the opposite sign.
    """
    if nonsalient != 0.0 and per_factor % 2 != 0:
        raise StructureError(
            "per-factor count must be even when secondary loadings are nonzero"
        )
    p = q * per_factor
    lam = np.zeros((p, q))
    for b in range(q):
        rows = range(b * per_factor, (b + 1) * per_factor)
        for pos, i in enumerate(rows):
            lam[i, b] = salient
            for j in range(q):
                if j == b:
                    continue
                sign = _first_half_sign(b, j, q)
                lam[i, j] = (sign if pos < per_factor // 2 else -sign) * nonsalient
    phi = np.full((q, q), float(phi_value))
    np.fill_diagonal(phi, 1.0)
    return PopulationModel.from_loadings(lam, phi)


def draw_sample(
    sigma: np.ndarray, n: int, seed
) -> tuple[np.ndarray, SampleMoments]:
    """n multivariate-normal rows plus their sample correlation matrix.

    ``seed`` may be an int or a numpy SeedSequence; identical seeds give
    bit-identical output.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if n <= p:
        raise StructureError(f"need n > p, got n={n}, p={p}")
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("population matrix is not positive definite") from None
    rng = np.random.Generator(np.random.Philox(seed))
    data = rng.standard_normal((n, p)) @ L.T
    R = np.corrcoef(data, rowvar=False)
    R = (R + R.T) / 2.0
    return data, SampleMoments(R, n=n)


def rmsd(estimated: np.ndarray, population: np.ndarray, mask: np.ndarray) -> float:
    """Root mean squared difference over the masked cells."""
    estimated = np.asarray(estimated, dtype=float)
    population = np.asarray(population, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if estimated.shape != population.shape or mask.shape != estimated.shape:
        raise StructureError("rmsd inputs must share one shape")
    if not mask.any():
        raise StructureError("rmsd mask selects no cells")
    diff = estimated[mask] - population[mask]
    return float(np.sqrt(np.mean(diff**2)))


def align_to_population(
    lam: np.ndarray, phi: np.ndarray, lam_pop: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Permute and sign-flip estimated factors to best match the population.

    Factors are matched by maximal absolute column congruence (solved as an
    assignment problem), then flipped to positive congruence.
    """
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    lam_pop = np.asarray(lam_pop, dtype=float)
    norms_e = np.linalg.norm(lam, axis=0)
    norms_p = np.linalg.norm(lam_pop, axis=0)
    congruence = (lam.T @ lam_pop) / np.outer(
        np.maximum(norms_e, 1e-12), np.maximum(norms_p, 1e-12)
    )
    rows, cols = linear_sum_assignment(-np.abs(congruence))
    order = np.empty(lam.shape[1], dtype=int)
    order[cols] = rows
    aligned = lam[:, order].copy()
    phi_aligned = phi[np.ix_(order, order)].copy()
    for j in range(lam.shape[1]):
        if congruence[order[j], j] < 0:
            aligned[:, j] *= -1.0
            phi_aligned[j, :] *= -1.0
            phi_aligned[:, j] *= -1.0
            phi_aligned[j, j] = 1.0
    return aligned, phi_aligned


@dataclass(frozen=True)
class GridSpec:
    """Design grid for the estimator-accuracy study."""

    salient_sizes: tuple[float, ...]
    nonsalient_sizes: tuple[float, ...]
    phi_values: tuple[float, ...]
    sample_sizes: tuple[int, ...]
    factors: int = 3
    per_factor: int = 6
    replications: int = 100
    master_seed: int = 20_240_501

    def __post_init__(self):
        object.__setattr__(self, "salient_sizes", tuple(float(x) for x in self.salient_sizes))
        object.__setattr__(self, "nonsalient_sizes", tuple(float(x) for x in self.nonsalient_sizes))
        object.__setattr__(self, "phi_values", tuple(float(x) for x in self.phi_values))
        object.__setattr__(self, "sample_sizes", tuple(int(x) for x in self.sample_sizes))
        if any(a != 0.0 for a in self.nonsalient_sizes) and self.per_factor % 2 != 0:
            raise StructureError("per-factor count must be even for nonzero secondary sizes")
        for l, anl, phi in itertools.product(
            self.salient_sizes, self.nonsalient_sizes, self.phi_values
        ):
            balanced_population(self.factors, self.per_factor, l, anl, phi)

    @property
    def cells(self) -> list[tuple[float, float, float, int]]:
        return list(
            itertools.product(
                self.salient_sizes,
                self.nonsalient_sizes,
                self.phi_values,
                self.sample_sizes,
            )
        )


@dataclass(frozen=True)
class RepRecord:
    """Per-replication outcome for one grid cell.

    Loading accuracy is recorded twice: over every loading cell
    (``*_loading_rmsd``, which charges the independent-clusters fit for its
    structural zeros) and over the salient cells only
    (``*_salient_rmsd``, the estimated-loading accuracy both estimators
    share).
    """

    salient: float
    nonsalient: float
    phi: float
    n: int
    replication: int
    icm_converged: bool
    buffered_converged: bool
    icm_loading_rmsd: Optional[float]
    buffered_loading_rmsd: Optional[float]
    icm_salient_rmsd: Optional[float]
    buffered_salient_rmsd: Optional[float]
    icm_phi_rmsd: Optional[float]
    buffered_phi_rmsd: Optional[float]
    icm_rmsea: Optional[float]
    buffered_rmsea: Optional[float]


@dataclass(frozen=True)
class CellSummary:
    """Converged-replication means and standard errors for one cell."""

    salient: float
    nonsalient: float
    phi: float
    n: int
    replications: int
    icm_converged: int
    buffered_converged: int
    icm_loading_rmsd_mean: float
    icm_loading_rmsd_se: float
    buffered_loading_rmsd_mean: float
    buffered_loading_rmsd_se: float
    icm_salient_rmsd_mean: float
    icm_salient_rmsd_se: float
    buffered_salient_rmsd_mean: float
    buffered_salient_rmsd_se: float
    icm_phi_rmsd_mean: float
    icm_phi_rmsd_se: float
    buffered_phi_rmsd_mean: float
    buffered_phi_rmsd_se: float
    icm_rmsea_mean: float
    icm_rmsea_se: float
    buffered_rmsea_mean: float
    buffered_rmsea_se: float


def _mean_se(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, se


def _replication_seed(master_seed: int, cell: tuple, replication: int):
    l, anl, phi, n = cell
    key = (
        master_seed,
        int(round(l * 1000)),
        int(round(anl * 1000)),
        int(round(phi * 1000)),
        int(n),
        replication,
    )
    return np.random.SeedSequence(key)


def run_cell(
    grid: GridSpec, cell: tuple[float, float, float, int], opts: FitOptions
) -> list[RepRecord]:
    """All replications of one design cell."""
    l, anl, phi_value, n = cell
    q, per_factor = grid.factors, grid.per_factor
    population = balanced_population(q, per_factor, l, anl, phi_value)
    icm_pattern = block_pattern(q, per_factor, "zero")
    buf_pattern = block_pattern(q, per_factor, "free")
    if phi_value == 0.0:
        icm_model = FactorModel.fixed_phi(icm_pattern, 0.0)
        buf_model = FactorModel.fixed_phi(buf_pattern, 0.0)
    else:
        icm_model = FactorModel.free_phi(icm_pattern)
        buf_model = FactorModel.free_phi(buf_pattern)
    buf_constraints = build_one_step_constraints(buf_pattern)
    icm_df = degrees_of_freedom(icm_model, None)
    buf_df = degrees_of_freedom(buf_model, buf_constraints)
    loading_mask = np.ones_like(population.lam, dtype=bool)
    salient_mask = np.array(
        [
            [icm_pattern.cells[i, j] is not CellRole.FIXED_ZERO for j in range(q)]
            for i in range(q * per_factor)
        ]
    )
    phi_mask = np.tril(np.ones((q, q), dtype=bool), k=-1)

    records = []
    for rep in range(grid.replications):
        seed = _replication_seed(grid.master_seed, cell, rep)
        _, moments = draw_sample(population.sigma, n, seed)
        results = {}
        for label, model, cons, df in (
            ("icm", icm_model, None, icm_df),
            ("buffered", buf_model, buf_constraints, buf_df),
        ):
            sol = fit(model, cons, moments, opts)
            if sol.converged:
                lam_a, phi_a = align_to_population(sol.lambda_hat, sol.phi_hat, population.lam)
                chi_sq = (n - 1) * sol.f_min
                results[label] = (
                    rmsd(lam_a, population.lam, loading_mask),
                    rmsd(lam_a, population.lam, salient_mask),
                    rmsd(phi_a, population.phi, phi_mask),
                    rmsea(chi_sq, df, n),
                )
            else:
                results[label] = (None, None, None, None)
        icm_r, buf_r = results["icm"], results["buffered"]
        records.append(
            RepRecord(
                salient=l,
                nonsalient=anl,
                phi=phi_value,
                n=n,
                replication=rep,
                icm_converged=icm_r[0] is not None,
                buffered_converged=buf_r[0] is not None,
                icm_loading_rmsd=icm_r[0],
                buffered_loading_rmsd=buf_r[0],
                icm_salient_rmsd=icm_r[1],
                buffered_salient_rmsd=buf_r[1],
                icm_phi_rmsd=icm_r[2],
                buffered_phi_rmsd=buf_r[2],
                icm_rmsea=icm_r[3],
                buffered_rmsea=buf_r[3],
            )
        )
    return records


def summarize_cell(cell_records: list[RepRecord]) -> CellSummary:
    first = cell_records[0]
    icm_ok = [r for r in cell_records if r.icm_converged]
    buf_ok = [r for r in cell_records if r.buffered_converged]
    icm_load = _mean_se([r.icm_loading_rmsd for r in icm_ok])
    buf_load = _mean_se([r.buffered_loading_rmsd for r in buf_ok])
    icm_sal = _mean_se([r.icm_salient_rmsd for r in icm_ok])
    buf_sal = _mean_se([r.buffered_salient_rmsd for r in buf_ok])
    icm_phi = _mean_se([r.icm_phi_rmsd for r in icm_ok])
    buf_phi = _mean_se([r.buffered_phi_rmsd for r in buf_ok])
    icm_rmsea_ms = _mean_se([r.icm_rmsea for r in icm_ok])
    buf_rmsea_ms = _mean_se([r.buffered_rmsea for r in buf_ok])
    return CellSummary(
        salient=first.salient,
        nonsalient=first.nonsalient,
        phi=first.phi,
        n=first.n,
        replications=len(cell_records),
        icm_converged=len(icm_ok),
        buffered_converged=len(buf_ok),
        icm_loading_rmsd_mean=icm_load[0],
        icm_loading_rmsd_se=icm_load[1],
        buffered_loading_rmsd_mean=buf_load[0],
        buffered_loading_rmsd_se=buf_load[1],
        icm_salient_rmsd_mean=icm_sal[0],
        icm_salient_rmsd_se=icm_sal[1],
        buffered_salient_rmsd_mean=buf_sal[0],
        buffered_salient_rmsd_se=buf_sal[1],
        icm_phi_rmsd_mean=icm_phi[0],
        icm_phi_rmsd_se=icm_phi[1],
        buffered_phi_rmsd_mean=buf_phi[0],
        buffered_phi_rmsd_se=buf_phi[1],
        icm_rmsea_mean=icm_rmsea_ms[0],
        icm_rmsea_se=icm_rmsea_ms[1],
        buffered_rmsea_mean=buf_rmsea_ms[0],
        buffered_rmsea_se=buf_rmsea_ms[1],
    )


def run_grid(
    grid: GridSpec, opts: FitOptions = FitOptions()
) -> tuple[list[CellSummary], list[RepRecord]]:
    """Run every cell of the grid; returns summaries plus raw records."""
    summaries = []
    all_records = []
    for cell in grid.cells:
        cell_records = run_cell(grid, cell, opts)
        all_records.extend(cell_records)
        summaries.append(summarize_cell(cell_records))
    return summaries, all_records
