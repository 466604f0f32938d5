"""Analysis workflows: one-step, multi-step, and specification search.

Each workflow returns a :class:`ProcedureTrace` listing every fitted model
in order with its solution and fit report, so intermediate models remain
inspectable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import (
    ConstraintSet,
    build_fixed_weight_constraints,
    build_one_step_constraints,
    buffered_quality_index,
)
from .errors import StructureError
from .estimation import FitOptions, SampleMoments, fit
from .fit_indices import FitReport, build_report
from .model import CellRole, FactorModel, LoadingPattern, Solution


@dataclass(frozen=True)
class TraceStep:
    """One fitted model inside a procedure."""

    label: str
    solution: Solution
    report: FitReport
    weights: Optional[np.ndarray] = None
    weight_gap: Optional[float] = None


@dataclass(frozen=True)
class ProcedureTrace:
    """Ordered record of every model a procedure estimated."""

    procedure: str
    pattern: LoadingPattern
    steps: tuple[TraceStep, ...]
    converged: bool
    mi_table: Optional[tuple[tuple[int, int, float], ...]] = None

    @property
    def final(self) -> TraceStep:
        return self.steps[-1]

    @property
    def quality_index(self) -> float:
        return buffered_quality_index(self.final.solution.lambda_hat, self.pattern)


def _salient_estimates(pattern: LoadingPattern, solution: Solution) -> np.ndarray:
    return np.array(
        [solution.lambda_hat[i, pattern.salient_factor(i)] for i in range(pattern.p)]
    )


def _phi_spec_model(pattern: LoadingPattern, phi_spec) -> FactorModel:
    """Model from a pattern and either 'free', a scalar, or a q x q matrix."""
    if isinstance(phi_spec, str):
        if phi_spec != "free":
            raise StructureError(f"unknown phi spec {phi_spec!r}")
        return FactorModel.free_phi(pattern)
    return FactorModel.fixed_phi(pattern, phi_spec)


def icm(
    pattern: LoadingPattern,
    phi_spec,
    moments: SampleMoments,
    opts: FitOptions = FitOptions(),
) -> ProcedureTrace:
    """Plain independent-clusters fit (secondary loadings fixed to zero)."""
    icm_pattern = LoadingPattern(
        np.where(
            pattern.cells == CellRole.NONSALIENT_FREE, CellRole.FIXED_ZERO, pattern.cells
        )
    )
    model = _phi_spec_model(icm_pattern, phi_spec)
    solution = fit(model, None, moments, opts)
    report = build_report(model, None, moments, solution)
    step = TraceStep("icm", solution, report)
    return ProcedureTrace("icm", icm_pattern, (step,), solution.converged)


def one_step(
    pattern: LoadingPattern,
    phi_spec,
    moments: SampleMoments,
    opts: FitOptions = FitOptions(),
) -> ProcedureTrace:
    """Single constrained fit with self-weighted balance constraints.

    Every fixed-zero secondary cell of the pattern is freed; ``phi_spec``
    is ``"free"`` or a fixed value/matrix for the inter-factor
    correlations.
    """
    free_pattern = pattern.with_nonsalient_free()
    model = _phi_spec_model(free_pattern, phi_spec)
    constraints = build_one_step_constraints(free_pattern)
    solution = fit(model, constraints, moments, opts)
    report = build_report(model, constraints, moments, solution)
    step = TraceStep("one-step", solution, report)
    return ProcedureTrace("one-step", free_pattern, (step,), solution.converged)


def multi_step(
    pattern: LoadingPattern,
    moments: SampleMoments,
    opts: FitOptions = FitOptions(),
    weight_tol: float = 1e-4,
    max_rounds: int = 10,
    initial_weights=None,
    phi_fix=None,
) -> ProcedureTrace:
    """Iterated fixed-weight estimation from an initial independent-clusters fit.

    Step 1 estimates the independent clusters model with free inter-factor
    correlations.  Later steps fix the correlations at those estimates,
    free all secondary loadings, and constrain their weighted block sums to
    zero with the previous step's salient estimates as weights, stopping
    when weights and estimates agree within ``weight_tol``.

    ``initial_weights`` (from an external source, e.g. an exploratory
    solution) skips the initial fit; it then requires ``phi_fix``, the
    fixed inter-factor correlations for the constrained steps.  ``phi_fix``
    alone overrides the correlations the constrained steps are fixed at.
    """
    if max_rounds < 2:
        raise StructureError("max_rounds must be at least 2")
    free_pattern = pattern.with_nonsalient_free()
    steps = []
    previous = None
    if initial_weights is None:
        icm_pattern = LoadingPattern(
            np.where(
                pattern.cells == CellRole.NONSALIENT_FREE, CellRole.FIXED_ZERO, pattern.cells
            )
        )
        icm_model = FactorModel.free_phi(icm_pattern)
        icm_solution = fit(icm_model, None, moments, opts)
        steps.append(
            TraceStep("icm", icm_solution, build_report(icm_model, None, moments, icm_solution))
        )
        if not icm_solution.converged:
            return ProcedureTrace("multi-step", free_pattern, tuple(steps), False)
        weights = _salient_estimates(icm_pattern, icm_solution)
        if phi_fix is None:
            phi_fix = icm_solution.phi_hat
        previous = icm_solution
    else:
        weights = np.asarray(initial_weights, dtype=float)
        if phi_fix is None:
            raise StructureError(
                "external initial weights require fixed inter-factor correlations"
            )
    model = FactorModel.fixed_phi(free_pattern, phi_fix)
    converged = False
    for round_no in range(2, max_rounds + 1):
        constraints = build_fixed_weight_constraints(free_pattern, weights)
        if previous is not None:
            step_opts = opts.with_starts(
                previous.lambda_hat, previous.phi_hat, previous.psi_hat
            )
        else:
            step_opts = opts
        solution = fit(model, constraints, moments, step_opts)
        estimates = _salient_estimates(free_pattern, solution)
        gap = float(np.max(np.abs(estimates - weights)))
        steps.append(
            TraceStep(
                f"constrained-{round_no}",
                solution,
                build_report(model, constraints, moments, solution),
                weights=weights.copy(),
                weight_gap=gap,
            )
        )
        if not solution.converged:
            return ProcedureTrace("multi-step", free_pattern, tuple(steps), False)
        if gap < weight_tol:
            converged = True
            break
        weights = estimates
        previous = solution
    return ProcedureTrace("multi-step", free_pattern, tuple(steps), converged)


def specification_search(
    pattern: LoadingPattern,
    moments: SampleMoments,
    opts: FitOptions = FitOptions(),
    mi_threshold: float = 15.0,
    max_freed_per_factor: int = 3,
) -> ProcedureTrace:
    """Independent-clusters fit plus modification-index-guided freeing.

    The index of each fixed-zero cell is the exact chi-square drop from
    refitting with that single cell freed.  Per factor, at most
    ``max_freed_per_factor`` cells with index above ``mi_threshold`` are
    freed (largest first; ties break by factor then variable order), and
    the final model refits them simultaneously.
    """
    if moments.n is None:
        raise StructureError("specification search requires a sample size")
    icm_model = FactorModel.free_phi(pattern)
    icm_solution = fit(icm_model, None, moments, opts)
    steps = [
        TraceStep("icm", icm_solution, build_report(icm_model, None, moments, icm_solution))
    ]
    if not icm_solution.converged:
        return ProcedureTrace("search", pattern, tuple(steps), False)

    zero_cells = [
        (i, j)
        for i in range(pattern.p)
        for j in range(pattern.q)
        if pattern.cells[i, j] is CellRole.FIXED_ZERO
    ]
    refit_opts = FitOptions(
        gradient_tol=opts.gradient_tol,
        perturbation=0.0,
        start_lambda=icm_solution.lambda_hat,
        start_phi=icm_solution.phi_hat,
        start_psi=icm_solution.psi_hat,
    )
    scale = moments.n - 1
    mi_table = []
    for (i, j) in zero_cells:
        freed_model = FactorModel.free_phi(pattern.with_cells_freed([(i, j)]))
        freed_solution = fit(freed_model, None, moments, refit_opts)
        drop = scale * max(icm_solution.f_min - freed_solution.f_min, 0.0)
        mi_table.append((i, j, float(drop)))

    chosen: list[tuple[int, int]] = []
    for j in range(pattern.q):
        candidates = [
            (mi, i) for (i, jj, mi) in mi_table if jj == j and mi > mi_threshold
        ]
        candidates.sort(key=lambda t: (-t[0], t[1]))
        chosen.extend((i, j) for (_, i) in candidates[:max_freed_per_factor])
    chosen.sort(key=lambda cell: (cell[1], cell[0]))

    if chosen:
        final_model = FactorModel.free_phi(pattern.with_cells_freed(chosen))
        final_opts = opts.with_starts(
            icm_solution.lambda_hat, icm_solution.phi_hat, icm_solution.psi_hat
        )
        final_solution = fit(final_model, None, moments, final_opts)
        final_report = build_report(final_model, None, moments, final_solution)
    else:
        final_model, final_solution, final_report = icm_model, icm_solution, steps[0].report
    steps.append(TraceStep("searched", final_solution, final_report))
    return ProcedureTrace(
        "search",
        final_model.pattern,
        tuple(steps),
        icm_solution.converged and final_solution.converged,
        mi_table=tuple(mi_table),
    )
