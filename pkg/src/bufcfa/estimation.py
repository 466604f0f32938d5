"""Maximum-likelihood discrepancy and the equality-constrained minimizer.

The discrepancy is the standard ML fit function
``F = ln|Sigma| - ln|S| + tr(S Sigma^-1) - p``.  Constrained fits run an
augmented-Lagrangian outer loop (multiplier updates, penalty growth when
feasibility stalls) around scipy's dense BFGS as the inner quasi-Newton
solver.  Uniquenesses are kept above their floor through a log transform
of the inner optimization variable, never by clamping.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .constraints import ConstraintSet, constraint_jacobian, evaluate_lambda
from .errors import NumericalError, StructureError
from .model import (
    CellRole,
    FactorModel,
    Solution,
    implied_covariance,
    pack,
    unpack,
    validate_model,
)

_INFEASIBLE_F = 1e10


@dataclass(frozen=True)
class SampleMoments:
    """Observed covariance or correlation matrix with optional sample size.

    ``n`` may be None for population-matrix analyses, in which case only
    sample-size-free fit measures are available downstream.
    """

    S: np.ndarray
    n: Optional[int] = None
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise StructureError(f"moment matrix must be square, got {S.shape}")
        asym = np.max(np.abs(S - S.T)) if S.size else 0.0
        if asym > 1e-8:
            raise StructureError(f"moment matrix asymmetric beyond tolerance ({asym:.2e})")
        S = (S + S.T) / 2.0
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError("sample moment matrix is not positive definite") from None
        S.flags.writeable = False
        object.__setattr__(self, "S", S)
        if self.n is not None and self.n < 2:
            raise StructureError(f"sample size must be at least 2, got {self.n}")
        if self.names is not None:
            names = tuple(self.names)
            if len(names) != S.shape[0]:
                raise StructureError("variable name count does not match matrix order")
            object.__setattr__(self, "names", names)

    @property
    def p(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class FitOptions:
    """Solver controls.  All tolerances are strictly positive.

    ``perturbation`` nudges zero-started secondary loadings off the exactly
    balanced start (alternating signs within each constraint block, scaled
    by a seeded random factor); balanced constraints make the unperturbed
    start a stationary saddle the quasi-Newton step cannot leave.
    """

    gradient_tol: float = 1e-7
    feasibility_tol: float = 1e-8
    max_outer_iterations: int = 50
    max_inner_iterations: int = 2000
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    salient_start: float = 0.5
    psi_start: float = 0.5
    perturbation: float = 1e-3
    perturbation_seed: int = 0
    align_signs: bool = True
    start_lambda: Optional[np.ndarray] = None
    start_phi: Optional[np.ndarray] = None
    start_psi: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("gradient_tol", "feasibility_tol", "initial_penalty", "penalty_growth"):
            if not getattr(self, name) > 0:
                raise StructureError(f"{name} must be positive")

    def with_starts(
        self, lam: np.ndarray, phi: np.ndarray, psi: np.ndarray
    ) -> "FitOptions":
        return replace(self, start_lambda=lam, start_phi=phi, start_psi=psi)


def ml_discrepancy(S: np.ndarray, sigma: np.ndarray) -> float:
    """ML fit function; nonnegative, zero iff the matrices coincide."""
    S = np.asarray(S, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if S.shape != sigma.shape:
        raise StructureError(f"shape mismatch: {S.shape} vs {sigma.shape}")
    p = S.shape[0]
    try:
        cS = cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError("sample matrix is not positive definite") from None
    try:
        cSig = cho_factor(sigma, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError("model-implied matrix is not positive definite") from None
    ldet_S = 2.0 * np.sum(np.log(np.diag(cS[0])))
    ldet_sig = 2.0 * np.sum(np.log(np.diag(cSig[0])))
    trace = float(np.trace(cho_solve(cSig, S)))
    return float(ldet_sig - ldet_S + trace - p)


def _discrepancy_gradient_parts(lam, phi, psi, S):
    """F, d F/d lambda, dF/dPhi (full), dF/dpsi at a parameter point."""
    p = lam.shape[0]
    common = lam @ phi @ lam.T
    sigma = (common + common.T) / 2.0
    sigma[np.diag_indices(p)] += psi
    try:
        cSig = cho_factor(sigma, lower=True)
    except np.linalg.LinAlgError:
        return None
    ldet_sig = 2.0 * np.sum(np.log(np.diag(cSig[0])))
    sig_inv_S = cho_solve(cSig, S)
    trace = float(np.trace(sig_inv_S))
    # W = Sigma^-1 (Sigma - S) Sigma^-1, symmetric
    sig_inv = cho_solve(cSig, np.eye(p))
    W = sig_inv - sig_inv_S @ sig_inv
    W = (W + W.T) / 2.0
    f_part = ldet_sig + trace - p
    d_lam = 2.0 * (W @ lam @ phi)
    d_phi = lam.T @ W @ lam
    d_psi = np.diag(W).copy()
    return f_part, d_lam, d_phi, d_psi


def ml_gradient(model: FactorModel, theta: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Analytic gradient of the discrepancy w.r.t. the packed parameters."""
    lam, phi, psi = unpack(model, theta)
    parts = _discrepancy_gradient_parts(lam, phi, psi, np.asarray(S, dtype=float))
    if parts is None:
        raise NumericalError("model-implied matrix is not positive definite")
    _, d_lam, d_phi, d_psi = parts
    grad = np.empty(model.n_parameters)
    for k, (i, j) in enumerate(model.free_loading_cells):
        grad[k] = d_lam[i, j]
    base = model.n_free_loadings
    for k, (i, j) in enumerate(model.free_phi_pairs):
        grad[base + k] = 2.0 * d_phi[i, j]
    grad[model.psi_offset:] = d_psi
    return grad


def _starting_point(model: FactorModel, constraints, opts: FitOptions) -> np.ndarray:
    """Packed starting vector per the starting-value policy."""
    p, q = model.p, model.q
    lam0 = np.zeros((p, q))
    for (i, j) in model.free_loading_cells:
        if model.pattern.cells[i, j] is CellRole.SALIENT_FREE:
            lam0[i, j] = opts.salient_start
    if opts.start_lambda is not None:
        start = np.asarray(opts.start_lambda, dtype=float)
        for (i, j) in model.free_loading_cells:
            lam0[i, j] = start[i, j]
    phi0 = np.where(np.isnan(model.phi_fixed), 0.0, model.phi_fixed)
    if opts.start_phi is not None:
        start = np.asarray(opts.start_phi, dtype=float)
        for (i, j) in model.free_phi_pairs:
            phi0[i, j] = phi0[j, i] = start[i, j]
    psi0 = np.full(p, opts.psi_start)
    if opts.start_psi is not None:
        psi0 = np.maximum(np.asarray(opts.start_psi, dtype=float), model.psi_floor * 2.0)
    if opts.perturbation > 0:
        _perturb_nonsalient(model, lam0, opts)
    return pack(model, lam0, phi0, psi0)


def _perturb_nonsalient(model: FactorModel, lam0: np.ndarray, opts: FitOptions) -> None:
    """Alternate +/- nudges on zero-started secondary loadings, per block.

    The alternation runs within each (block, unwanted factor) cell group so
    the nudge is orthogonal to the equal-weight sum, breaking the start's
    sign symmetry without an initial constraint violation.
    """
    rng = np.random.default_rng(opts.perturbation_seed)
    blocks = model.pattern.blocks
    for j in range(model.q):
        for b in range(model.q):
            if b == j:
                continue
            position = 0
            for i in blocks[b]:
                if (
                    model.pattern.cells[i, j] is CellRole.NONSALIENT_FREE
                    and lam0[i, j] == 0.0
                ):
                    sign = 1.0 if position % 2 == 0 else -1.0
                    lam0[i, j] = sign * opts.perturbation * rng.uniform(0.5, 1.5)
                    position += 1


def _to_internal(model: FactorModel, theta: np.ndarray) -> np.ndarray:
    z = theta.copy()
    psi = theta[model.psi_offset:]
    z[model.psi_offset:] = np.log(np.maximum(psi - model.psi_floor, 1e-300))
    return z


def _from_internal(model: FactorModel, z: np.ndarray) -> np.ndarray:
    theta = z.copy()
    theta[model.psi_offset:] = model.psi_floor + np.exp(z[model.psi_offset:])
    return theta


def _chain_to_internal(model: FactorModel, grad_theta: np.ndarray, theta: np.ndarray) -> np.ndarray:
    g = grad_theta.copy()
    g[model.psi_offset:] *= theta[model.psi_offset:] - model.psi_floor
    return g


def _align_signs(model: FactorModel, lam: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip factor columns so the first salient loading is nonnegative.

    A column is only flipped when every off-diagonal phi entry involving it
    is free; flipping a fixed correlation would change the fitted model.
    """
    lam = lam.copy()
    phi = phi.copy()
    q = model.q
    free = np.isnan(model.phi_fixed)
    for f in range(q):
        flippable = all(free[f, g] for g in range(q) if g != f)
        if not flippable:
            continue
        first = next(
            (i for i in range(model.p) if model.pattern.cells[i, f] is CellRole.SALIENT_FREE),
            None,
        )
        if first is not None and lam[first, f] < 0:
            lam[:, f] *= -1.0
            phi[f, :] *= -1.0
            phi[:, f] *= -1.0
            phi[f, f] = 1.0
    return lam, phi


def fit(
    model: FactorModel,
    constraints: Optional[ConstraintSet],
    moments: SampleMoments,
    opts: FitOptions = FitOptions(),
) -> Solution:
    """Minimize the ML discrepancy, subject to any balance constraints.

    Returns a :class:`Solution` whose ``converged`` flag reports whether the
    Lagrangian gradient and the constraint residuals met their tolerances;
    non-convergence is never silent.
    """
    problems = validate_model(model)
    if problems:
        raise StructureError("invalid model: " + "; ".join(problems))
    if moments.p != model.p:
        raise StructureError(
            f"moment matrix order {moments.p} does not match model p={model.p}"
        )
    S = moments.S
    m = len(constraints) if constraints is not None else 0
    mults = np.zeros(m)
    penalty = opts.initial_penalty

    def objective(z, mults, penalty):
        theta = _from_internal(model, z)
        lam, phi, psi = unpack(model, theta)
        parts = _discrepancy_gradient_parts(lam, phi, psi, S)
        if parts is None:
            return _INFEASIBLE_F, np.zeros_like(z)
        f, d_lam, d_phi, d_psi = parts
        grad = np.empty(model.n_parameters)
        for k, (i, j) in enumerate(model.free_loading_cells):
            grad[k] = d_lam[i, j]
        base = model.n_free_loadings
        for k, (i, j) in enumerate(model.free_phi_pairs):
            grad[base + k] = 2.0 * d_phi[i, j]
        grad[model.psi_offset:] = d_psi
        if m:
            c = evaluate_lambda(constraints, lam)
            jac = constraint_jacobian(constraints, theta, model)
            f = f - mults @ c + 0.5 * penalty * (c @ c)
            grad = grad - jac.T @ (mults - penalty * c)
        return f, _chain_to_internal(model, grad, theta)

    theta0 = _starting_point(model, constraints, opts)
    z = _to_internal(model, theta0)
    total_iterations = 0
    converged = False
    grad_norm = np.inf
    feas = np.inf

    if m == 0:
        z, grad_norm, nit = _quasi_newton(objective, z, mults, penalty, opts, opts.gradient_tol)
        total_iterations += nit
        converged = grad_norm < opts.gradient_tol
    else:
        inner_tol = max(1e-4, opts.gradient_tol)
        feas_prev = np.inf
        for _ in range(opts.max_outer_iterations):
            z, grad_norm, nit = _quasi_newton(objective, z, mults, penalty, opts, inner_tol)
            total_iterations += nit
            theta = _from_internal(model, z)
            lam, _, _ = unpack(model, theta)
            c = evaluate_lambda(constraints, lam)
            feas = float(np.max(np.abs(c))) if c.size else 0.0
            if feas < opts.feasibility_tol and grad_norm < opts.gradient_tol:
                converged = True
                break
            if feas < max(opts.feasibility_tol, 0.25 * feas_prev):
                mults = mults - penalty * c
                feas_prev = feas
            else:
                penalty *= opts.penalty_growth
            inner_tol = max(opts.gradient_tol, inner_tol * 0.1)

    theta = _from_internal(model, z)
    lam, phi, psi = unpack(model, theta)
    if opts.align_signs:
        lam, phi = _align_signs(model, lam, phi)
    f_min = ml_discrepancy(S, implied_covariance(lam, phi, psi))
    residuals = evaluate_lambda(constraints, lam) if m else np.zeros(0)
    return Solution(
        lambda_hat=lam,
        phi_hat=phi,
        psi_hat=psi,
        f_min=f_min,
        n_iterations=total_iterations,
        converged=bool(converged),
        constraint_residuals=residuals,
        gradient_norm=float(grad_norm),
    )


def _quasi_newton(objective, z0, mults, penalty, opts, gtol):
    """One dense BFGS solve, restarted when the line search stalls early.

    A restart resets the Hessian approximation, which often recovers the
    last decade of gradient norm after a precision-loss stop.  Returns the
    best point seen with its gradient norm.
    """
    best_z, best_grad = z0, np.inf
    z = z0
    nit = 0
    for _ in range(3):
        res = minimize(
            objective,
            z,
            args=(mults, penalty),
            method="BFGS",
            jac=True,
            options={
                "gtol": gtol,
                "maxiter": opts.max_inner_iterations,
                "norm": np.inf,
            },
        )
        nit += res.nit
        grad = float(np.max(np.abs(res.jac)))
        improved = grad < best_grad * 0.5
        if grad < best_grad:
            best_z, best_grad = res.x, grad
        z = res.x
        if grad < gtol or not improved:
            break
    return best_z, best_grad, nit
