"""Factor-model data types, parameter packing, and the implied covariance map.

The central objects are :class:`LoadingPattern` (which loading cells are
salient, free secondary, or fixed zero), :class:`FactorModel` (pattern plus
factor-correlation and uniqueness specification), and the packing helpers
that map free parameters to and from a flat vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InvalidPopulationError, NumericalError, StructureError

DEFAULT_PSI_FLOOR = 1e-3


class CellRole(Enum):
    """Role of one loading-matrix cell in the hypothesis pattern."""

    SALIENT_FREE = "salient"
    NONSALIENT_FREE = "nonsalient"
    FIXED_ZERO = "zero"


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LoadingPattern:
    """p x q grid of cell roles plus each variable's salient factor.

    Rows are observed variables, columns are factors.  Construction is
    permissive; :func:`validate_model` reports invariant violations.
    """

    cells: np.ndarray  # p x q array of CellRole

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=object)
        if cells.ndim != 2:
            raise StructureError("pattern cells must be a 2-D grid")
        object.__setattr__(self, "cells", cells)
        cells.flags.writeable = False

    @property
    def p(self) -> int:
        return self.cells.shape[0]

    @property
    def q(self) -> int:
        return self.cells.shape[1]

    @classmethod
    def from_salient_blocks(
        cls, blocks: Sequence[Sequence[int]], p: int, nonsalient: str = "zero"
    ) -> "LoadingPattern":
        """Build a pattern from per-factor lists of salient variable indices.

        ``nonsalient`` is ``"zero"`` for an independent-clusters pattern or
        ``"free"`` to leave every secondary loading estimable.
        """
        if nonsalient not in ("zero", "free"):
            raise StructureError(f"nonsalient must be 'zero' or 'free', got {nonsalient!r}")
        q = len(blocks)
        off_role = CellRole.FIXED_ZERO if nonsalient == "zero" else CellRole.NONSALIENT_FREE
        cells = np.full((p, q), off_role, dtype=object)
        for j, members in enumerate(blocks):
            for i in members:
                if not 0 <= i < p:
                    raise StructureError(f"variable index {i} out of range for p={p}")
                cells[i, j] = CellRole.SALIENT_FREE
        return cls(cells)

    def salient_factor(self, var: int) -> int:
        """Index of the variable's unique salient factor."""
        hits = [j for j in range(self.q) if self.cells[var, j] is CellRole.SALIENT_FREE]
        if len(hits) != 1:
            raise StructureError(f"variable {var} has {len(hits)} salient cells, expected 1")
        return hits[0]

    @cached_property
    def blocks(self) -> tuple[tuple[int, ...], ...]:
        """Per factor, the variables whose salient loading sits on it."""
        out: list[list[int]] = [[] for _ in range(self.q)]
        for i in range(self.p):
            out[self.salient_factor(i)].append(i)
        return tuple(tuple(b) for b in out)

    def with_nonsalient_free(self) -> "LoadingPattern":
        """Copy of the pattern with every FIXED_ZERO cell made estimable."""
        cells = np.array(self.cells, dtype=object)
        cells[cells == CellRole.FIXED_ZERO] = CellRole.NONSALIENT_FREE
        return LoadingPattern(cells)

    def with_cells_freed(self, freed: Sequence[tuple[int, int]]) -> "LoadingPattern":
        """Copy with the given (variable, factor) zero cells made estimable."""
        cells = np.array(self.cells, dtype=object)
        for (i, j) in freed:
            if cells[i, j] is not CellRole.FIXED_ZERO:
                raise StructureError(f"cell ({i}, {j}) is not fixed to zero")
            cells[i, j] = CellRole.NONSALIENT_FREE
        return LoadingPattern(cells)

    def violations(self) -> list[str]:
        """All pattern-invariant violations, empty when the pattern is valid."""
        problems = []
        if not self.p >= self.q >= 2:
            problems.append(f"requires p >= q >= 2, got p={self.p}, q={self.q}")
        for i in range(self.p):
            n_sal = sum(self.cells[i, j] is CellRole.SALIENT_FREE for j in range(self.q))
            if n_sal == 0:
                problems.append(f"variable {i} has no salient factor")
            elif n_sal > 1:
                problems.append(f"variable {i} has multiple salient factors")
        for j in range(self.q):
            if not any(self.cells[i, j] is CellRole.SALIENT_FREE for i in range(self.p)):
                problems.append(f"factor {j} has no salient variable (empty factor)")
        return problems


PHI_FREE = "free"


@dataclass(frozen=True)
class FactorModel:
    """Estimable model: loading pattern, factor correlations, uniquenesses.

    ``phi_fixed`` is a q x q array with NaN marking freely estimated
    inter-factor correlations; the diagonal is always 1 (unit factor
    variances).  Uniquenesses are always free, bounded below by
    ``psi_floor``.
    """

    pattern: LoadingPattern
    phi_fixed: np.ndarray  # q x q, NaN = free entry, diagonal 1.0
    psi_floor: float = DEFAULT_PSI_FLOOR

    def __post_init__(self):
        phi = np.asarray(self.phi_fixed, dtype=float)
        if phi.shape != (self.pattern.q, self.pattern.q):
            raise StructureError(
                f"phi spec shape {phi.shape} does not match q={self.pattern.q}"
            )
        object.__setattr__(self, "phi_fixed", _readonly(phi))

    @classmethod
    def free_phi(cls, pattern: LoadingPattern, psi_floor: float = DEFAULT_PSI_FLOOR):
        """Model with all inter-factor correlations freely estimated."""
        phi = np.full((pattern.q, pattern.q), np.nan)
        np.fill_diagonal(phi, 1.0)
        return cls(pattern, phi, psi_floor)

    @classmethod
    def fixed_phi(
        cls,
        pattern: LoadingPattern,
        value: float | np.ndarray,
        psi_floor: float = DEFAULT_PSI_FLOOR,
    ):
        """Model with all inter-factor correlations fixed.

        ``value`` is a scalar applied to every factor pair, or a full q x q
        correlation matrix.
        """
        q = pattern.q
        if np.isscalar(value):
            phi = np.full((q, q), float(value))
        else:
            phi = np.asarray(value, dtype=float).copy()
        np.fill_diagonal(phi, 1.0)
        return cls(pattern, phi, psi_floor)

    @property
    def p(self) -> int:
        return self.pattern.p

    @property
    def q(self) -> int:
        return self.pattern.q

    @cached_property
    def free_loading_cells(self) -> tuple[tuple[int, int], ...]:
        """Free loading cells in row-major pattern order."""
        return tuple(
            (i, j)
            for i in range(self.p)
            for j in range(self.q)
            if self.pattern.cells[i, j] is not CellRole.FIXED_ZERO
        )

    @cached_property
    def free_phi_pairs(self) -> tuple[tuple[int, int], ...]:
        """Free inter-factor correlations in lower-triangular order (i > j)."""
        return tuple(
            (i, j)
            for i in range(self.q)
            for j in range(i)
            if np.isnan(self.phi_fixed[i, j])
        )

    @cached_property
    def loading_index(self) -> dict[tuple[int, int], int]:
        """Map from free loading cell to its position in the packed vector."""
        return {cell: k for k, cell in enumerate(self.free_loading_cells)}

    @property
    def n_free_loadings(self) -> int:
        return len(self.free_loading_cells)

    @property
    def n_free_phi(self) -> int:
        return len(self.free_phi_pairs)

    @property
    def psi_offset(self) -> int:
        return self.n_free_loadings + self.n_free_phi

    @property
    def n_parameters(self) -> int:
        """Free loadings + free correlations + p uniquenesses."""
        return self.psi_offset + self.p


def validate_model(model: FactorModel) -> list[str]:
    """Check all model invariants; returns the violation list (empty = ok)."""
    problems = model.pattern.violations()
    phi = model.phi_fixed
    fixed = ~np.isnan(phi)
    if not np.array_equal(fixed, fixed.T) or not np.allclose(
        np.where(fixed, phi, 0.0), np.where(fixed, phi, 0.0).T
    ):
        problems.append("phi spec is not symmetric")
    if not np.all(np.diag(phi) == 1.0):
        problems.append("phi diagonal must be fixed to 1")
    off = phi[~np.eye(model.q, dtype=bool)]
    bad = off[~np.isnan(off)]
    if bad.size and (np.any(bad < -1.0) or np.any(bad > 1.0)):
        problems.append("fixed phi entries must lie in [-1, 1]")
    if not model.psi_floor > 0:
        problems.append("uniqueness floor must be positive")
    return problems


def implied_covariance(lam: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Model-implied covariance: loadings @ phi @ loadings' + diag(psi).

    Symmetric by construction.  Raises :class:`StructureError` on shape
    mismatch.
    """
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if lam.ndim != 2:
        raise StructureError("loading matrix must be 2-D")
    p, q = lam.shape
    if phi.shape != (q, q):
        raise StructureError(f"phi shape {phi.shape} does not match q={q}")
    if psi.shape != (p,):
        raise StructureError(f"psi shape {psi.shape} does not match p={p}")
    common = lam @ phi @ lam.T
    sigma = (common + common.T) / 2.0
    sigma[np.diag_indices(p)] += psi
    return sigma


def standardizing_uniqueness(lam: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Uniquenesses that standardize the model to unit total variances.

    Returns 1 - communality per variable; every communality must be < 1.
    """
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    communality = np.einsum("ij,jk,ik->i", lam, phi, lam)
    if np.any(communality >= 1.0):
        bad = np.nonzero(communality >= 1.0)[0]
        raise InvalidPopulationError(
            f"communality >= 1 for variable(s) {bad.tolist()}; "
            "population cannot be standardized"
        )
    return 1.0 - communality


def pack(model: FactorModel, lam: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Flatten free parameters: loadings (row-major), phi (lower-tri), psi."""
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if lam.shape != (model.p, model.q):
        raise StructureError(f"lambda shape {lam.shape} does not match pattern")
    if psi.shape != (model.p,):
        raise StructureError(f"psi shape {psi.shape} does not match p={model.p}")
    theta = np.empty(model.n_parameters)
    for k, (i, j) in enumerate(model.free_loading_cells):
        theta[k] = lam[i, j]
    base = model.n_free_loadings
    for k, (i, j) in enumerate(model.free_phi_pairs):
        theta[base + k] = phi[i, j]
    theta[model.psi_offset:] = psi
    return theta


def unpack(model: FactorModel, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`pack`; fixed cells are filled from the model spec."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_parameters,):
        raise StructureError(
            f"parameter vector length {theta.shape} != {model.n_parameters}"
        )
    lam = np.zeros((model.p, model.q))
    for k, (i, j) in enumerate(model.free_loading_cells):
        lam[i, j] = theta[k]
    phi = np.where(np.isnan(model.phi_fixed), 0.0, model.phi_fixed)
    base = model.n_free_loadings
    for k, (i, j) in enumerate(model.free_phi_pairs):
        phi[i, j] = theta[base + k]
        phi[j, i] = theta[base + k]
    psi = theta[model.psi_offset:].copy()
    return lam, phi, psi


@dataclass(frozen=True)
class Solution:
    """Estimation result: parameter estimates plus convergence diagnostics."""

    lambda_hat: np.ndarray
    phi_hat: np.ndarray
    psi_hat: np.ndarray
    f_min: float
    n_iterations: int
    converged: bool
    constraint_residuals: np.ndarray
    gradient_norm: float

    def __post_init__(self):
        for name in ("lambda_hat", "phi_hat", "psi_hat", "constraint_residuals"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def max_constraint_residual(self) -> float:
        if self.constraint_residuals.size == 0:
            return 0.0
        return float(np.max(np.abs(self.constraint_residuals)))


@dataclass(frozen=True)
class PopulationModel:
    """Exact population parameters and the implied correlation matrix."""

    lam: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        sigma = self.sigma
        if sigma is None:
            sigma = implied_covariance(lam, phi, psi)
        sigma = np.asarray(sigma, dtype=float)
        if np.max(np.abs(np.diag(sigma) - 1.0)) >= 1e-12:
            raise InvalidPopulationError("population sigma diagonal is not 1")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise NumericalError("population sigma is not positive definite") from None
        object.__setattr__(self, "lam", _readonly(lam))
        object.__setattr__(self, "phi", _readonly(phi))
        object.__setattr__(self, "psi", _readonly(psi))
        object.__setattr__(self, "sigma", _readonly(sigma))

    @classmethod
    def from_loadings(cls, lam: np.ndarray, phi: np.ndarray) -> "PopulationModel":
        """Standardize a loading matrix into a full population model."""
        psi = standardizing_uniqueness(lam, phi)
        return cls(lam, phi, psi)
