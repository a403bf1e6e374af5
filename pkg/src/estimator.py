"""
Two-stage MMM fit and the effect formulas built on the fitted matrices.

Stage 1 regresses every mediator on [x | z]; stage 2 regresses every outcome on
[m | x | z]. Both stages are column-separable elastic-net problems.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .core_types import (
    CoefficientSet,
    Dataset,
    FitDiagnostics,
    PenaltyConfig,
    ScalingRecord,
    StageDiagnostics,
    scale_columns,
    unscale_coefficients,
)
from .errors import (
    DimensionMismatchError,
    IndexOutOfRangeError,
    MissingBlockError,
    MMMError,
    TooFewRowsError,
)
from .solver import SolveReport, SolverOptions, fit_multiresponse

logger = logging.getLogger(__name__)

MEDIATOR_STAGE = "mediator"
OUTCOME_STAGE = "outcome"


def stage_mask(leading: int, s: int, exempt_intercept: bool) -> List[bool]:
    """Penalty mask for a design whose last s columns are z (intercept first)."""
    mask = [True] * (leading + s)
    if exempt_intercept:
        mask[leading] = False
    return mask


def _require(ds: Dataset, *blocks: str) -> None:
    for block in blocks:
        if getattr(ds, block) is None:
            raise MissingBlockError(f"dataset has no {block} block")


def fit_mediator_equation(ds: Dataset, lambda1: float, lambda2: float,
                          opts: Optional[SolverOptions] = None,
                          exempt_intercept: bool = False) -> Tuple[np.ndarray, np.ndarray, List[SolveReport]]:
    """Fit m ~ [x | z] column by column; returns (alpha, zeta, reports)."""
    _require(ds, "m")
    opts = (opts or SolverOptions()).with_mask(stage_mask(ds.q, ds.s, exempt_intercept))
    try:
        coef, reports = fit_multiresponse(ds.mediator_design(), ds.m, lambda1, lambda2, opts)
    except MMMError as exc:
        raise exc.with_context(stage=MEDIATOR_STAGE) from exc
    return coef[: ds.q], coef[ds.q:], reports


def fit_outcome_equation(ds: Dataset, lambda1: float, lambda2: float,
                         opts: Optional[SolverOptions] = None,
                         exempt_intercept: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[SolveReport]]:
    """Fit y ~ [m | x | z] column by column; returns (beta, gamma, eta, reports)."""
    _require(ds, "m", "y")
    opts = (opts or SolverOptions()).with_mask(stage_mask(ds.p + ds.q, ds.s, exempt_intercept))
    try:
        coef, reports = fit_multiresponse(ds.outcome_design(), ds.y, lambda1, lambda2, opts)
    except MMMError as exc:
        raise exc.with_context(stage=OUTCOME_STAGE) from exc
    p, q = ds.p, ds.q
    return coef[:p], coef[p:p + q], coef[p + q:], reports


def fit_mmm(ds: Dataset, penalties: PenaltyConfig, opts: Optional[SolverOptions] = None,
            scale: bool = True, exempt_intercept: bool = False) -> CoefficientSet:
    """
    Two-stage elastic-net fit of the mediation model.

    With scale=True the exposure and mediator columns are normalized to
    l2-norm sqrt(n) before solving and the coefficients are mapped back, so
    the result is always on the original data scale.

    Raises:
        MissingBlockError: m or y is absent
        TooFewRowsError: fewer than two rows
    """
    _require(ds, "m", "y")
    if ds.n < 2:
        raise TooFewRowsError(f"fit needs at least 2 rows, got {ds.n}")
    opts = opts or SolverOptions()

    if scale:
        work, record = scale_columns(ds)
    else:
        work, record = ds, ScalingRecord.identity(ds.q, ds.p)

    alpha, zeta, med_reports = fit_mediator_equation(work, penalties.lambda_m1, penalties.lambda_m2, opts, exempt_intercept)
    beta, gamma, eta, out_reports = fit_outcome_equation(work, penalties.lambda_y1, penalties.lambda_y2, opts, exempt_intercept)

    diagnostics = FitDiagnostics(
        mediator_stage=StageDiagnostics.from_reports(med_reports),
        outcome_stage=StageDiagnostics.from_reports(out_reports),
    )
    if not diagnostics.all_converged:
        logger.warning(
            "fit finished with unconverged columns: mediator %s, outcome %s",
            [k for k, ok in enumerate(diagnostics.mediator_stage.converged) if not ok],
            [k for k, ok in enumerate(diagnostics.outcome_stage.converged) if not ok],
        )

    coef = CoefficientSet(
        alpha=alpha, zeta=zeta, beta=beta, gamma=gamma, eta=eta,
        diagnostics=diagnostics,
        column_names=ds.column_names,
        penalties=penalties,
        scaling=record,
    )
    if scale:
        coef = unscale_coefficients(coef, record)
    logger.debug("fit_mmm done: n=%d q=%d p=%d T=%d s=%d", ds.n, ds.q, ds.p, ds.t, ds.s)
    return coef


class PathEffect(NamedTuple):
    exposure: int
    mediator: int
    outcome: int
    value: float


def _check_index(name: str, value: int, size: int) -> int:
    if not 0 <= value < size:
        raise IndexOutOfRangeError(f"{name} index {value} outside [0, {size})")
    return int(value)


@dataclass(frozen=True)
class MediationEffects:
    """Indirect-effect matrix alpha @ beta with lazy per-path access."""
    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def from_coefficients(cls, coef: CoefficientSet) -> "MediationEffects":
        return cls(alpha=coef.alpha, beta=coef.beta)

    @cached_property
    def indirect(self) -> np.ndarray:
        out = np.asfortranarray(self.alpha @ self.beta)
        out.setflags(write=False)
        return out

    @property
    def global_effects(self) -> np.ndarray:
        """Read-only view of the indirect matrix (entry j, l = global effect)."""
        return self.indirect

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.alpha.shape[0], self.alpha.shape[1], self.beta.shape[1]

    def global_effect(self, j: int, l: int) -> float:
        q, _, t = self.shape
        return float(self.indirect[_check_index("exposure", j, q), _check_index("outcome", l, t)])

    def path_effect(self, j: int, k: int, l: int) -> float:
        q, p, t = self.shape
        j = _check_index("exposure", j, q)
        k = _check_index("mediator", k, p)
        l = _check_index("outcome", l, t)
        return float(self.alpha[j, k] * self.beta[k, l])


def indirect_effect_matrix(coef: CoefficientSet) -> np.ndarray:
    """q x T indirect-effect matrix alpha @ beta."""
    return MediationEffects.from_coefficients(coef).indirect


def global_effect(coef: CoefficientSet, j: int, l: int) -> float:
    return MediationEffects.from_coefficients(coef).global_effect(j, l)


def path_effect(coef: CoefficientSet, j: int, k: int, l: int) -> float:
    return MediationEffects.from_coefficients(coef).path_effect(j, k, l)


def _contrast(coef: CoefficientSet, x_new, x_ref, l: int) -> np.ndarray:
    a = np.asarray(x_new, dtype=np.float64).ravel()
    b = np.asarray(x_ref, dtype=np.float64).ravel()
    if a.shape != (coef.q,) or b.shape != (coef.q,):
        raise DimensionMismatchError(
            f"exposure vectors must have length q={coef.q}, got {a.shape[0]} and {b.shape[0]}"
        )
    _check_index("outcome", l, coef.t)
    return a - b


def cde(coef: CoefficientSet, x_new, x_ref, l: int) -> float:
    """Controlled direct effect (x - x_ref)^T gamma[:, l]."""
    diff = _contrast(coef, x_new, x_ref, l)
    return float(diff @ coef.gamma[:, l])


def nde(coef: CoefficientSet, x_new, x_ref, l: int) -> float:
    """Natural direct effect; coincides with the controlled direct effect in a linear model."""
    diff = _contrast(coef, x_new, x_ref, l)
    return float(diff @ coef.gamma[:, l])


def nie(coef: CoefficientSet, x_new, x_ref, l: int) -> float:
    """Natural indirect effect (x - x_ref)^T (alpha beta)[:, l]."""
    diff = _contrast(coef, x_new, x_ref, l)
    return float(diff @ indirect_effect_matrix(coef)[:, l])


def reduced_form(coef: CoefficientSet) -> Tuple[np.ndarray, np.ndarray]:
    """(psi, omega) = (alpha beta + gamma, zeta beta + eta): y on [x | z] with m substituted."""
    psi = indirect_effect_matrix(coef) + coef.gamma
    omega = coef.zeta @ coef.beta + coef.eta
    return psi, omega


def total_effect(coef: CoefficientSet, x_new, x_ref, l: int) -> float:
    """(x - x_ref)^T (alpha beta + gamma)[:, l]."""
    diff = _contrast(coef, x_new, x_ref, l)
    psi, _ = reduced_form(coef)
    return float(diff @ psi[:, l])


def top_paths(effects: MediationEffects, count: int) -> List[PathEffect]:
    """
    The `count` largest |alpha_jk * beta_kl| paths, descending, ties by (j, k, l).

    Works one exposure at a time so the full q x p x T tensor is never built.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    q, p, t = effects.shape
    count = min(count, q * p * t)
    block_size = p * t

    keep_values = []
    keep_index = []
    for j in range(q):
        block = (effects.alpha[j, :, None] * effects.beta).ravel()
        flat = np.arange(block_size)
        order = np.lexsort((flat, -np.abs(block)))[:count]
        keep_values.append(block[order])
        keep_index.append(j * block_size + flat[order])

    values = np.concatenate(keep_values)
    index = np.concatenate(keep_index)
    order = np.lexsort((index, -np.abs(values)))[:count]

    paths = []
    for pos in order:
        g = int(index[pos])
        j, rest = divmod(g, block_size)
        k, l = divmod(rest, t)
        paths.append(PathEffect(j, k, l, float(values[pos])))
    return paths
