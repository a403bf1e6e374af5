"""
Elastic-net penalized least squares by cyclic coordinate descent.

Objective for one response column (raw residual sum of squares, no 1/n):

    f(b) = ||y - D b||^2 + lambda2 * ||b_P||^2 + lambda1 * ||b_P||_1

where P is the set of penalized columns. Coordinate updates work on the Gram
matrix G = D^T D and c = D^T y, so a multi-response fit shares G across columns.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    DimensionMismatchError,
    MMMError,
    NonFiniteInputError,
    ZeroNormColumnError,
)

logger = logging.getLogger(__name__)

# Allowance factor for the stationarity certificate, in units of tolerance.
KKT_FACTOR = 10.0


class SolverOptions(BaseModel):
    """Stopping rule, penalty mask and start point for coordinate descent."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    max_iterations: int = Field(10000, ge=1, description="Maximum number of full sweeps")
    tolerance: float = Field(1e-8, gt=0, description="Max absolute coefficient change per sweep")
    penalty_mask: Optional[Tuple[bool, ...]] = Field(None, description="True = penalized; None = all penalized")
    warm_start: Optional[np.ndarray] = Field(None, description="Start vector (d) or matrix (d x K)")
    refine_active_set: bool = Field(True, description="Solve the stationarity system on a stable active set")
    threads: int = Field(1, ge=1, description="Workers for multi-response column solves")

    @field_validator("tolerance")
    @classmethod
    def check_tolerance(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("tolerance must be finite")
        return v

    @field_validator("warm_start", mode="before")
    @classmethod
    def coerce_warm_start(cls, v):
        if v is None:
            return None
        arr = np.array(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("warm_start must be finite")
        return arr

    def with_mask(self, mask: Sequence[bool]) -> "SolverOptions":
        return self.model_copy(update={"penalty_mask": tuple(bool(v) for v in mask)})

    def resolve_mask(self, d: int) -> np.ndarray:
        """Boolean penalty mask of length d."""
        if self.penalty_mask is None:
            return np.ones(d, dtype=bool)
        if len(self.penalty_mask) != d:
            raise DimensionMismatchError(
                f"penalty mask has length {len(self.penalty_mask)}, design has {d} columns"
            )
        return np.asarray(self.penalty_mask, dtype=bool)


@dataclass(frozen=True)
class SolveReport:
    """Result of one single-response solve."""
    coefficients: np.ndarray
    iterations: int
    converged: bool
    objective: float
    active_set: Tuple[int, ...]
    max_change: float = 0.0
    objective_trace: Tuple[float, ...] = field(default_factory=tuple)


def soft_threshold(z: float, t: float) -> float:
    """S(z, t) = sign(z) * max(|z| - t, 0)."""
    shrunk = abs(z) - t
    if shrunk <= 0.0:
        return 0.0
    return math.copysign(shrunk, z)


def objective_value(design: np.ndarray, response: np.ndarray, coefficients: np.ndarray,
                    lambda1: float, lambda2: float, mask: Optional[np.ndarray] = None) -> float:
    """Penalized objective evaluated from the explicit residual."""
    b = np.asarray(coefficients, dtype=np.float64)
    if mask is None:
        mask = np.ones(b.shape[0], dtype=bool)
    resid = response - design @ b
    bp = b[mask]
    return float(resid @ resid + lambda2 * (bp @ bp) + lambda1 * np.abs(bp).sum())


def _check_problem(design, response, lambda1: float, lambda2: float) -> Tuple[np.ndarray, np.ndarray]:
    d_arr = np.asfortranarray(design, dtype=np.float64)
    if d_arr.ndim != 2:
        raise DimensionMismatchError("design must be a 2-d matrix")
    n, d = d_arr.shape
    if d < 1:
        raise DimensionMismatchError("design has no columns")
    if not np.all(np.isfinite(d_arr)):
        raise NonFiniteInputError("design has non-finite entries")
    y = np.ascontiguousarray(response, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionMismatchError(f"response must be a vector of length {n}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteInputError("response has non-finite entries")
    for name, lam in (("lambda1", lambda1), ("lambda2", lambda2)):
        if not math.isfinite(lam) or lam < 0:
            raise ValueError(f"{name} must be finite and >= 0, got {lam}")
    return d_arr, y


class _CoordinateDescent:
    """One solve on a prepared Gram matrix. Not shared between threads."""

    def __init__(self, design: np.ndarray, gram: np.ndarray, lambda1: float, lambda2: float,
                 mask: np.ndarray, opts: SolverOptions):
        self.design = design
        self.gram = gram
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.mask = mask
        self.opts = opts
        self.diag = np.diag(gram).copy()
        self.l2 = np.where(mask, lambda2, 0.0)
        self.half_l1 = np.where(mask, lambda1 / 2.0, 0.0)
        self.denom = self.diag + self.l2

        zero = np.flatnonzero(self.denom == 0.0)
        if zero.size:
            raise ZeroNormColumnError(
                "design column is all zeros and has no ridge curvature",
                {"design_column": int(zero[0])},
            )

    def objective(self, y: np.ndarray, b: np.ndarray) -> float:
        return objective_value(self.design, y, b, self.lambda1, self.lambda2, self.mask)

    def _zero_coordinates_stationary(self, grad: np.ndarray, b: np.ndarray) -> bool:
        zero = b == 0.0
        slack = KKT_FACTOR * self.opts.tolerance * np.maximum(1.0, self.denom)
        return bool(np.all(np.abs(grad[zero]) <= self.half_l1[zero] + slack[zero] / 2.0))

    def _refine(self, corr: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
        """Solve (G_AA + lambda2 I_P) b_A = c_A - (lambda1/2) sign(b_A) on the active set."""
        active = np.flatnonzero(b)
        if active.size == 0:
            return None
        signs = np.sign(b[active])
        system = self.gram[np.ix_(active, active)] + np.diag(self.l2[active])
        rhs = corr[active] - self.half_l1[active] * signs
        try:
            factor = cho_factor(system, lower=True, check_finite=False)
        except LinAlgError:
            return None
        solution = cho_solve(factor, rhs, check_finite=False)
        if not np.all(np.isfinite(solution)) or not np.array_equal(np.sign(solution), signs):
            return None
        refined = np.zeros_like(b)
        refined[active] = solution
        return refined

    def _try_refine(self, y, corr, b, obj, require_stationary: bool):
        candidate = self._refine(corr, b)
        if candidate is None:
            return None
        cand_obj = self.objective(y, candidate)
        if cand_obj > obj:
            return None
        if require_stationary:
            grad = corr - self.gram @ candidate
            if not self._zero_coordinates_stationary(grad, candidate):
                return None
        return candidate, cand_obj

    def run(self, y: np.ndarray, corr: np.ndarray, start: Optional[np.ndarray]) -> SolveReport:
        d = self.gram.shape[0]
        b = np.zeros(d) if start is None else np.array(start, dtype=np.float64)
        tol = self.opts.tolerance
        trace: List[float] = []
        previous_pattern = None
        refined_pattern = None
        max_change = math.inf
        iterations = 0
        converged = False
        obj = self.objective(y, b)

        for iterations in range(1, self.opts.max_iterations + 1):
            grad = corr - self.gram @ b
            max_change = 0.0
            for j in range(d):
                bj = b[j]
                z = grad[j] + self.diag[j] * bj
                new = soft_threshold(z, self.half_l1[j]) / self.denom[j]
                delta = new - bj
                if delta != 0.0:
                    grad -= self.gram[:, j] * delta
                    b[j] = new
                    if abs(delta) > max_change:
                        max_change = abs(delta)

            new_obj = self.objective(y, b)
            if new_obj > obj * (1.0 + 1e-12) + 1e-300:
                logger.debug("objective rose from %r to %r at sweep %d", obj, new_obj, iterations)
            obj = new_obj
            trace.append(obj)

            if max_change <= tol:
                converged = True
                break

            if not self.opts.refine_active_set:
                continue
            pattern = np.sign(b).tobytes()
            if pattern == previous_pattern and pattern != refined_pattern:
                refined_pattern = pattern
                accepted = self._try_refine(y, corr, b, obj, require_stationary=False)
                if accepted is not None:
                    b, obj = accepted
            previous_pattern = pattern

        # A converged sweep leaves each coordinate stationary only up to later
        # coordinate moves; one exact solve on the final active set removes that.
        if converged and self.opts.refine_active_set:
            accepted = self._try_refine(y, corr, b, obj, require_stationary=True)
            if accepted is not None:
                b, obj = accepted
                if trace:
                    trace[-1] = min(trace[-1], obj)

        b.setflags(write=False)
        return SolveReport(
            coefficients=b,
            iterations=iterations,
            converged=converged,
            objective=float(obj),
            active_set=tuple(int(i) for i in np.flatnonzero(b)),
            max_change=float(max_change),
            objective_trace=tuple(trace),
        )


def _start_vector(opts: SolverOptions, d: int, column: Optional[int] = None) -> Optional[np.ndarray]:
    ws = opts.warm_start
    if ws is None:
        return None
    if ws.ndim == 2:
        if column is None or ws.shape[0] != d or column >= ws.shape[1]:
            raise DimensionMismatchError(f"warm start matrix has shape {ws.shape}, need ({d}, K)")
        return np.ascontiguousarray(ws[:, column])
    if ws.shape != (d,):
        raise DimensionMismatchError(f"warm start has length {ws.shape[0]}, design has {d} columns")
    return ws


def _gram(design: np.ndarray) -> np.ndarray:
    return design.T @ design


def _solve_prepared(design, gram, y, lambda1, lambda2, mask, opts, start) -> SolveReport:
    corr = design.T @ y
    cd = _CoordinateDescent(design, gram, lambda1, lambda2, mask, opts)
    return cd.run(y, corr, start)


def solve_elastic_net(design, response, lambda1: float, lambda2: float,
                      opts: Optional[SolverOptions] = None) -> SolveReport:
    """
    Minimize the elastic-net objective for one response column.

    A report with converged=False is returned (and logged) when max_iterations
    is hit.

    Raises:
        ZeroNormColumnError: a column is all zeros and has no ridge term
        DimensionMismatchError, NonFiniteInputError: malformed inputs
    """
    opts = opts or SolverOptions()
    d_arr, y = _check_problem(design, response, lambda1, lambda2)
    d = d_arr.shape[1]
    mask = opts.resolve_mask(d)
    report = _solve_prepared(d_arr, _gram(d_arr), y, lambda1, lambda2, mask, opts, _start_vector(opts, d))
    if not report.converged:
        logger.warning(
            "coordinate descent stopped after %d sweeps, last change %.3g > tolerance %.3g",
            report.iterations, report.max_change, opts.tolerance,
        )
    return report


def fit_multiresponse(design, responses, lambda1: float, lambda2: float,
                      opts: Optional[SolverOptions] = None) -> Tuple[np.ndarray, List[SolveReport]]:
    """
    Solve the K independent column problems sharing one design.

    Column k of the result equals solve_elastic_net(design, responses[:, k], ...)
    bit-for-bit. Columns run on opts.threads workers; report order follows the
    response columns.

    Returns:
        (d x K coefficient matrix, list of K reports)
    """
    opts = opts or SolverOptions()
    resp = np.asarray(responses, dtype=np.float64)
    if resp.ndim == 1:
        resp = resp.reshape(-1, 1)
    if resp.ndim != 2:
        raise DimensionMismatchError("responses must be a 2-d matrix")
    d_arr, _ = _check_problem(design, resp[:, 0] if resp.shape[1] else np.zeros(len(resp)), lambda1, lambda2)
    if not np.all(np.isfinite(resp)):
        raise NonFiniteInputError("responses have non-finite entries")
    d = d_arr.shape[1]
    k_count = resp.shape[1]
    mask = opts.resolve_mask(d)
    gram = _gram(d_arr)

    def solve_column(k: int) -> SolveReport:
        y = np.ascontiguousarray(resp[:, k])
        try:
            return _solve_prepared(d_arr, gram, y, lambda1, lambda2, mask, opts, _start_vector(opts, d, k))
        except MMMError as exc:
            raise exc.with_context(column=k) from exc

    if opts.threads > 1 and k_count > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            reports = list(pool.map(solve_column, range(k_count)))
    else:
        reports = [solve_column(k) for k in range(k_count)]

    for k, report in enumerate(reports):
        if not report.converged:
            logger.warning(
                "column %d: coordinate descent stopped after %d sweeps, last change %.3g",
                k, report.iterations, report.max_change,
            )

    coef = np.empty((d, k_count), order="F")
    for k, report in enumerate(reports):
        coef[:, k] = report.coefficients
    return coef, reports


def kkt_residuals(design, response, coefficients, lambda1: float, lambda2: float,
                  mask: Optional[Sequence[bool]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-coordinate stationarity residuals and the penalty allowance.

    For b_j != 0 the residual is |-2 d_j^T r + 2 lambda2 b_j + lambda1 sign(b_j)|
    with zero allowance; for b_j == 0 it is |2 d_j^T r| with allowance lambda1.
    Unpenalized coordinates use lambda1 = lambda2 = 0.

    Returns:
        (residuals, allowances)
    """
    d_arr, y = _check_problem(design, response, lambda1, lambda2)
    b = np.asarray(coefficients, dtype=np.float64)
    pen = np.ones(b.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    l1 = np.where(pen, lambda1, 0.0)
    l2 = np.where(pen, lambda2, 0.0)
    grad = 2.0 * (d_arr.T @ (y - d_arr @ b))
    nonzero = b != 0.0
    residuals = np.where(nonzero, np.abs(-grad + 2.0 * l2 * b + l1 * np.sign(b)), np.abs(grad))
    allowances = np.where(nonzero, 0.0, l1)
    return residuals, allowances


def check_kkt(design, response, coefficients, lambda1: float, lambda2: float,
              opts: Optional[SolverOptions] = None) -> bool:
    """True when every coordinate meets the stationarity conditions within 10 * tolerance."""
    opts = opts or SolverOptions()
    d_arr = np.asarray(design, dtype=np.float64)
    mask = opts.resolve_mask(d_arr.shape[1])
    residuals, allowances = kkt_residuals(d_arr, response, coefficients, lambda1, lambda2, mask)
    curvature = np.einsum("ij,ij->j", d_arr, d_arr) + np.where(mask, lambda2, 0.0)
    b = np.asarray(coefficients)
    slack = np.where(
        b != 0.0,
        KKT_FACTOR * opts.tolerance * curvature,
        KKT_FACTOR * opts.tolerance * np.maximum(1.0, curvature),
    )
    return bool(np.all(residuals <= allowances + slack))


def lambda_max(design, responses, mask: Optional[Sequence[bool]] = None) -> float:
    """
    Smallest lambda1 at which every penalized coefficient of every response
    column is zero: 2 max_{j,k} |d_j^T r_k|, with r_k the residual of column k
    after least squares on the unpenalized columns. lambda2 does not enter.
    """
    d_arr = np.asarray(design, dtype=np.float64)
    resp = np.asarray(responses, dtype=np.float64)
    if resp.ndim == 1:
        resp = resp.reshape(-1, 1)
    if d_arr.ndim != 2 or resp.shape[0] != d_arr.shape[0]:
        raise DimensionMismatchError(f"design has shape {d_arr.shape}, responses {resp.shape}")
    pen = np.ones(d_arr.shape[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not pen.any() or resp.shape[1] == 0:
        return 0.0
    resid = resp
    if not pen.all():
        free = d_arr[:, ~pen]
        coef, *_ = np.linalg.lstsq(free, resp, rcond=None)
        resid = resp - free @ coef
    return float(2.0 * np.max(np.abs(d_arr[:, pen].T @ resid)))
