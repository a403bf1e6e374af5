"""
Inference diagnostics for a fitted mediation model: the beta error bound, the
elastic irrepresentable condition, standardized normality statistics, bootstrap
stability and Type-I rates on null entries.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats
from tqdm import tqdm

from .core_types import CoefficientSet, Dataset, PenaltyConfig, scale_columns
from .errors import (
    BootstrapFailureError,
    DimensionMismatchError,
    EmptySupportError,
    IndexOutOfRangeError,
    MissingBlockError,
    MMMError,
    ShapeMismatchError,
    SingularGramError,
    UnnormalizedDirectionError,
)
from .estimator import fit_mmm
from .solver import SolverOptions

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-12
DIRECTION_TOLERANCE = 1e-12
MAX_BOOTSTRAP_FAILURE_SHARE = 0.2


# ---------------------------------------------------------------------------
# Error bound and EIC
# ---------------------------------------------------------------------------

def mse_bound_beta(ds: Dataset, beta_k, penalties: PenaltyConfig) -> float:
    """
    Upper bound on E||beta_hat_k - beta_k||^2:

        (4 l2^2 ||beta_k||^2 + 8 n p ||m||_inf^2 + l1^2 p) / (delta n + l2)^2

    with delta the smallest eigenvalue of M^T M / n and (l1, l2) the outcome
    penalties. ds and beta_k must be on the scale the penalties were applied
    to; run_diagnostics passes the normalized mediators of a scaled fit.

    Raises:
        SingularGramError: delta <= 1e-12
    """
    if ds.m is None:
        raise MissingBlockError("error bound needs the mediator block")
    beta_k = np.asarray(beta_k, dtype=np.float64).ravel()
    n, p = ds.n, ds.p
    if beta_k.shape != (p,):
        raise DimensionMismatchError(f"beta column has length {beta_k.shape[0]}, p={p}")
    delta = float(linalg.eigvalsh(ds.m.T @ ds.m / n)[0])
    if delta <= EIGEN_FLOOR:
        raise SingularGramError(f"smallest eigenvalue of the mediator Gram is {delta:.3g}")
    l1, l2 = penalties.outcome_pair()
    m_inf = float(np.max(np.abs(ds.m)))
    numerator = 4.0 * l2 ** 2 * float(beta_k @ beta_k) + 8.0 * n * p * m_inf ** 2 + l1 ** 2 * p
    return numerator / (delta * n + l2) ** 2


@dataclass(frozen=True)
class EicReport:
    """
    Elastic irrepresentable condition for one (outcome k, mediator l) pair.

    A value is None when its l1 penalty is zero. rho is the smallest absolute
    coefficient on the support and c_min the smallest eigenvalue of the support
    block of the normalized Gram.
    """
    outcome_index: int
    mediator_index: int
    value_beta: Optional[float]
    value_alpha: Optional[float]
    support_size_beta: int
    support_size_alpha: int
    rho_beta: float = 0.0
    rho_alpha: float = 0.0
    c_min_beta: float = 0.0
    c_min_alpha: float = 0.0

    @property
    def psi_margin(self) -> Optional[float]:
        values = [v for v in (self.value_beta, self.value_alpha) if v is not None]
        if not values:
            return None
        return 1.0 - max(values)

    @property
    def satisfied(self) -> Optional[bool]:
        margin = self.psi_margin
        return None if margin is None else margin > 0


class _EicPart(NamedTuple):
    value: Optional[float]
    support_size: int
    rho: float
    c_min: float


def _eic_part(design: np.ndarray, coef_column: np.ndarray, lambda1: float, lambda2: float,
              equation: str) -> _EicPart:
    n = design.shape[0]
    support = np.flatnonzero(coef_column)
    if support.size == 0:
        raise EmptySupportError("inspected coefficient column has no nonzero entries", {"equation": equation})
    rest = np.setdiff1d(np.arange(design.shape[1]), support)
    gram = design.T @ design / n
    c11 = gram[np.ix_(support, support)]
    c_min = float(linalg.eigvalsh(c11)[0])
    b1 = coef_column[support]
    rho = float(np.min(np.abs(b1)))
    if lambda1 == 0.0:
        return _EicPart(None, support.size, rho, c_min)
    if rest.size == 0:
        return _EicPart(0.0, support.size, rho, c_min)
    rhs = np.sign(b1) + (2.0 * lambda2 / lambda1) * b1
    try:
        w = linalg.solve(c11 + (lambda2 / n) * np.eye(support.size), rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SingularGramError("support block of the Gram is singular", {"equation": equation}) from exc
    c21 = gram[np.ix_(rest, support)]
    return _EicPart(float(np.max(np.abs(c21 @ w))), support.size, rho, c_min)


def _fit_scale(ds: Dataset, coef: CoefficientSet) -> Tuple[Dataset, np.ndarray, np.ndarray]:
    """Data and (alpha, beta) on the scale the penalties were applied to."""
    if coef.scaling is None or not coef.scaling.applied:
        return ds, coef.alpha, coef.beta
    scaled, _ = scale_columns(ds)
    rec = coef.scaling
    alpha = coef.alpha * rec.m_scales[None, :] / rec.x_scales[:, None]
    beta = coef.beta / rec.m_scales[:, None]
    return scaled, alpha, beta


def check_eic(ds: Dataset, coef: CoefficientSet, penalties: PenaltyConfig, k: int, l: int) -> EicReport:
    """
    Evaluate the elastic irrepresentable condition on the fitted supports of
    beta[:, k] (mediator Gram) and alpha[:, l] (exposure Gram).

    Raises:
        EmptySupportError: either inspected column is all zeros
    """
    if ds.m is None:
        raise MissingBlockError("EIC needs the mediator block")
    if not 0 <= k < coef.t or not 0 <= l < coef.p:
        raise IndexOutOfRangeError(f"pair (k={k}, l={l}) outside T={coef.t}, p={coef.p}")
    work, alpha, beta = _fit_scale(ds, coef)
    part_b = _eic_part(work.m, beta[:, k], penalties.lambda_y1, penalties.lambda_y2, "outcome")
    part_a = _eic_part(work.x, alpha[:, l], penalties.lambda_m1, penalties.lambda_m2, "mediator")
    return EicReport(
        outcome_index=k,
        mediator_index=l,
        value_beta=part_b.value,
        value_alpha=part_a.value,
        support_size_beta=part_b.support_size,
        support_size_alpha=part_a.support_size,
        rho_beta=part_b.rho,
        rho_alpha=part_a.rho,
        c_min_beta=part_b.c_min,
        c_min_alpha=part_a.c_min,
    )


def lambda_scaling_ratios(penalties: PenaltyConfig, n: int) -> Dict[str, Dict[str, float]]:
    """lambda / sqrt(n) and lambda / n for each of the four penalties."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = math.sqrt(n)
    return {
        name: {"value": value, "over_sqrt_n": value / root, "over_n": value / n}
        for name, value in penalties.model_dump().items()
    }


# ---------------------------------------------------------------------------
# Standardized statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalityStat:
    """Standardized statistic samples with the direction and target variance used."""
    values: np.ndarray
    direction: np.ndarray
    target_variance: float = 1.0

    def __post_init__(self):
        _check_direction(self.direction)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def studentized(self) -> np.ndarray:
        if self.target_variance <= 0:
            raise ValueError("target variance is zero; statistic cannot be studentized")
        return self.values / math.sqrt(self.target_variance)

    def ks_distance(self) -> float:
        """Kolmogorov-Smirnov distance of the studentized values to N(0, 1)."""
        return float(stats.kstest(self.studentized(), "norm").statistic)


class MediationStat(NamedTuple):
    value: float
    target_variance: float

    @property
    def studentized(self) -> Optional[float]:
        if self.target_variance <= 0:
            return None
        return self.value / math.sqrt(self.target_variance)


def _check_direction(v: np.ndarray) -> None:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > DIRECTION_TOLERANCE:
        raise UnnormalizedDirectionError(f"direction vector has norm {norm!r}, expected 1")


def _direction(v, size: int) -> np.ndarray:
    if v is None:
        out = np.zeros(size)
        out[0] = 1.0
        return out
    out = np.asarray(v, dtype=np.float64).ravel()
    if out.shape != (size,):
        raise DimensionMismatchError(f"direction has length {out.shape[0]}, support has {size}")
    _check_direction(out)
    return out


def _restricted_gram(columns: np.ndarray, nuisance: Optional[np.ndarray]) -> np.ndarray:
    """Sum-of-outer-products Gram of the support columns, partialled on nuisance columns if given."""
    if nuisance is not None and nuisance.shape[1] > 0:
        coef, *_ = np.linalg.lstsq(nuisance, columns, rcond=None)
        columns = columns - nuisance @ coef
    gram = columns.T @ columns
    return (gram + gram.T) / 2.0


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root with eigenvalues floored at 1e-12."""
    w, vecs = linalg.eigh(matrix)
    w = np.maximum(w, EIGEN_FLOOR)
    return (vecs * np.sqrt(w)) @ vecs.T


def _sandwich(gram: np.ndarray, lambda2: float, deviation: np.ndarray, v: np.ndarray) -> float:
    """v^T (I + lambda2 G^{-1}) G^{1/2} deviation."""
    w, vecs = linalg.eigh(gram)
    if w[0] <= EIGEN_FLOOR:
        raise SingularGramError(f"restricted Gram has smallest eigenvalue {w[0]:.3g}")
    factor = (1.0 + lambda2 / w) * np.sqrt(w)
    return float(v @ (vecs @ (factor * (vecs.T @ deviation))))


def _support(column: np.ndarray, support: Optional[Sequence[int]]) -> np.ndarray:
    idx = np.flatnonzero(column) if support is None else np.asarray(support, dtype=np.intp)
    if idx.size == 0:
        raise EmptySupportError("statistic needs a non-empty support")
    return idx


def _column_scales(estimate: CoefficientSet, block: str, idx: np.ndarray) -> np.ndarray:
    """Fit-scale factors of the support columns; ones for an unscaled fit."""
    rec = estimate.scaling
    scales = None
    if rec is not None and rec.applied:
        scales = rec.x_scales if block == "x" else rec.m_scales
    if scales is None:
        return np.ones(idx.size)
    return np.asarray(scales, dtype=np.float64)[idx]


def standardized_beta_stat(ds: Dataset, reference: CoefficientSet, estimate: CoefficientSet, k: int,
                           v=None, lambda2: Optional[float] = None, support: Optional[Sequence[int]] = None,
                           nuisance: Optional[np.ndarray] = None, noise_scale: float = 1.0) -> float:
    """
    v^T (I + l2 G^{-1}) G^{1/2} (beta_hat_k - beta_k) restricted to the support,
    where G = sum_i m_i1 m_i1^T over the support mediators.

    The support defaults to the nonzero entries of reference.beta[:, k]; v
    defaults to the first unit vector. With `nuisance` columns G is the Gram of
    the support columns after partialling them out. When the estimate was fit
    on normalized columns, G and the deviation are taken on that scale, where
    l2 was applied.
    """
    if ds.m is None:
        raise MissingBlockError("beta statistic needs the mediator block")
    idx = _support(reference.beta[:, k], support)
    v = _direction(v, idx.size)
    if lambda2 is None:
        lambda2 = estimate.penalties.lambda_y2 if estimate.penalties else 0.0
    scales = _column_scales(estimate, "m", idx)
    gram = _restricted_gram(ds.m[:, idx] * scales, nuisance)
    deviation = (estimate.beta[idx, k] - reference.beta[idx, k]) / scales
    return _sandwich(gram, lambda2, deviation, v) / noise_scale


def standardized_alpha_stat(ds: Dataset, reference: CoefficientSet, estimate: CoefficientSet, l: int,
                            v=None, lambda2: Optional[float] = None, support: Optional[Sequence[int]] = None,
                            nuisance: Optional[np.ndarray] = None, noise_scale: float = 1.0) -> float:
    """Exposure-side counterpart of standardized_beta_stat for alpha[:, l] with the x Gram."""
    idx = _support(reference.alpha[:, l], support)
    v = _direction(v, idx.size)
    if lambda2 is None:
        lambda2 = estimate.penalties.lambda_m2 if estimate.penalties else 0.0
    scales = _column_scales(estimate, "x", idx)
    gram = _restricted_gram(ds.x[:, idx] * scales, nuisance)
    # mediator l stays in its own units so noise_scale keeps its meaning
    deviation = (estimate.alpha[idx, l] - reference.alpha[idx, l]) / scales
    return _sandwich(gram, lambda2, deviation, v) / noise_scale


def standardized_mediation_stat(ds: Dataset, reference: CoefficientSet, estimate: CoefficientSet, k: int,
                                v=None, lambda2: Optional[float] = None, support: Optional[Sequence[int]] = None,
                                nuisance: Optional[np.ndarray] = None, noise_scale: float = 1.0) -> MediationStat:
    """
    Standardized deviation of the indirect-effect column (alpha beta)[:, k] with
    the x Gram, on the exposure scale of the fit. The limiting variance is
    beta_k^T beta_k of the reference.

    The support defaults to the exposures with a nonzero reference indirect
    effect on outcome k, or, when beta_k = 0, to the exposures with any nonzero
    alpha entry.
    """
    ref_indirect = reference.alpha @ reference.beta
    est_indirect = estimate.alpha @ estimate.beta
    if support is None:
        support = np.flatnonzero(ref_indirect[:, k])
        if support.size == 0:
            support = np.flatnonzero(np.any(reference.alpha != 0, axis=1))
    idx = _support(ref_indirect[:, k], support)
    v = _direction(v, idx.size)
    if lambda2 is None:
        lambda2 = estimate.penalties.lambda_m2 if estimate.penalties else 0.0
    scales = _column_scales(estimate, "x", idx)
    gram = _restricted_gram(ds.x[:, idx] * scales, nuisance)
    deviation = (est_indirect[idx, k] - ref_indirect[idx, k]) / scales
    beta_k = reference.beta[:, k]
    value = _sandwich(gram, lambda2, deviation, v) / noise_scale
    return MediationStat(value=value, target_variance=float(beta_k @ beta_k))


# ---------------------------------------------------------------------------
# Bootstrap and sign agreement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapResult:
    """Indirect-effect matrices of the successful bootstrap refits."""
    replicates: np.ndarray
    replicate_ids: Tuple[int, ...]
    requested: int
    failed: int = 0

    def __post_init__(self):
        if self.replicates.ndim != 3 or self.replicates.shape[0] < 2:
            raise ValueError("bootstrap result needs at least two replicate matrices")

    @property
    def replicate_count(self) -> int:
        return self.replicates.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.replicates.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.replicates.std(axis=0, ddof=1)

    @property
    def sign_agreement(self) -> np.ndarray:
        return sign_agreement(self.replicates, 0.0)


def sign_agreement(replicates: np.ndarray, threshold: float) -> np.ndarray:
    """Per entry, the share of replicates whose thresholded sign equals the modal one."""
    signs = np.where(np.abs(replicates) <= threshold, 0, np.sign(replicates)).astype(np.int8)
    counts = np.stack([(signs == s).sum(axis=0) for s in (-1, 0, 1)])
    return counts.max(axis=0) / replicates.shape[0]


def default_stability_threshold(replicates: np.ndarray) -> float:
    return 1e-8 * float(np.max(np.abs(replicates)))


def stability_index(br: BootstrapResult, threshold: Optional[float] = None) -> float:
    """Mean over entries of the modal thresholded-sign agreement; in [0, 1]."""
    if threshold is None:
        threshold = default_stability_threshold(br.replicates)
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    return float(sign_agreement(br.replicates, threshold).mean())


def bootstrap_indirect(ds: Dataset, penalties: PenaltyConfig, opts: Optional[SolverOptions] = None,
                       replicates: int = 10, seed: int = 0, scale: bool = True,
                       exempt_intercept: bool = False, threads: int = 1,
                       progress: bool = False) -> BootstrapResult:
    """
    Pairs bootstrap of the indirect-effect matrix.

    Replicate b resamples n rows with replacement using an RNG seeded from
    (seed, b) and refits the full model. Failed or unconverged refits are
    dropped and counted.

    Raises:
        BootstrapFailureError: more than 20% of replicates failed
    """
    if replicates < 2:
        raise ValueError(f"bootstrap needs at least 2 replicates, got {replicates}")
    opts = opts or SolverOptions()

    def run(b: int) -> Optional[np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        rows = rng.integers(0, ds.n, size=ds.n)
        try:
            coef = fit_mmm(ds.take_rows(rows), penalties, opts, scale=scale, exempt_intercept=exempt_intercept)
        except MMMError as exc:
            logger.info("bootstrap replicate %d failed: %s", b, exc)
            return None
        if not coef.diagnostics.all_converged:
            logger.info("bootstrap replicate %d did not converge", b)
            return None
        return coef.alpha @ coef.beta

    with tqdm(total=replicates, desc="bootstrap", disable=not progress) as bar:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = []
                for result in pool.map(run, range(replicates)):
                    results.append(result)
                    bar.update(1)
        else:
            results = []
            for b in range(replicates):
                results.append(run(b))
                bar.update(1)

    kept = [(b, r) for b, r in enumerate(results) if r is not None]
    failed = replicates - len(kept)
    if failed > MAX_BOOTSTRAP_FAILURE_SHARE * replicates or len(kept) < 2:
        raise BootstrapFailureError(
            f"{failed} of {replicates} bootstrap replicates failed",
            {"failed": failed, "replicates": replicates},
        )
    if failed:
        logger.warning("%d of %d bootstrap replicates dropped", failed, replicates)
    return BootstrapResult(
        replicates=np.stack([r for _, r in kept]),
        replicate_ids=tuple(b for b, _ in kept),
        requested=replicates,
        failed=failed,
    )


def type1_rate(estimate, truth, threshold: float) -> Optional[float]:
    """Share of truly-zero entries whose estimate exceeds the threshold; None without null entries."""
    est = np.asarray(estimate, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape:
        raise ShapeMismatchError(f"estimate shape {est.shape} differs from truth shape {tru.shape}")
    null = tru == 0.0
    if not null.any():
        return None
    return float(np.mean(np.abs(est[null]) > threshold))


# ---------------------------------------------------------------------------
# Diagnostics summary and text report
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticIssue:
    """One diagnostic that could not be computed."""
    field: str
    message: str
    severity: str = "warning"


@dataclass
class DiagnosticsReport:
    """Error bounds, EIC reports and lambda ratios for one fitted model."""
    n: int
    mse_bounds: Dict[int, Optional[float]] = field(default_factory=dict)
    eic: List[EicReport] = field(default_factory=list)
    lambda_ratios: Dict[str, Dict[str, float]] = field(default_factory=dict)
    issues: List[DiagnosticIssue] = field(default_factory=list)

    def add_issue(self, field_name: str, message: str, severity: str = "warning"):
        self.issues.append(DiagnosticIssue(field_name, message, severity))

    @property
    def eic_satisfied(self) -> bool:
        return all(r.satisfied is not False for r in self.eic)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": 1,
            "n": self.n,
            "mse_bounds": [{"outcome": k, "bound": v} for k, v in sorted(self.mse_bounds.items())],
            "eic": [
                {
                    "outcome": r.outcome_index,
                    "mediator": r.mediator_index,
                    "value_beta": r.value_beta,
                    "value_alpha": r.value_alpha,
                    "psi_margin": r.psi_margin,
                    "satisfied": r.satisfied,
                    "support_size_beta": r.support_size_beta,
                    "support_size_alpha": r.support_size_alpha,
                    "rho_beta": r.rho_beta,
                    "rho_alpha": r.rho_alpha,
                    "c_min_beta": r.c_min_beta,
                    "c_min_alpha": r.c_min_alpha,
                }
                for r in self.eic
            ],
            "lambda_ratios": self.lambda_ratios,
            "issues": [{"field": i.field, "message": i.message, "severity": i.severity} for i in self.issues],
        }


def run_diagnostics(ds: Dataset, coef: CoefficientSet, penalties: PenaltyConfig,
                    pairs: Optional[Sequence[Tuple[int, int]]] = None) -> DiagnosticsReport:
    """
    Collect the error bound per outcome, EIC per (k, l) pair (all pairs by
    default) and the lambda ratios. Bounds and EIC are evaluated on the scale
    the penalties were applied to, so a bound refers to the fit-scale beta.
    Per-item failures are recorded as issues.
    """
    report = DiagnosticsReport(n=ds.n, lambda_ratios=lambda_scaling_ratios(penalties, ds.n))
    work, _, beta = _fit_scale(ds, coef)
    for k in range(coef.t):
        try:
            report.mse_bounds[k] = mse_bound_beta(work, beta[:, k], penalties)
        except MMMError as exc:
            report.mse_bounds[k] = None
            report.add_issue(f"mse_bound[{k}]", exc.message)

    if pairs is None:
        pairs = [(k, l) for k in range(coef.t) for l in range(coef.p)]
    for k, l in pairs:
        try:
            report.eic.append(check_eic(ds, coef, penalties, k, l))
        except MMMError as exc:
            report.add_issue(f"eic[{k},{l}]", exc.message)
    logger.info("diagnostics: %d bounds, %d EIC reports, %d issues",
                len(report.mse_bounds), len(report.eic), len(report.issues))
    return report


def generate_diagnostics_report(report: DiagnosticsReport) -> str:
    """Human-readable rendering of a DiagnosticsReport."""
    lines = []
    lines.append("=" * 50)
    lines.append("MEDIATION FIT DIAGNOSTICS")
    lines.append("=" * 50)
    lines.append("")
    lines.append(f"n = {report.n}")

    lines.append("")
    lines.append("BETA ERROR BOUNDS:")
    lines.append("-" * 30)
    for k, bound in sorted(report.mse_bounds.items()):
        shown = "n/a" if bound is None else f"{bound:.6g}"
        lines.append(f"  outcome {k}: {shown}")

    if report.eic:
        failing = [r for r in report.eic if r.satisfied is False]
        lines.append("")
        if failing:
            lines.append(f"✗ EIC violated for {len(failing)} of {len(report.eic)} pairs")
        else:
            lines.append(f"✓ EIC holds for all {len(report.eic)} checked pairs")
        lines.append("-" * 30)
        for r in report.eic:
            margin = "n/a" if r.psi_margin is None else f"{r.psi_margin:.4f}"
            lines.append(f"  (k={r.outcome_index}, l={r.mediator_index}) margin {margin}")

    lines.append("")
    lines.append("LAMBDA RATIOS (lambda/sqrt(n), lambda/n):")
    lines.append("-" * 30)
    for name, ratios in report.lambda_ratios.items():
        lines.append(f"  {name}: {ratios['over_sqrt_n']:.4g}, {ratios['over_n']:.4g}")

    if report.issues:
        lines.append("")
        lines.append(f"ISSUES ({len(report.issues)}):")
        lines.append("-" * 30)
        for issue in report.issues:
            lines.append(f"  ⚠ [{issue.field}] {issue.message}")

    lines.append("")
    lines.append("=" * 50)
    return "\n".join(lines)
