"""
Monte Carlo harness: block-sparse ground truth, the data-generating mechanism,
recovery metrics and the (n, sigma) experiment grid.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg, stats
from tqdm import tqdm

from .core_types import CoefficientSet, Dataset, PenaltyConfig, assemble_dataset
from .cross_validation import PenaltyGrid, cv_select
from .errors import (
    BlockOutOfRangeError,
    BootstrapFailureError,
    CellAbortedError,
    MMMError,
    ShapeMismatchError,
    ZeroTruthNormError,
)
from .estimator import fit_mmm
from .inference import (
    bootstrap_indirect,
    stability_index,
    standardized_beta_stat,
    standardized_mediation_stat,
    type1_rate,
)
from .solver import SolverOptions

logger = logging.getLogger(__name__)

AGE_MEAN = 70.0
AGE_SD = 8.0
AGE_BOUNDS = (50.0, 95.0)

METRICS = (
    "nrmse_alpha", "nrmse_beta", "nrmse_indirect",
    "error_alpha", "error_beta", "error_indirect",
    "corr_alpha", "corr_beta", "corr_indirect",
    "type1_alpha", "type1_beta",
)


class Block(BaseModel):
    """A rectangular block [rows) x [cols) filled with one value."""

    model_config = ConfigDict(frozen=True)

    rows: Tuple[int, int]
    cols: Tuple[int, int]
    value: float = 1.0

    @field_validator("rows", "cols")
    @classmethod
    def check_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        start, stop = v
        if start < 0 or stop <= start:
            raise ValueError(f"range {v} must satisfy 0 <= start < stop")
        return v


DEFAULT_ALPHA_BLOCKS = (Block(rows=(0, 5), cols=(0, 5)), Block(rows=(5, 10), cols=(5, 10)))
DEFAULT_BETA_BLOCKS = (Block(rows=(0, 5), cols=(0, 3)), Block(rows=(5, 10), cols=(3, 6)))
DEFAULT_GAMMA_BLOCKS = (Block(rows=(10, 14), cols=(6, 9), value=0.2),)


class BlockSpec(BaseModel):
    """Nonzero pattern of the true coefficient matrices."""

    model_config = ConfigDict(frozen=True)

    alpha: Tuple[Block, ...] = DEFAULT_ALPHA_BLOCKS
    beta: Tuple[Block, ...] = DEFAULT_BETA_BLOCKS
    gamma: Tuple[Block, ...] = DEFAULT_GAMMA_BLOCKS
    zeta_value: float = 0.1
    eta_value: float = 0.1

    @classmethod
    def empty(cls) -> "BlockSpec":
        """No mediation: alpha, beta and gamma all zero."""
        return cls(alpha=(), beta=(), gamma=())


class SimConfig(BaseModel):
    """
    Data-generating mechanism of one simulation cell.

    `s` counts the substantive covariates (age, sex, then standard-normal
    extras); the generated z carries s + 1 columns with the intercept.
    """

    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=2)
    q: int = Field(20, ge=1)
    p: int = Field(20, ge=1)
    t: int = Field(10, ge=1)
    s: int = Field(2, ge=0)
    sigma: float = Field(..., gt=0)
    rho: float = Field(0.5, ge=0, lt=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    block_spec: BlockSpec = Field(default_factory=BlockSpec)
    outcome_sigma: Optional[float] = Field(None, gt=0, description="Outcome noise sd; sigma^2 when unset")

    @model_validator(mode="after")
    def check_finite(self) -> "SimConfig":
        if not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite")
        return self

    @property
    def outcome_noise(self) -> float:
        return self.outcome_sigma if self.outcome_sigma is not None else self.sigma ** 2

    def with_cell(self, n: int, sigma: float, seed: int) -> "SimConfig":
        return SimConfig.model_validate({**self.model_dump(), "n": n, "sigma": sigma, "seed": seed})


@dataclass(frozen=True)
class GroundTruth:
    alpha0: np.ndarray
    beta0: np.ndarray
    gamma0: np.ndarray
    zeta0: np.ndarray
    eta0: np.ndarray

    @property
    def indirect0(self) -> np.ndarray:
        return self.alpha0 @ self.beta0

    def as_coefficients(self) -> CoefficientSet:
        return CoefficientSet(alpha=self.alpha0, zeta=self.zeta0, beta=self.beta0,
                              gamma=self.gamma0, eta=self.eta0)


def _fill(name: str, shape: Tuple[int, int], blocks: Sequence[Block]) -> np.ndarray:
    out = np.zeros(shape)
    for block in blocks:
        if block.rows[1] > shape[0] or block.cols[1] > shape[1]:
            raise BlockOutOfRangeError(
                f"block rows {block.rows} cols {block.cols} outside {name} of shape {shape}",
                {"matrix": name},
            )
        out[block.rows[0]:block.rows[1], block.cols[0]:block.cols[1]] = block.value
    return out


def generate_truth(cfg: SimConfig) -> GroundTruth:
    """Block-sparse alpha0, beta0, gamma0 and dense zeta0, eta0 from the block spec."""
    spec = cfg.block_spec
    s = cfg.s + 1
    return GroundTruth(
        alpha0=_fill("alpha", (cfg.q, cfg.p), spec.alpha),
        beta0=_fill("beta", (cfg.p, cfg.t), spec.beta),
        gamma0=_fill("gamma", (cfg.q, cfg.t), spec.gamma),
        zeta0=np.full((s, cfg.p), spec.zeta_value),
        eta0=np.full((s, cfg.t), spec.eta_value),
    )


def _covariates(n: int, s: int, rng: np.random.Generator) -> Tuple[np.ndarray, Tuple[str, ...]]:
    lo, hi = ((b - AGE_MEAN) / AGE_SD for b in AGE_BOUNDS)
    columns = []
    names = []
    if s >= 1:
        columns.append(stats.truncnorm.rvs(lo, hi, loc=AGE_MEAN, scale=AGE_SD, size=n, random_state=rng))
        names.append("age")
    if s >= 2:
        columns.append(rng.binomial(1, 0.5, size=n).astype(np.float64))
        names.append("sex")
    for extra in range(2, s):
        columns.append(rng.standard_normal(n))
        names.append(f"z{extra + 1}")
    if not columns:
        return np.empty((n, 0)), ()
    return np.column_stack(columns), tuple(names)


def generate_dataset(truth: GroundTruth, cfg: SimConfig, rng: Optional[np.random.Generator] = None) -> Dataset:
    """
    Draw one dataset:

        z = [1 | age | sex], age ~ N(70, 8^2) truncated to [50, 95], sex ~ Bernoulli(0.5)
        x ~ N(0, Sigma) row-wise with Sigma_ij = rho^|i-j|
        m = x alpha0 + z zeta0 + sigma E
        y = m beta0 + x gamma0 + z eta0 + outcome_noise Xi
    """
    if truth.alpha0.shape != (cfg.q, cfg.p) or truth.beta0.shape != (cfg.p, cfg.t):
        raise ShapeMismatchError("ground truth does not match the configured dimensions")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n = cfg.n

    covariates, cov_names = _covariates(n, cfg.s, rng)
    lags = np.abs(np.subtract.outer(np.arange(cfg.q), np.arange(cfg.q)))
    chol = linalg.cholesky(cfg.rho ** lags, lower=True)
    x = rng.standard_normal((n, cfg.q)) @ chol.T
    z = np.hstack([np.ones((n, 1)), covariates])

    m = x @ truth.alpha0 + z @ truth.zeta0 + cfg.sigma * rng.standard_normal((n, cfg.p))
    y = (m @ truth.beta0 + x @ truth.gamma0 + z @ truth.eta0
         + cfg.outcome_noise * rng.standard_normal((n, cfg.t)))
    return assemble_dataset(x, m, y, covariates, column_names={"z": cov_names})


def nrmse(estimate, truth) -> float:
    """||estimate - truth||_F / ||truth||_F."""
    est, tru = _pair(estimate, truth)
    denom = float(np.linalg.norm(tru))
    if denom == 0.0:
        raise ZeroTruthNormError("NRMSE is undefined for an all-zero truth")
    return float(np.linalg.norm(est - tru)) / denom


def matrix_correlation(estimate, truth) -> Optional[float]:
    """Pearson correlation of the flattened matrices; None if either is constant."""
    est, tru = _pair(estimate, truth)
    a, b = est.ravel(), tru.ravel()
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(stats.pearsonr(a, b)[0])


def _pair(estimate, truth) -> Tuple[np.ndarray, np.ndarray]:
    est = np.asarray(estimate, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape:
        raise ShapeMismatchError(f"estimate shape {est.shape} differs from truth shape {tru.shape}")
    return est, tru


def recovery_metrics(coef: CoefficientSet, truth: GroundTruth, type1_threshold: float) -> Dict[str, Optional[float]]:
    """Error, correlation and Type-I metrics of one fit against the truth."""
    pairs = {
        "alpha": (coef.alpha, truth.alpha0),
        "beta": (coef.beta, truth.beta0),
        "indirect": (coef.alpha @ coef.beta, truth.indirect0),
    }
    out: Dict[str, Optional[float]] = {}
    for name, (est, tru) in pairs.items():
        out[f"error_{name}"] = float(np.linalg.norm(est - tru))
        try:
            out[f"nrmse_{name}"] = nrmse(est, tru)
        except ZeroTruthNormError:
            out[f"nrmse_{name}"] = None
        out[f"corr_{name}"] = matrix_correlation(est, tru)
    out["type1_alpha"] = type1_rate(coef.alpha, truth.alpha0, type1_threshold)
    out["type1_beta"] = type1_rate(coef.beta, truth.beta0, type1_threshold)
    return out


class _ReplicateOutcome(NamedTuple):
    metrics: Dict[str, Optional[float]]
    beta_stat: Optional[float]
    mediation_stat: Optional[float]
    converged: bool


@dataclass(frozen=True)
class SimCell:
    """Averaged metrics of one (n, sigma) configuration."""
    n: int
    sigma: float
    replicates: int
    penalties: PenaltyConfig
    metrics: Dict[str, Optional[float]]
    per_replicate: Dict[str, Tuple[Optional[float], ...]]
    stability: Optional[float] = None
    qq_samples: Tuple[float, ...] = ()
    qq_mediation: Tuple[float, ...] = ()
    failures: Tuple[Tuple[int, str], ...] = ()
    nonconverged: int = 0

    def median(self, metric: str) -> Optional[float]:
        values = [v for v in self.per_replicate.get(metric, ()) if v is not None]
        return float(np.median(values)) if values else None

    def rows(self) -> List[Tuple[int, float, str, Optional[float]]]:
        out = [(self.n, self.sigma, name, self.metrics.get(name)) for name in METRICS]
        out.append((self.n, self.sigma, "stability", self.stability))
        out.append((self.n, self.sigma, "failed_replicates", float(len(self.failures))))
        return out


def _truth_support_stats(ds: Dataset, coef: CoefficientSet, truth: GroundTruth, cfg: SimConfig,
                         k: int) -> Tuple[Optional[float], Optional[float]]:
    reference = truth.as_coefficients()
    beta_value = mediation_value = None

    support = np.flatnonzero(truth.beta0[:, k])
    if support.size:
        others = np.setdiff1d(np.arange(ds.p), support)
        nuisance = np.hstack([ds.m[:, others], ds.x, ds.z])
        try:
            beta_value = standardized_beta_stat(ds, reference, coef, k, support=support,
                                                nuisance=nuisance, noise_scale=cfg.outcome_noise)
        except MMMError as exc:
            logger.debug("beta statistic skipped: %s", exc)

    rows = np.flatnonzero(truth.indirect0[:, k])
    if rows.size:
        others = np.setdiff1d(np.arange(ds.q), rows)
        nuisance = np.hstack([ds.x[:, others], ds.z])
        try:
            stat = standardized_mediation_stat(ds, reference, coef, k, support=rows,
                                               nuisance=nuisance, noise_scale=cfg.sigma)
            mediation_value = stat.studentized
        except MMMError as exc:
            logger.debug("mediation statistic skipped: %s", exc)
    return beta_value, mediation_value


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, replicate]))


def run_cell(truth: GroundTruth, cfg: SimConfig, penalties: Optional[PenaltyConfig] = None,
             grid: Optional[PenaltyGrid] = None,
             replicates: int = 1, seed: Optional[int] = None, opts: Optional[SolverOptions] = None,
             folds: int = 5, bootstrap_b: int = 10, type1_threshold: float = 1e-8,
             stability_threshold: Optional[float] = None, exempt_intercept: bool = False,
             threads: int = 1, progress: bool = False, qq_outcome: int = 0) -> SimCell:
    """
    Generate, fit and score `replicates` independent datasets of one cell.

    Penalties default to a cross-validated choice on replicate 0, frozen for
    the cell; a plain (mediator, outcome) pair is taken as an absolute grid.
    Bootstrap stability is computed on replicate 0 with
    `bootstrap_b` refits (skipped when below 2). The truth-support beta and
    mediation statistics of outcome `qq_outcome` are collected per replicate.

    Raises:
        CellAbortedError: no replicate could be fit, or penalty selection failed
    """
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    seed = cfg.seed if seed is None else seed
    opts = opts or SolverOptions()

    first = generate_dataset(truth, cfg, replicate_rng(seed, 0))
    if penalties is None:
        if grid is None:
            raise ValueError("either penalties or a cross-validation grid is required")
        grid = grid if isinstance(grid, PenaltyGrid) else PenaltyGrid(*grid)
        try:
            penalties = cv_select(first, grid.mediator, grid.outcome, folds=folds, seed=seed, opts=opts,
                                  exempt_intercept=exempt_intercept, relative=grid.relative)
        except MMMError as exc:
            raise CellAbortedError(f"penalty selection failed: {exc}", {"n": cfg.n, "sigma": cfg.sigma}) from exc

    def run(r: int):
        ds = first if r == 0 else generate_dataset(truth, cfg, replicate_rng(seed, r))
        try:
            coef = fit_mmm(ds, penalties, opts, exempt_intercept=exempt_intercept)
        except MMMError as exc:
            return r, str(exc)
        beta_value, mediation_value = _truth_support_stats(ds, coef, truth, cfg, qq_outcome)
        return r, _ReplicateOutcome(
            metrics=recovery_metrics(coef, truth, type1_threshold),
            beta_stat=beta_value,
            mediation_stat=mediation_value,
            converged=coef.diagnostics.all_converged,
        )

    with tqdm(total=replicates, desc=f"n={cfg.n} sigma={cfg.sigma:g}", disable=not progress) as bar:
        results = []
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for result in pool.map(run, range(replicates)):
                    results.append(result)
                    bar.update(1)
        else:
            for r in range(replicates):
                results.append(run(r))
                bar.update(1)

    outcomes = [(r, o) for r, o in results if isinstance(o, _ReplicateOutcome)]
    failures = tuple((r, o) for r, o in results if isinstance(o, str))
    for r, message in failures:
        logger.warning("n=%d sigma=%g replicate %d failed: %s", cfg.n, cfg.sigma, r, message)
    if not outcomes:
        raise CellAbortedError("every replicate failed", {"n": cfg.n, "sigma": cfg.sigma})

    per_replicate = {name: tuple(o.metrics[name] for _, o in outcomes) for name in METRICS}
    means: Dict[str, Optional[float]] = {}
    for name, values in per_replicate.items():
        kept = [v for v in values if v is not None]
        means[name] = float(np.mean(kept)) if kept else None

    stability = None
    if bootstrap_b >= 2:
        try:
            br = bootstrap_indirect(first, penalties, opts, bootstrap_b, seed=seed,
                                    exempt_intercept=exempt_intercept, threads=threads)
            stability = stability_index(br, stability_threshold)
        except BootstrapFailureError as exc:
            logger.warning("n=%d sigma=%g: %s", cfg.n, cfg.sigma, exc)

    cell = SimCell(
        n=cfg.n,
        sigma=cfg.sigma,
        replicates=replicates,
        penalties=penalties,
        metrics=means,
        per_replicate=per_replicate,
        stability=stability,
        qq_samples=tuple(o.beta_stat for _, o in outcomes if o.beta_stat is not None),
        qq_mediation=tuple(o.mediation_stat for _, o in outcomes if o.mediation_stat is not None),
        failures=failures,
        nonconverged=sum(not o.converged for _, o in outcomes),
    )
    logger.info("cell n=%d sigma=%g: %s, stability=%s", cfg.n, cfg.sigma,
                {k: v for k, v in means.items() if k.startswith("nrmse")}, stability)
    return cell


class CellFailure(NamedTuple):
    n: int
    sigma: float
    message: str


def cell_seed(seed: int, n: int, sigma: float) -> int:
    """Per-cell seed derived from (seed, n, bit pattern of sigma)."""
    sigma_bits = int(np.float64(sigma).view(np.uint64))
    state = np.random.SeedSequence([seed, n, sigma_bits]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class SimResult:
    cells: Tuple[SimCell, ...]
    aborted: Tuple[CellFailure, ...] = ()

    def cell(self, n: int, sigma: float) -> Optional[SimCell]:
        for c in self.cells:
            if c.n == n and c.sigma == sigma:
                return c
        return None

    def rows(self) -> List[Tuple[int, float, str, Optional[float]]]:
        return [row for c in self.cells for row in c.rows()]

    def qq_rows(self) -> List[Tuple[int, float, str, int, float]]:
        out = []
        for c in self.cells:
            out.extend((c.n, c.sigma, "beta", i, v) for i, v in enumerate(c.qq_samples))
            out.extend((c.n, c.sigma, "mediation", i, v) for i, v in enumerate(c.qq_mediation))
        return out

    def trend_report(self, metric: str = "nrmse_indirect", allowed_rise: float = 0.05) -> Dict[float, Dict[str, Any]]:
        """
        Per sigma, replicate medians of `metric` ordered by n and whether they
        are non-increasing up to one rise of at most `allowed_rise` (relative).
        """
        report: Dict[float, Dict[str, Any]] = {}
        for sigma in sorted({c.sigma for c in self.cells}):
            cells = sorted((c for c in self.cells if c.sigma == sigma), key=lambda c: c.n)
            medians = [c.median(metric) for c in cells]
            rises = []
            for prev, cur in zip(medians, medians[1:]):
                if prev is not None and cur is not None and cur > prev:
                    rises.append((cur - prev) / prev if prev > 0 else math.inf)
            ok = len(rises) == 0 or (len(rises) == 1 and rises[0] <= allowed_rise)
            report[sigma] = {"n": [c.n for c in cells], "median": medians, "non_increasing": ok}
        return report


def run_grid(truth: GroundTruth, cfg_template: SimConfig, n_list: Sequence[int], sigma_list: Sequence[float],
             penalties: Optional[PenaltyConfig] = None,
             grid: Optional[PenaltyGrid] = None,
             replicates: int = 1, seed: Optional[int] = None, **cell_options) -> SimResult:
    """
    Run every (n, sigma) cell of the grid. Each cell gets a seed derived from
    (seed, n, sigma); aborted cells are recorded and the grid continues.
    """
    if not n_list or not sigma_list:
        raise ValueError("n_list and sigma_list must be non-empty")
    seed = cfg_template.seed if seed is None else seed
    cells: List[SimCell] = []
    aborted: List[CellFailure] = []
    for n in n_list:
        for sigma in sigma_list:
            derived = cell_seed(seed, n, sigma)
            cfg = cfg_template.with_cell(n, sigma, derived)
            try:
                cells.append(run_cell(truth, cfg, penalties, grid, replicates, derived, **cell_options))
            except MMMError as exc:
                logger.error("cell n=%d sigma=%g aborted: %s", n, sigma, exc)
                aborted.append(CellFailure(n, float(sigma), str(exc)))

    result = SimResult(cells=tuple(cells), aborted=tuple(aborted))
    noisy = result.cell(100, 500)
    if noisy is not None and noisy.metrics.get("nrmse_indirect") is not None and noisy.metrics.get("nrmse_alpha") is not None:
        logger.info(
            "observation at n=100 sigma=500: nrmse_indirect=%.4g, nrmse_alpha=%.4g (indirect %s alpha)",
            noisy.metrics["nrmse_indirect"], noisy.metrics["nrmse_alpha"],
            ">=" if noisy.metrics["nrmse_indirect"] >= noisy.metrics["nrmse_alpha"] else "<",
        )
    for sigma, entry in result.trend_report().items():
        if not entry["non_increasing"]:
            logger.info("nrmse_indirect medians not monotone in n at sigma=%g: %s", sigma, entry["median"])
    return result
