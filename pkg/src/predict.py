"""
Out-of-sample prediction from a fitted mediation model, baseline comparators
and evaluation metrics.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import stats

from .core_types import Dataset, CoefficientSet, scale_columns
from .errors import (
    DimensionMismatchError,
    HeaderMismatchError,
    MissingBlockError,
    ShapeMismatchError,
    TooFewRowsError,
)
from .estimator import stage_mask
from .solver import SolverOptions, fit_multiresponse

logger = logging.getLogger(__name__)


class PredictionMode(str, Enum):
    MEDIATED = "mediated"
    OBSERVED_MEDIATOR = "observed_mediator"
    DIRECT = "direct"
    MEDIATOR_ONLY = "mediator_only"


@dataclass(frozen=True)
class PredictionResult:
    predicted_outcomes: np.ndarray
    mode: PredictionMode
    predicted_mediators: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("predicted_outcomes", "predicted_mediators"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")


def _matrix(name: str, a, rows: Optional[int], cols: int) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        # a vector is one observation unless the block has a single column
        single_row = arr.shape[0] == cols and rows in (None, 1)
        arr = arr.reshape(1, -1) if single_row or cols != 1 else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != cols or (rows is not None and arr.shape[0] != rows):
        want = f"({rows if rows is not None else 'N'}, {cols})"
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {want}")
    return arr


def _check_exposures(coef: CoefficientSet, x_new, z_new) -> Tuple[np.ndarray, np.ndarray]:
    x = _matrix("x_new", x_new, None, coef.q)
    z = _matrix("z_new", z_new, x.shape[0], coef.s)
    if not np.all(z[:, 0] == 1.0):
        raise DimensionMismatchError("z_new column 0 must be the all-ones intercept")
    return x, z


def predict_mediators(coef: CoefficientSet, x_new, z_new) -> np.ndarray:
    """m_hat = x_new alpha + z_new zeta."""
    x, z = _check_exposures(coef, x_new, z_new)
    return x @ coef.alpha + z @ coef.zeta


def predict_outcomes(coef: CoefficientSet, x_new, z_new) -> PredictionResult:
    """Two-step prediction: mediators from exposures, then outcomes from the predicted mediators."""
    x, z = _check_exposures(coef, x_new, z_new)
    m_hat = x @ coef.alpha + z @ coef.zeta
    y_hat = m_hat @ coef.beta + x @ coef.gamma + z @ coef.eta
    return PredictionResult(predicted_outcomes=y_hat, mode=PredictionMode.MEDIATED, predicted_mediators=m_hat)


def predict_outcomes_observed_m(coef: CoefficientSet, m_new, x_new, z_new) -> PredictionResult:
    """Outcome prediction with measured mediators in place of predicted ones."""
    x, z = _check_exposures(coef, x_new, z_new)
    m = _matrix("m_new", m_new, x.shape[0], coef.p)
    y_hat = m @ coef.beta + x @ coef.gamma + z @ coef.eta
    return PredictionResult(predicted_outcomes=y_hat, mode=PredictionMode.OBSERVED_MEDIATOR, predicted_mediators=m)


def check_column_names(expected: Mapping[str, Tuple[str, ...]], ds: Dataset,
                       blocks: Tuple[str, ...] = ("x", "z")) -> None:
    """
    Refuse data whose block headers differ from the training metadata.

    Raises:
        HeaderMismatchError
    """
    for block in blocks:
        want = tuple(expected.get(block, ()))
        got = ds.names(block)
        if want and got != want:
            raise HeaderMismatchError(
                f"columns of block {block} do not match training data: expected {list(want)}, got {list(got)}",
                {"block": block},
            )


@dataclass(frozen=True)
class BaselineModel:
    """Single-equation comparator: y on [x | z] (exposure_only) or on [m | z] (mediator_only)."""
    kind: PredictionMode
    coefficients: np.ndarray
    column_names: Mapping[str, Tuple[str, ...]]

    def predict(self, ds: Dataset) -> PredictionResult:
        design = _baseline_design(ds, self.kind)
        if design.shape[1] != self.coefficients.shape[0]:
            raise DimensionMismatchError(
                f"baseline expects {self.coefficients.shape[0]} design columns, got {design.shape[1]}"
            )
        return PredictionResult(predicted_outcomes=design @ self.coefficients, mode=self.kind)


BASELINE_KINDS = {"exposure_only": PredictionMode.DIRECT, "mediator_only": PredictionMode.MEDIATOR_ONLY}


def _baseline_design(ds: Dataset, mode: PredictionMode) -> np.ndarray:
    if mode is PredictionMode.DIRECT:
        return ds.mediator_design()
    if ds.m is None:
        raise MissingBlockError("mediator-only baseline needs the mediator block")
    return np.asfortranarray(np.hstack([ds.m, ds.z]))


def fit_baseline(ds: Dataset, kind: str, lambda1: float, lambda2: float,
                 opts: Optional[SolverOptions] = None, scale: bool = True,
                 exempt_intercept: bool = False) -> BaselineModel:
    """Fit one of the single-equation baselines with the elastic-net solver."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}, expected one of {sorted(BASELINE_KINDS)}")
    if ds.y is None:
        raise MissingBlockError("baseline fit needs the outcome block")
    mode = BASELINE_KINDS[kind]
    work, record = scale_columns(ds) if scale else (ds, None)
    design = _baseline_design(work, mode)
    leading = design.shape[1] - ds.s
    opts = (opts or SolverOptions()).with_mask(stage_mask(leading, ds.s, exempt_intercept))
    coef, _ = fit_multiresponse(design, ds.y, lambda1, lambda2, opts)
    if record is not None:
        factors = record.x_scales if mode is PredictionMode.DIRECT else record.m_scales
        coef[:leading] *= factors[:, None]
    return BaselineModel(kind=mode, coefficients=coef, column_names=ds.column_names)


def evaluate_regression(pred, truth) -> List[Dict[str, Optional[float]]]:
    """Per-outcome RMSE and Pearson correlation (None for a constant column)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(-1, 1)
    if t.ndim == 1:
        t = t.reshape(-1, 1)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"prediction shape {p.shape} differs from truth shape {t.shape}")
    if p.shape[0] < 2:
        raise TooFewRowsError("regression metrics need at least 2 rows")
    out = []
    for col in range(p.shape[1]):
        a, b = p[:, col], t[:, col]
        rmse = float(np.sqrt(np.mean((a - b) ** 2)))
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            r = None
        else:
            r = float(stats.pearsonr(a, b)[0])
        out.append({"rmse": rmse, "pearson_correlation": r})
    return out


def is_binary(column) -> bool:
    values = np.unique(np.asarray(column))
    return values.size > 0 and bool(np.all(np.isin(values, (0.0, 1.0))))


def evaluate_binary(pred_scores, truth_labels, cut: float = 0.5) -> Dict[str, Optional[float]]:
    """
    Accuracy of (score >= cut) against 0/1 labels and the rank AUC, ties
    counting one half. AUC is None when only one class is present.
    """
    scores = np.asarray(pred_scores, dtype=np.float64).ravel()
    labels = np.asarray(truth_labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ShapeMismatchError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if not is_binary(labels):
        raise ValueError("labels must be 0 or 1")
    accuracy = float(np.mean((scores >= cut) == (labels == 1.0)))

    positives = labels == 1.0
    n1 = int(positives.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        logger.info("AUC undefined: only one class among %d labels", labels.size)
        return {"accuracy": accuracy, "auc": None}
    ranks = stats.rankdata(scores)
    auc = (ranks[positives].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0)
    return {"accuracy": accuracy, "auc": float(auc)}
