"""
Domain types shared by every module: the aligned data blocks, penalty
configuration, fitted coefficient matrices and the column-scaling record.

Matrices are stored column-major (Fortran order) as read-only float64 arrays.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import (
    DegenerateColumnError,
    DimensionMismatchError,
    EmptyBlockError,
    NonFiniteInputError,
    ShapeMismatchError,
)

INTERCEPT_NAME = "intercept"
BLOCK_PREFIXES = {"x": "x", "m": "m", "y": "y", "z": "z"}


def _frozen(a: np.ndarray) -> np.ndarray:
    """Copy to a column-major float64 array and mark it read-only."""
    out = np.array(a, dtype=np.float64, order="F", copy=True)
    out.setflags(write=False)
    return out


def _as_matrix(name: str, a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"block {name} must be a 2-d matrix, got {arr.ndim} dimensions")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteInputError(
            f"block {name} has a non-finite entry",
            {"row": int(bad[0]), "column": int(bad[1])},
        )
    return arr


class PenaltyConfig(BaseModel):
    """The four elastic-net tuning parameters of the two structural equations."""

    model_config = ConfigDict(frozen=True)

    lambda_m1: float = Field(..., ge=0, description="l1 penalty of the mediator equation")
    lambda_m2: float = Field(..., ge=0, description="squared-l2 penalty of the mediator equation")
    lambda_y1: float = Field(..., ge=0, description="l1 penalty of the outcome equation")
    lambda_y2: float = Field(..., ge=0, description="squared-l2 penalty of the outcome equation")

    @field_validator("lambda_m1", "lambda_m2", "lambda_y1", "lambda_y2")
    @classmethod
    def check_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("penalty must be finite")
        return float(v)

    @classmethod
    def uniform(cls, value: float) -> "PenaltyConfig":
        """All four penalties set to the same value."""
        return cls(lambda_m1=value, lambda_m2=value, lambda_y1=value, lambda_y2=value)

    def mediator_pair(self) -> Tuple[float, float]:
        return self.lambda_m1, self.lambda_m2

    def outcome_pair(self) -> Tuple[float, float]:
        return self.lambda_y1, self.lambda_y2


@dataclass(frozen=True)
class Dataset:
    """
    Aligned exposure/mediator/outcome/covariate blocks for n subjects.

    z always carries the intercept in column 0. m and y are optional so the same
    type serves prediction-only inputs.
    """
    x: np.ndarray
    z: np.ndarray
    m: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    column_names: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return 0 if self.m is None else self.m.shape[1]

    @property
    def t(self) -> int:
        return 0 if self.y is None else self.y.shape[1]

    @property
    def s(self) -> int:
        return self.z.shape[1]

    @property
    def z_covariates(self) -> np.ndarray:
        """Covariates without the intercept column."""
        return self.z[:, 1:]

    def names(self, block: str) -> Tuple[str, ...]:
        return tuple(self.column_names.get(block, ()))

    def mediator_design(self) -> np.ndarray:
        """[x | z], the design of the mediator equation."""
        return np.asfortranarray(np.hstack([self.x, self.z]))

    def outcome_design(self) -> np.ndarray:
        """[m | x | z], the design of the outcome equation."""
        if self.m is None:
            raise DimensionMismatchError("outcome design needs the mediator block")
        return np.asfortranarray(np.hstack([self.m, self.x, self.z]))

    def take_rows(self, rows: Sequence[int]) -> "Dataset":
        """Row subset (with repetition allowed) sharing column metadata."""
        idx = np.asarray(rows, dtype=np.intp)
        return Dataset(
            x=_frozen(self.x[idx]),
            z=_frozen(self.z[idx]),
            m=None if self.m is None else _frozen(self.m[idx]),
            y=None if self.y is None else _frozen(self.y[idx]),
            column_names=self.column_names,
        )


@dataclass(frozen=True)
class StageDiagnostics:
    """Per-column solver diagnostics of one structural equation."""
    iterations: Tuple[int, ...] = ()
    objectives: Tuple[float, ...] = ()
    converged: Tuple[bool, ...] = ()

    @property
    def all_converged(self) -> bool:
        return all(self.converged)

    @classmethod
    def from_reports(cls, reports: Iterable) -> "StageDiagnostics":
        reports = list(reports)
        return cls(
            iterations=tuple(int(r.iterations) for r in reports),
            objectives=tuple(float(r.objective) for r in reports),
            converged=tuple(bool(r.converged) for r in reports),
        )


@dataclass(frozen=True)
class FitDiagnostics:
    mediator_stage: StageDiagnostics = field(default_factory=StageDiagnostics)
    outcome_stage: StageDiagnostics = field(default_factory=StageDiagnostics)

    @property
    def all_converged(self) -> bool:
        return self.mediator_stage.all_converged and self.outcome_stage.all_converged


@dataclass(frozen=True)
class ScalingRecord:
    """
    Column normalization applied before solving.

    A scaled column is c * scale with scale = sqrt(n) / ||c||_2, so every scaled
    column has l2-norm sqrt(n). Means are recorded for reference only; columns
    are not centered.
    """
    x_means: np.ndarray
    x_scales: np.ndarray
    m_means: Optional[np.ndarray] = None
    m_scales: Optional[np.ndarray] = None
    applied: bool = True

    def __post_init__(self):
        for scales in (self.x_scales, self.m_scales):
            if scales is not None and not np.all(scales > 0):
                raise ValueError("scale factors must be strictly positive")

    @classmethod
    def identity(cls, q: int, p: int = 0) -> "ScalingRecord":
        return cls(
            x_means=np.zeros(q),
            x_scales=np.ones(q),
            m_means=np.zeros(p) if p else None,
            m_scales=np.ones(p) if p else None,
            applied=False,
        )

    def _m(self, p: int) -> np.ndarray:
        if self.m_scales is None:
            return np.ones(p)
        return self.m_scales

    # Fitted on (x*fx, m*fm): m = x (fx*alpha_s)/fm + z zeta_s/fm
    def unscale_alpha(self, alpha_s: np.ndarray) -> np.ndarray:
        return alpha_s * self.x_scales[:, None] / self._m(alpha_s.shape[1])[None, :]

    def unscale_zeta(self, zeta_s: np.ndarray) -> np.ndarray:
        return zeta_s / self._m(zeta_s.shape[1])[None, :]

    # y = (m*fm) beta_s + (x*fx) gamma_s + z eta_s
    def unscale_beta(self, beta_s: np.ndarray) -> np.ndarray:
        return beta_s * self._m(beta_s.shape[0])[:, None]

    def unscale_gamma(self, gamma_s: np.ndarray) -> np.ndarray:
        return gamma_s * self.x_scales[:, None]


@dataclass(frozen=True)
class CoefficientSet:
    """The five fitted matrices of the two structural equations plus metadata."""
    alpha: np.ndarray
    zeta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    diagnostics: FitDiagnostics = field(default_factory=FitDiagnostics)
    column_names: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    penalties: Optional[PenaltyConfig] = None
    scaling: Optional[ScalingRecord] = None

    def __post_init__(self):
        q, p = self.alpha.shape
        s = self.zeta.shape[0]
        t = self.beta.shape[1]
        expected = {
            "zeta": ((s, p), self.zeta.shape),
            "beta": ((p, t), self.beta.shape),
            "gamma": ((q, t), self.gamma.shape),
            "eta": ((s, t), self.eta.shape),
        }
        for name, (want, got) in expected.items():
            if want != got:
                raise ShapeMismatchError(f"{name} has shape {got}, expected {want}")
        for name in ("alpha", "zeta", "beta", "gamma", "eta"):
            mat = getattr(self, name)
            if not np.all(np.isfinite(mat)):
                raise NonFiniteInputError(f"coefficient matrix {name} has non-finite entries")
            object.__setattr__(self, name, _frozen(mat))

    @property
    def q(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.alpha.shape[1]

    @property
    def t(self) -> int:
        return self.beta.shape[1]

    @property
    def s(self) -> int:
        return self.zeta.shape[0]

    def replace(self, **changes) -> "CoefficientSet":
        return replace(self, **changes)


def _default_names(prefix: str, count: int) -> Tuple[str, ...]:
    return tuple(f"{prefix}{i + 1}" for i in range(count))


def assemble_dataset(
    x,
    m=None,
    y=None,
    z_covariates=None,
    column_names: Optional[Mapping[str, Sequence[str]]] = None,
) -> Dataset:
    """
    Validate blocks and build a Dataset with the intercept prepended to z.

    Args:
        x: n x q exposures
        m: optional n x p mediators
        y: optional n x T outcomes
        z_covariates: optional n x (s-1) covariates, without intercept
        column_names: optional labels per block ('x', 'm', 'y', 'z'); the 'z'
            labels name the covariates only

    Raises:
        DimensionMismatchError, NonFiniteInputError, EmptyBlockError
    """
    column_names = dict(column_names or {})
    x_arr = _as_matrix("x", x)
    n = x_arr.shape[0]
    if n < 1:
        raise DimensionMismatchError("dataset needs at least one row")
    if x_arr.shape[1] == 0:
        raise EmptyBlockError("exposure block x has no columns")

    blocks: Dict[str, Optional[np.ndarray]] = {"m": None, "y": None}
    for name, raw in (("m", m), ("y", y)):
        if raw is None:
            continue
        arr = _as_matrix(name, raw)
        if arr.shape[0] != n:
            raise DimensionMismatchError(f"block {name} has {arr.shape[0]} rows, x has {n}")
        if arr.shape[1] == 0:
            raise EmptyBlockError(f"block {name} has no columns")
        blocks[name] = arr

    if z_covariates is None:
        cov = np.empty((n, 0))
    else:
        cov = _as_matrix("z", z_covariates)
        if cov.shape[0] != n:
            raise DimensionMismatchError(f"block z has {cov.shape[0]} rows, x has {n}")
    z = np.hstack([np.ones((n, 1)), cov])

    names: Dict[str, Tuple[str, ...]] = {}
    for block, width in (("x", x_arr.shape[1]), ("m", blocks["m"]), ("y", blocks["y"]), ("z", cov.shape[1])):
        if not isinstance(width, int):
            if width is None:
                continue
            width = width.shape[1]
        given = column_names.get(block)
        if given is None:
            labels = _default_names(BLOCK_PREFIXES[block], width)
        else:
            labels = tuple(str(v) for v in given)
            if len(labels) != width:
                raise DimensionMismatchError(
                    f"{len(labels)} column names given for block {block} with {width} columns"
                )
        if block == "z":
            labels = (INTERCEPT_NAME,) + labels
        names[block] = labels

    return Dataset(
        x=_frozen(x_arr),
        z=_frozen(z),
        m=None if blocks["m"] is None else _frozen(blocks["m"]),
        y=None if blocks["y"] is None else _frozen(blocks["y"]),
        column_names=names,
    )


def _normalize(name: str, block: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = block.shape[0]
    norms = np.linalg.norm(block, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateColumnError(
            f"column of block {name} has zero l2-norm",
            {"block": name, "column": int(zero[0])},
        )
    scales = math.sqrt(n) / norms
    return block * scales[None, :], block.mean(axis=0), scales


def scale_columns(ds: Dataset) -> Tuple[Dataset, ScalingRecord]:
    """
    Normalize every exposure and mediator column to l2-norm sqrt(n).

    The intercept and the other covariates are left untouched; so is y.

    Raises:
        DegenerateColumnError: a column is identically zero
    """
    x_s, x_means, x_scales = _normalize("x", ds.x)
    m_s = m_means = m_scales = None
    if ds.m is not None:
        m_s, m_means, m_scales = _normalize("m", ds.m)
    scaled = Dataset(
        x=_frozen(x_s),
        z=ds.z,
        m=None if m_s is None else _frozen(m_s),
        y=ds.y,
        column_names=ds.column_names,
    )
    record = ScalingRecord(
        x_means=x_means,
        x_scales=x_scales,
        m_means=m_means,
        m_scales=m_scales,
        applied=True,
    )
    return scaled, record


def unscale_coefficients(coef: CoefficientSet, rec: ScalingRecord) -> CoefficientSet:
    """
    Map coefficients fitted on scaled columns back to the original data scale.

    Raises:
        ShapeMismatchError: the record does not match the coefficient shapes
    """
    if rec.x_scales.shape != (coef.q,):
        raise ShapeMismatchError(f"record has {rec.x_scales.shape[0]} exposure scales, coefficients have q={coef.q}")
    if rec.m_scales is not None and rec.m_scales.shape != (coef.p,):
        raise ShapeMismatchError(f"record has {rec.m_scales.shape[0]} mediator scales, coefficients have p={coef.p}")
    return coef.replace(
        alpha=rec.unscale_alpha(coef.alpha),
        zeta=rec.unscale_zeta(coef.zeta),
        beta=rec.unscale_beta(coef.beta),
        gamma=rec.unscale_gamma(coef.gamma),
        eta=coef.eta,
        scaling=rec,
    )
