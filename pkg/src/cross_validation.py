"""
Stage-wise K-fold cross-validation over elastic-net penalty grids.

Stage 1 pairs are scored by held-out mediator MSE of [x | z] -> m; stage 2 pairs
by held-out outcome MSE of [m | x | z] -> y, using observed mediators
("observed" mode) or mediators predicted by the selected stage-1 fit
("mediated" mode).

Fold assignment shuffles the rows with a Fisher-Yates pass driven by a
splitmix64 stream seeded with the run seed, so folds are reproducible across
platforms and numpy versions.
"""
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .core_types import Dataset, PenaltyConfig, ScalingRecord, scale_columns
from .errors import GridEmptyError, MissingBlockError, TooFewRowsError
from .estimator import fit_mediator_equation, fit_outcome_equation, stage_mask
from .solver import SolverOptions, lambda_max

logger = logging.getLogger(__name__)

CV_MODES = ("observed", "mediated")

PenaltyPair = Tuple[float, float]

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 generator over a 64-bit state."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection, without modulo bias."""
        limit = _MASK64 - (_MASK64 + 1) % bound
        while True:
            value = self.next()
            if value <= limit:
                return value % bound


def shuffled_rows(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n) from a splitmix64 stream."""
    gen = SplitMix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = gen.below(i + 1)
        order[i], order[j] = order[j], order[i]
    return np.asarray(order, dtype=np.intp)


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """
    Fold id per row: the shuffled rows cut into `folds` contiguous blocks
    whose sizes differ by at most one.
    """
    order = shuffled_rows(n, seed)
    assignment = np.empty(n, dtype=np.intp)
    for fold, block in enumerate(np.array_split(order, folds)):
        assignment[block] = fold
    return assignment


class PenaltyGrid(NamedTuple):
    """
    Candidate (lambda1, lambda2) pairs per stage.

    With relative=True a pair (f, r) stands for lambda1 = f * lambda_max of the
    stage on the full data and lambda2 = r * n, both on the fit scale.
    """
    mediator: List[PenaltyPair]
    outcome: List[PenaltyPair]
    relative: bool = False


def resolve_grid(ds: Dataset, grid: PenaltyGrid, scale: bool = True,
                 exempt_intercept: bool = False) -> PenaltyGrid:
    """Absolute penalties for a relative grid; absolute grids pass through."""
    if not grid.relative:
        return grid
    if ds.m is None or ds.y is None:
        raise MissingBlockError("relative penalty grid needs mediator and outcome blocks")
    work = scale_columns(ds)[0] if scale else ds
    top_m = lambda_max(work.mediator_design(), work.m, stage_mask(ds.q, ds.s, exempt_intercept))
    top_y = lambda_max(work.outcome_design(), work.y, stage_mask(ds.p + ds.q, ds.s, exempt_intercept))
    n = ds.n

    def absolute(pairs: Sequence[PenaltyPair], top: float) -> List[PenaltyPair]:
        return [(float(f) * top, float(r) * n) for f, r in pairs]

    resolved = PenaltyGrid(absolute(grid.mediator, top_m), absolute(grid.outcome, top_y), relative=False)
    logger.debug("relative grid resolved with lambda_max %.4g (mediator) and %.4g (outcome)", top_m, top_y)
    return resolved


@dataclass(frozen=True)
class CvResult:
    penalties: PenaltyConfig
    grid_m: Tuple[PenaltyPair, ...]
    grid_y: Tuple[PenaltyPair, ...]
    scores_m: Tuple[float, ...]
    scores_y: Tuple[float, ...]
    mode: str = "observed"


def _select(grid: Sequence[PenaltyPair], scores: Sequence[float]) -> PenaltyPair:
    # lowest score; ties go to the larger lambda1 + lambda2, then to grid order
    best = min(range(len(grid)), key=lambda i: (scores[i], -(grid[i][0] + grid[i][1]), i))
    return grid[best]


def _validate_grid(name: str, grid: Sequence[PenaltyPair]) -> Tuple[PenaltyPair, ...]:
    if not grid:
        raise GridEmptyError(f"{name} penalty grid is empty")
    pairs = tuple((float(l1), float(l2)) for l1, l2 in grid)
    for l1, l2 in pairs:
        if not (l1 >= 0 and l2 >= 0 and np.isfinite(l1) and np.isfinite(l2)):
            raise ValueError(f"{name} grid holds an invalid pair ({l1}, {l2})")
    return pairs


class _Fold:
    """Train/test split with the training rows scaled once."""

    def __init__(self, ds: Dataset, train: np.ndarray, test: np.ndarray, scale: bool):
        self.train = ds.take_rows(train)
        self.test = ds.take_rows(test)
        if scale:
            self.work, self.record = scale_columns(self.train)
        else:
            self.work, self.record = self.train, ScalingRecord.identity(ds.q, ds.p)

    def mediator_fit(self, pair: PenaltyPair, opts: SolverOptions, exempt_intercept: bool):
        alpha_s, zeta_s, reports = fit_mediator_equation(self.work, pair[0], pair[1], opts, exempt_intercept)
        return self.record.unscale_alpha(alpha_s), self.record.unscale_zeta(zeta_s), reports

    def outcome_fit(self, pair: PenaltyPair, opts: SolverOptions, exempt_intercept: bool):
        beta_s, gamma_s, eta, reports = fit_outcome_equation(self.work, pair[0], pair[1], opts, exempt_intercept)
        return self.record.unscale_beta(beta_s), self.record.unscale_gamma(gamma_s), eta, reports


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def cross_validate(ds: Dataset, grid_m: Sequence[PenaltyPair], grid_y: Sequence[PenaltyPair],
                   folds: int = 5, seed: int = 0, opts: Optional[SolverOptions] = None,
                   scale: bool = True, exempt_intercept: bool = False,
                   mode: str = "observed", relative: bool = False) -> CvResult:
    """
    Score every grid pair per stage and pick the minimizer of each.

    With relative=True the grids hold (fraction of lambda_max, lambda2 / n)
    pairs, resolved once on the full data; the result then carries the
    absolute pairs that were scored.

    Raises:
        GridEmptyError: a grid has no candidates
        TooFewRowsError: n < 2 * folds
    """
    if relative:
        grid_m, grid_y, _ = resolve_grid(ds, PenaltyGrid(list(grid_m), list(grid_y), True), scale, exempt_intercept)
    grid_m = _validate_grid("mediator", grid_m)
    grid_y = _validate_grid("outcome", grid_y)
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if mode not in CV_MODES:
        raise ValueError(f"cv mode must be one of {CV_MODES}, got {mode!r}")
    if ds.m is None or ds.y is None:
        raise MissingBlockError("cross-validation needs mediator and outcome blocks")
    if ds.n < 2 * folds:
        raise TooFewRowsError(f"{folds}-fold cross-validation needs at least {2 * folds} rows, got {ds.n}")
    opts = opts or SolverOptions()

    assignment = fold_assignment(ds.n, folds, seed)
    splits = [
        _Fold(ds, np.flatnonzero(assignment != f), np.flatnonzero(assignment == f), scale)
        for f in range(folds)
    ]
    unconverged = 0

    scores_m = []
    for pair in grid_m:
        errors = []
        for fold in splits:
            alpha, zeta, reports = fold.mediator_fit(pair, opts, exempt_intercept)
            unconverged += sum(not r.converged for r in reports)
            pred = fold.test.x @ alpha + fold.test.z @ zeta
            errors.append(_mse(pred, fold.test.m))
        scores_m.append(float(np.mean(errors)))
    best_m = _select(grid_m, scores_m)

    held_out_m: List[np.ndarray] = []
    for fold in splits:
        if mode == "mediated":
            alpha, zeta, _ = fold.mediator_fit(best_m, opts, exempt_intercept)
            held_out_m.append(fold.test.x @ alpha + fold.test.z @ zeta)
        else:
            held_out_m.append(fold.test.m)

    scores_y = []
    for pair in grid_y:
        errors = []
        for fold, m_test in zip(splits, held_out_m):
            beta, gamma, eta, reports = fold.outcome_fit(pair, opts, exempt_intercept)
            unconverged += sum(not r.converged for r in reports)
            pred = m_test @ beta + fold.test.x @ gamma + fold.test.z @ eta
            errors.append(_mse(pred, fold.test.y))
        scores_y.append(float(np.mean(errors)))
    best_y = _select(grid_y, scores_y)

    if unconverged:
        logger.warning("%d column fits did not converge during cross-validation", unconverged)
    penalties = PenaltyConfig(lambda_m1=best_m[0], lambda_m2=best_m[1], lambda_y1=best_y[0], lambda_y2=best_y[1])
    logger.info("cross-validation selected %s (%d folds, mode %s)", penalties.model_dump(), folds, mode)
    return CvResult(
        penalties=penalties,
        grid_m=grid_m,
        grid_y=grid_y,
        scores_m=tuple(scores_m),
        scores_y=tuple(scores_y),
        mode=mode,
    )


def cv_select(ds: Dataset, grid_m: Sequence[PenaltyPair], grid_y: Sequence[PenaltyPair],
              folds: int = 5, seed: int = 0, opts: Optional[SolverOptions] = None,
              scale: bool = True, exempt_intercept: bool = False,
              mode: str = "observed", relative: bool = False) -> PenaltyConfig:
    """Penalties chosen by stage-wise K-fold cross-validation."""
    return cross_validate(ds, grid_m, grid_y, folds, seed, opts, scale, exempt_intercept, mode, relative).penalties
