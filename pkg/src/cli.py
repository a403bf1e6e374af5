"""
Command-line interface: mmm fit | predict | simulate | bootstrap | diagnose.

Each command validates its arguments into a RunConfig model, runs the library
and writes its outputs atomically into --out-dir. Exit codes: 0 success,
2 input or validation error, 3 non-convergence, 4 aborted simulation cell.
"""
import argparse
import functools
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core_types import Dataset, PenaltyConfig, assemble_dataset
from .cross_validation import CV_MODES, cross_validate
from .errors import (
    BootstrapFailureError,
    CellAbortedError,
    HeaderMismatchError,
    InputFormatError,
    MMMError,
    NoConvergenceError,
)
from .estimator import MediationEffects, fit_mmm, top_paths
from .file_formats import (
    FORMAT_VERSION,
    atomic_writer,
    default_grid_path,
    matrix_frame,
    matrix_to_json,
    read_coefficients,
    read_cv_grid,
    read_matrix_csv,
    write_coefficients,
    write_frame,
    write_json,
)
from .inference import (
    bootstrap_indirect,
    default_stability_threshold,
    generate_diagnostics_report,
    run_diagnostics,
    sign_agreement,
    stability_index,
)
from .predict import (
    check_column_names,
    evaluate_binary,
    evaluate_regression,
    is_binary,
    predict_mediators,
    predict_outcomes,
    predict_outcomes_observed_m,
)
from .settings import get_settings
from .simulation import BlockSpec, SimConfig, generate_truth, run_grid
from .solver import SolverOptions

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_SIMULATION = 4

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

DEFAULT_N_GRID = (50, 100, 500, 1000, 5000, 10000)
DEFAULT_SIGMA_GRID = (50.0, 100.0, 200.0, 500.0, 1000.0)


# ---------------------------------------------------------------------------
# Run configurations
# ---------------------------------------------------------------------------

def _non_empty_path(v):
    if v is None:
        return v
    if str(v).strip() == "":
        raise ValueError("path must be non-empty")
    return Path(v)


class DataInputs(BaseModel):
    """CSV paths of the data blocks; z holds the covariates without intercept."""

    x: Path
    m: Optional[Path] = None
    y: Optional[Path] = None
    z: Optional[Path] = None

    _paths = field_validator("x", "m", "y", "z", mode="before")(_non_empty_path)


class SolverSettings(BaseModel):
    max_iterations: int = Field(10000, ge=1)
    tolerance: float = Field(1e-8, gt=0)

    def options(self, threads: int) -> SolverOptions:
        return SolverOptions(max_iterations=self.max_iterations, tolerance=self.tolerance, threads=threads)


class RunConfig(BaseModel):
    """Settings shared by every command."""

    model_config = ConfigDict(frozen=True)

    out_dir: Path
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    progress: bool = False

    _out = field_validator("out_dir", mode="before")(_non_empty_path)


class PenaltySource(BaseModel):
    """Explicit penalties, or a cross-validation grid to select them."""

    penalties: Optional[PenaltyConfig] = None
    cv_grid: Optional[Path] = None
    folds: int = Field(5, ge=2)
    cv_mode: Literal["observed", "mediated"] = "observed"


class FitRunConfig(RunConfig):
    data: DataInputs
    selection: PenaltySource = Field(default_factory=PenaltySource)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    scale: bool = True
    exempt_intercept: bool = True
    allow_nonconverged: bool = False
    top_paths: int = Field(20, ge=1)


class PredictRunConfig(RunConfig):
    coef: Path
    data: DataInputs
    truth: Optional[Path] = None
    cut: float = 0.5


class SimulateRunConfig(RunConfig):
    n_list: List[int] = Field(..., min_length=1)
    sigma_list: List[float] = Field(..., min_length=1)
    template: SimConfig
    selection: PenaltySource = Field(default_factory=PenaltySource)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    replicates: int = Field(5, ge=1)
    bootstrap_b: int = Field(10, ge=0)
    threshold: float = Field(1e-8, ge=0)
    exempt_intercept: bool = True

    @field_validator("n_list")
    @classmethod
    def check_n(cls, v: List[int]) -> List[int]:
        if any(n < 2 for n in v):
            raise ValueError("every n must be >= 2")
        return v

    @field_validator("sigma_list")
    @classmethod
    def check_sigma(cls, v: List[float]) -> List[float]:
        if any(not s > 0 for s in v):
            raise ValueError("every sigma must be > 0")
        return v


class BootstrapRunConfig(RunConfig):
    data: DataInputs
    coef: Optional[Path] = None
    selection: PenaltySource = Field(default_factory=PenaltySource)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    replicates: int = Field(10, ge=2)
    threshold: Optional[float] = Field(None, ge=0)
    scale: bool = True
    exempt_intercept: bool = True


class DiagnoseRunConfig(RunConfig):
    coef: Path
    data: DataInputs
    penalties: Optional[PenaltyConfig] = None
    pairs: Optional[List[Tuple[int, int]]] = None


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def exit_code_for(exc: MMMError) -> int:
    if isinstance(exc, (NoConvergenceError, BootstrapFailureError)):
        return EXIT_CONVERGENCE
    if isinstance(exc, CellAbortedError):
        return EXIT_SIMULATION
    return EXIT_INPUT


def reports_exit_code(func: Callable[..., int]) -> Callable[..., int]:
    """Turn library errors raised by a command into its exit status."""
    @functools.wraps(func)
    def wrapper(config) -> int:
        try:
            return func(config)
        except ValidationError as exc:
            logger.error("invalid configuration: %s", exc)
            return EXIT_INPUT
        except MMMError as exc:
            code = exit_code_for(exc)
            logger.error("%s failed (exit %d): %s", func.__name__, code, exc)
            return code
    return wrapper


def load_dataset(inputs: DataInputs) -> Dataset:
    """Read the block CSVs and assemble a Dataset labelled with their headers."""
    x, x_names = read_matrix_csv(inputs.x)
    blocks: Dict[str, np.ndarray] = {}
    names: Dict[str, Tuple[str, ...]] = {"x": x_names}
    for block in ("m", "y", "z"):
        path = getattr(inputs, block)
        if path is None:
            continue
        blocks[block], names[block] = read_matrix_csv(path)
    return assemble_dataset(x, blocks.get("m"), blocks.get("y"), blocks.get("z"), column_names=names)


def _select_penalties(ds: Dataset, source: PenaltySource, opts: SolverOptions, seed: int,
                      scale: bool, exempt_intercept: bool) -> Tuple[PenaltyConfig, Dict]:
    if source.penalties is not None:
        return source.penalties, {"penalties_source": "flags"}
    grid_path = source.cv_grid or default_grid_path()
    grid = read_cv_grid(grid_path)
    cv = cross_validate(ds, grid.mediator, grid.outcome, folds=source.folds, seed=seed, opts=opts,
                        scale=scale, exempt_intercept=exempt_intercept, mode=source.cv_mode,
                        relative=grid.relative)
    info = {
        "penalties_source": "cross_validation",
        "cv": {
            "folds": source.folds,
            "mode": source.cv_mode,
            "grid_scale": "relative" if grid.relative else "absolute",
            "grid_mediator": [list(pair) for pair in cv.grid_m],
            "grid_outcome": [list(pair) for pair in cv.grid_y],
            "scores_mediator": list(cv.scores_m),
            "scores_outcome": list(cv.scores_y),
        },
    }
    return cv.penalties, info


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@reports_exit_code
def cmd_fit(config: FitRunConfig) -> int:
    """Fit the two-stage model and write coefficients.json, indirect.csv, paths.csv."""
    logger.info("fit: data=%s out_dir=%s", config.data.model_dump(), config.out_dir)
    ds = load_dataset(config.data)
    opts = config.solver.options(config.threads)
    penalties, selection = _select_penalties(ds, config.selection, opts, config.seed,
                                             config.scale, config.exempt_intercept)
    coef = fit_mmm(ds, penalties, opts, scale=config.scale, exempt_intercept=config.exempt_intercept)
    if not coef.diagnostics.all_converged and not config.allow_nonconverged:
        raise NoConvergenceError("coordinate descent did not converge for every column")

    metadata = {
        **selection,
        "seed": config.seed,
        "scale": config.scale,
        "exempt_intercept": config.exempt_intercept,
        "solver": config.solver.model_dump(),
        "converged": coef.diagnostics.all_converged,
    }
    out = config.out_dir
    write_coefficients(out / "coefficients.json", coef, metadata)

    effects = MediationEffects.from_coefficients(coef)
    x_names = list(coef.column_names["x"])
    m_names = list(coef.column_names["m"])
    y_names = list(coef.column_names["y"])
    write_frame(out / "indirect.csv", matrix_frame(effects.indirect, y_names, "exposure", x_names))

    paths = top_paths(effects, config.top_paths)
    write_frame(out / "paths.csv", pd.DataFrame({
        "exposure": [x_names[p.exposure] for p in paths],
        "mediator": [m_names[p.mediator] for p in paths],
        "outcome": [y_names[p.outcome] for p in paths],
        "exposure_index": [p.exposure for p in paths],
        "mediator_index": [p.mediator for p in paths],
        "outcome_index": [p.outcome for p in paths],
        "effect": [p.value for p in paths],
    }))
    return EXIT_OK


@reports_exit_code
def cmd_predict(config: PredictRunConfig) -> int:
    """Predict mediators and outcomes for new exposures; score against --truth when given."""
    logger.info("predict: coef=%s out_dir=%s", config.coef, config.out_dir)
    coef, _ = read_coefficients(config.coef)
    inputs = config.data.model_copy(update={"y": None})
    ds = load_dataset(inputs)
    check_column_names(coef.column_names, ds, ("x", "z", "m") if ds.m is not None else ("x", "z"))

    m_hat = predict_mediators(coef, ds.x, ds.z)
    if ds.m is not None:
        result = predict_outcomes_observed_m(coef, ds.m, ds.x, ds.z)
    else:
        result = predict_outcomes(coef, ds.x, ds.z)

    out = config.out_dir
    write_frame(out / "predicted_mediators.csv", matrix_frame(m_hat, coef.column_names["m"]))
    write_frame(out / "predicted_outcomes.csv", matrix_frame(result.predicted_outcomes, coef.column_names["y"]))

    if config.truth is not None:
        truth, truth_names = read_matrix_csv(config.truth)
        expected = tuple(coef.column_names["y"])
        if truth_names != expected:
            raise HeaderMismatchError(
                f"truth columns {list(truth_names)} do not match outcomes {list(expected)}",
                {"file": str(config.truth)},
            )
        regression = evaluate_regression(result.predicted_outcomes, truth)
        outcomes = []
        for col, name in enumerate(expected):
            entry = {"name": name, **regression[col]}
            if is_binary(truth[:, col]):
                entry.update(evaluate_binary(result.predicted_outcomes[:, col], truth[:, col], config.cut))
            outcomes.append(entry)
        write_json(out / "metrics.json", {
            "format_version": FORMAT_VERSION,
            "mode": result.mode.value,
            "cut": config.cut,
            "outcomes": outcomes,
        })
    return EXIT_OK


@reports_exit_code
def cmd_simulate(config: SimulateRunConfig) -> int:
    """Run the (n, sigma) grid and write grid_results.csv, qq_samples.csv, truth.json."""
    logger.info("simulate: n=%s sigma=%s replicates=%d", config.n_list, config.sigma_list, config.replicates)
    truth = generate_truth(config.template)
    penalties = config.selection.penalties
    grid = None
    if penalties is None:
        grid = read_cv_grid(config.selection.cv_grid or default_grid_path())

    result = run_grid(
        truth, config.template, config.n_list, config.sigma_list,
        penalties=penalties, grid=grid, replicates=config.replicates, seed=config.seed,
        opts=config.solver.options(1), folds=config.selection.folds,
        bootstrap_b=config.bootstrap_b, type1_threshold=config.threshold,
        exempt_intercept=config.exempt_intercept, threads=config.threads, progress=config.progress,
    )

    out = config.out_dir
    write_frame(out / "grid_results.csv",
                pd.DataFrame(result.rows(), columns=["n", "sigma", "metric", "value"]))
    write_frame(out / "qq_samples.csv",
                pd.DataFrame(result.qq_rows(), columns=["n", "sigma", "statistic", "replicate", "value"]))
    write_json(out / "truth.json", {
        "format_version": FORMAT_VERSION,
        "config": config.template.model_dump(mode="json", exclude={"n", "sigma", "seed"}),
        "seed": config.seed,
        "exempt_intercept": config.exempt_intercept,
        "n_list": list(config.n_list),
        "sigma_list": list(config.sigma_list),
        "matrices": {
            "alpha": matrix_to_json(truth.alpha0),
            "beta": matrix_to_json(truth.beta0),
            "gamma": matrix_to_json(truth.gamma0),
            "zeta": matrix_to_json(truth.zeta0),
            "eta": matrix_to_json(truth.eta0),
            "indirect": matrix_to_json(truth.indirect0),
        },
        "aborted": [{"n": a.n, "sigma": a.sigma, "message": a.message} for a in result.aborted],
    })
    if result.aborted:
        logger.error("%d simulation cells aborted", len(result.aborted))
        return EXIT_SIMULATION
    return EXIT_OK


@reports_exit_code
def cmd_bootstrap(config: BootstrapRunConfig) -> int:
    """Pairs bootstrap of the indirect-effect matrix, written to bootstrap.json."""
    logger.info("bootstrap: B=%d seed=%d out_dir=%s", config.replicates, config.seed, config.out_dir)
    ds = load_dataset(config.data)
    opts = config.solver.options(1)
    source = config.selection
    if source.penalties is None and config.coef is not None:
        fitted, _ = read_coefficients(config.coef)
        if fitted.penalties is None:
            raise InputFormatError("model file records no penalties", {"file": str(config.coef)})
        source = source.model_copy(update={"penalties": fitted.penalties})
    penalties, selection = _select_penalties(ds, source, opts, config.seed, config.scale, config.exempt_intercept)

    br = bootstrap_indirect(ds, penalties, opts, config.replicates, seed=config.seed, scale=config.scale,
                            exempt_intercept=config.exempt_intercept, threads=config.threads,
                            progress=config.progress)
    threshold = config.threshold if config.threshold is not None else default_stability_threshold(br.replicates)
    write_json(config.out_dir / "bootstrap.json", {
        "format_version": FORMAT_VERSION,
        "penalties": penalties.model_dump(),
        "penalties_source": selection["penalties_source"],
        "seed": config.seed,
        "requested": br.requested,
        "replicate_count": br.replicate_count,
        "failed": br.failed,
        "replicate_ids": list(br.replicate_ids),
        "exposures": list(ds.names("x")),
        "outcomes": list(ds.names("y")),
        "mean": matrix_to_json(br.mean),
        "sd": matrix_to_json(br.sd),
        "sign_agreement": matrix_to_json(br.sign_agreement),
        "threshold": threshold,
        "thresholded_agreement": matrix_to_json(sign_agreement(br.replicates, threshold)),
        "stability_index": stability_index(br, threshold),
    })
    return EXIT_OK


@reports_exit_code
def cmd_diagnose(config: DiagnoseRunConfig) -> int:
    """Error bounds, EIC reports and lambda ratios of a fitted model."""
    logger.info("diagnose: coef=%s out_dir=%s", config.coef, config.out_dir)
    coef, _ = read_coefficients(config.coef)
    ds = load_dataset(config.data)
    check_column_names(coef.column_names, ds, ("x", "m", "z"))
    penalties = config.penalties or coef.penalties
    if penalties is None:
        raise InputFormatError("no penalties recorded in the model file or given as flags")
    report = run_diagnostics(ds, coef, penalties, config.pairs)
    write_json(config.out_dir / "diagnostics.json", report.to_dict())
    text = generate_diagnostics_report(report)
    text_path = config.out_dir / "diagnostics.txt"
    with atomic_writer(text_path) as handle:
        handle.write(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out-dir", required=True, help="Directory for output files")
    parser.add_argument("--seed", type=int, default=0, help="Base random seed")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: MMM_THREADS or 1)")
    parser.add_argument("--log-level", default=None, help="Logging level (default: MMM_LOG_LEVEL or WARNING)")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")


def _add_data(parser: argparse.ArgumentParser, need_y: bool, need_m: Optional[bool] = None) -> None:
    parser.add_argument("--x", required=True, help="Exposure CSV")
    parser.add_argument("--m", required=need_y if need_m is None else need_m, help="Mediator CSV")
    if need_y:
        parser.add_argument("--y", required=True, help="Outcome CSV")
    parser.add_argument("--z", default=None, help="Covariate CSV (without intercept)")


def _add_penalties(parser: argparse.ArgumentParser, with_cv: bool = True) -> None:
    for flag in ("--lambda-m1", "--lambda-m2", "--lambda-y1", "--lambda-y2"):
        parser.add_argument(flag, type=float, default=None)
    if with_cv:
        parser.add_argument("--cv-grid", default=None, help="JSON file of (lambda1, lambda2) grids per stage")
        parser.add_argument("--folds", type=int, default=5)
        parser.add_argument("--cv-mode", choices=CV_MODES, default="observed")


def _add_solver(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-iterations", type=int, default=10000)
    parser.add_argument("--tolerance", type=float, default=1e-8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmm", description="High-dimensional MMM mediation analysis")
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="Fit the two-stage elastic-net model")
    _add_common(fit)
    _add_data(fit, need_y=True)
    _add_penalties(fit)
    _add_solver(fit)
    fit.add_argument("--no-scale", action="store_true", help="Fit on raw columns")
    fit.add_argument("--penalize-intercept", action="store_true", help="Apply the penalties to the intercept too")
    fit.add_argument("--allow-nonconverged", action="store_true")
    fit.add_argument("--top-paths", type=int, default=20)
    fit.set_defaults(make_config=_fit_config, run=cmd_fit)

    predict = commands.add_parser("predict", help="Predict mediators and outcomes for new exposures")
    _add_common(predict)
    predict.add_argument("--coef", required=True, help="coefficients.json from fit")
    _add_data(predict, need_y=False)
    predict.add_argument("--truth", default=None, help="Observed outcome CSV for metrics")
    predict.add_argument("--cut", type=float, default=0.5, help="Threshold for binary outcomes")
    predict.set_defaults(make_config=_predict_config, run=cmd_predict)

    simulate = commands.add_parser("simulate", help="Run the Monte Carlo (n, sigma) grid")
    _add_common(simulate)
    _add_penalties(simulate)
    _add_solver(simulate)
    simulate.add_argument("--n", type=int, nargs="+", default=list(DEFAULT_N_GRID))
    simulate.add_argument("--sigma", type=float, nargs="+", default=list(DEFAULT_SIGMA_GRID))
    simulate.add_argument("--q", type=int, default=20)
    simulate.add_argument("--p", type=int, default=20)
    simulate.add_argument("--t", type=int, default=10)
    simulate.add_argument("--s", type=int, default=2, help="Substantive covariates (age, sex, ...)")
    simulate.add_argument("--rho", type=float, default=0.5)
    simulate.add_argument("--outcome-sigma", type=float, default=None)
    simulate.add_argument("--null", action="store_true", help="All-zero alpha, beta and gamma")
    simulate.add_argument("--replicates", type=int, default=5)
    simulate.add_argument("--bootstrap-b", type=int, default=10)
    simulate.add_argument("--threshold", type=float, default=1e-8, help="Type-I threshold")
    simulate.add_argument("--penalize-intercept", action="store_true", help="Apply the penalties to the intercept too")
    simulate.set_defaults(make_config=_simulate_config, run=cmd_simulate)

    boot = commands.add_parser("bootstrap", help="Bootstrap the indirect-effect matrix")
    _add_common(boot)
    _add_data(boot, need_y=True)
    _add_penalties(boot)
    _add_solver(boot)
    boot.add_argument("--coef", default=None, help="Take penalties from this coefficients.json")
    boot.add_argument("--bootstrap-b", type=int, default=10)
    boot.add_argument("--threshold", type=float, default=None, help="Stability sign threshold")
    boot.add_argument("--no-scale", action="store_true")
    boot.add_argument("--penalize-intercept", action="store_true")
    boot.set_defaults(make_config=_bootstrap_config, run=cmd_bootstrap)

    diagnose = commands.add_parser("diagnose", help="Error bounds and EIC checks for a fitted model")
    _add_common(diagnose)
    diagnose.add_argument("--coef", required=True, help="coefficients.json from fit")
    _add_data(diagnose, need_y=False, need_m=True)
    _add_penalties(diagnose, with_cv=False)
    diagnose.add_argument("--pairs", default=None, help="Comma-separated k:l pairs (default: all)")
    diagnose.set_defaults(make_config=_diagnose_config, run=cmd_diagnose)
    return parser


def _penalties_from_args(args) -> Optional[PenaltyConfig]:
    values = [args.lambda_m1, args.lambda_m2, args.lambda_y1, args.lambda_y2]
    if all(v is None for v in values):
        return None
    if any(v is None for v in values):
        raise InputFormatError("give all four --lambda flags to bypass cross-validation")
    return PenaltyConfig(lambda_m1=values[0], lambda_m2=values[1], lambda_y1=values[2], lambda_y2=values[3])


def _common(args) -> Dict:
    settings = get_settings()
    return {
        "out_dir": args.out_dir,
        "seed": args.seed,
        "threads": args.threads if args.threads is not None else settings.threads,
        "progress": args.progress or settings.progress,
    }


def _data(args) -> DataInputs:
    return DataInputs(x=args.x, m=args.m, y=getattr(args, "y", None), z=args.z)


def _selection(args) -> PenaltySource:
    return PenaltySource(penalties=_penalties_from_args(args), cv_grid=args.cv_grid,
                         folds=args.folds, cv_mode=args.cv_mode)


def _solver(args) -> SolverSettings:
    return SolverSettings(max_iterations=args.max_iterations, tolerance=args.tolerance)


def _fit_config(args) -> FitRunConfig:
    return FitRunConfig(
        **_common(args), data=_data(args), selection=_selection(args), solver=_solver(args),
        scale=not args.no_scale, exempt_intercept=not args.penalize_intercept,
        allow_nonconverged=args.allow_nonconverged, top_paths=args.top_paths,
    )


def _predict_config(args) -> PredictRunConfig:
    return PredictRunConfig(**_common(args), coef=args.coef, data=_data(args), truth=args.truth, cut=args.cut)


def _simulate_config(args) -> SimulateRunConfig:
    template = SimConfig(
        n=args.n[0], q=args.q, p=args.p, t=args.t, s=args.s, sigma=args.sigma[0], rho=args.rho,
        seed=args.seed, outcome_sigma=args.outcome_sigma,
        block_spec=BlockSpec.empty() if args.null else BlockSpec(),
    )
    return SimulateRunConfig(
        **_common(args), n_list=args.n, sigma_list=args.sigma, template=template,
        selection=_selection(args), solver=_solver(args), replicates=args.replicates,
        bootstrap_b=args.bootstrap_b, threshold=args.threshold,
        exempt_intercept=not args.penalize_intercept,
    )


def _bootstrap_config(args) -> BootstrapRunConfig:
    return BootstrapRunConfig(
        **_common(args), data=_data(args), coef=args.coef, selection=_selection(args), solver=_solver(args),
        replicates=args.bootstrap_b, threshold=args.threshold,
        scale=not args.no_scale, exempt_intercept=not args.penalize_intercept,
    )


def _parse_pairs(text: Optional[str]) -> Optional[List[Tuple[int, int]]]:
    if text is None:
        return None
    pairs = []
    for item in text.split(","):
        try:
            k, l = item.split(":")
            pairs.append((int(k), int(l)))
        except ValueError as exc:
            raise InputFormatError(f"malformed pair {item!r}, expected k:l") from exc
    return pairs


def _diagnose_config(args) -> DiagnoseRunConfig:
    return DiagnoseRunConfig(**_common(args), coef=args.coef, data=_data(args),
                             penalties=_penalties_from_args(args), pairs=_parse_pairs(args.pairs))


def configure_logging(level: Optional[str]) -> None:
    name = (level or get_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, name, logging.WARNING), format=LOG_FORMAT,
                        stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    configure_logging(args.log_level)
    try:
        config = args.make_config(args)
    except ValidationError as exc:
        logger.error("invalid arguments: %s", exc)
        return EXIT_INPUT
    except MMMError as exc:
        logger.error("invalid arguments: %s", exc)
        return exit_code_for(exc)
    return args.run(config)
