"""
CSV and JSON formats for data, fitted models and results.

CSVs are UTF-8 with a header row and no index column; floats are written as
the shortest decimal that round-trips. JSON files carry "format_version": 1 and
store matrices row-major as {"rows", "cols", "data"}. Every write goes to a
temporary file in the target directory and is renamed into place.
"""
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core_types import CoefficientSet, FitDiagnostics, PenaltyConfig, ScalingRecord, StageDiagnostics
from .cross_validation import PenaltyGrid
from .errors import InputFormatError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BLOCKS = ("x", "m", "y", "z")
MATRICES = ("alpha", "zeta", "beta", "gamma", "eta")
DEFAULT_GRID_NAME = "cv_grid.json"


@contextmanager
def atomic_writer(path: Path, newline: str = "\n") -> Iterator[Any]:
    """Text handle whose content replaces `path` only after a clean exit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    with atomic_writer(path) as handle:
        handle.write(json.dumps(payload, indent=2, allow_nan=False))
        handle.write("\n")
    logger.info("wrote %s", path)


def read_json(path: Path) -> Dict[str, Any]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc.strerror}", {"file": str(path)}) from exc
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"invalid JSON: {exc.msg}", {"file": str(path), "line": exc.lineno}) from exc
    if not isinstance(payload, dict):
        raise InputFormatError("top-level JSON value must be an object", {"file": str(path)})
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise InputFormatError(f"unsupported format_version {version!r}", {"file": str(path)})
    return payload


def write_frame(path: Path, frame: pd.DataFrame) -> None:
    with atomic_writer(path) as handle:
        frame.to_csv(handle, index=False, lineterminator="\n")
    logger.info("wrote %s", path)


def read_matrix_csv(path: Path) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """
    Numeric matrix and header names from a CSV file.

    Raises:
        InputFormatError: unreadable file, empty table, missing or non-numeric cell
            (reported with the 1-based file line and the column name)
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc.strerror or exc}", {"file": str(path)}) from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise InputFormatError(f"malformed CSV: {exc}", {"file": str(path)}) from exc
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise InputFormatError("CSV has no data rows", {"file": str(path)})

    for column in frame.columns:
        series = frame[column]
        numeric = pd.to_numeric(series, errors="coerce") if series.dtype == object else series
        bad = np.flatnonzero(pd.isna(numeric).to_numpy())
        if bad.size:
            row = int(bad[0])
            raise InputFormatError(
                f"non-numeric or missing value {series.iloc[row]!r}",
                {"file": str(path), "line": row + 2, "column": column},
            )
        if series.dtype == object:
            frame[column] = numeric
    return frame.to_numpy(dtype=np.float64), tuple(str(c) for c in frame.columns)


def matrix_frame(matrix: np.ndarray, header: Sequence[str], label: Optional[str] = None,
                 labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """DataFrame of a matrix, optionally with a leading label column."""
    frame = pd.DataFrame(np.asarray(matrix, dtype=np.float64), columns=list(header))
    if label is not None:
        frame.insert(0, label, list(labels))
    return frame


def matrix_to_json(matrix: np.ndarray) -> Dict[str, Any]:
    arr = np.asarray(matrix, dtype=np.float64)
    return {"rows": int(arr.shape[0]), "cols": int(arr.shape[1]), "data": arr.tolist()}


def matrix_from_json(obj: Dict[str, Any], name: str) -> np.ndarray:
    try:
        rows, cols = int(obj["rows"]), int(obj["cols"])
        data = np.array(obj["data"], dtype=np.float64).reshape(rows, cols) if rows and cols else np.zeros((rows, cols))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"matrix {name} is malformed: {exc}") from exc
    return data


def _stage_to_json(stage: StageDiagnostics) -> Dict[str, Any]:
    return {
        "iterations": list(stage.iterations),
        "objectives": list(stage.objectives),
        "converged": list(stage.converged),
    }


def _stage_from_json(obj: Dict[str, Any]) -> StageDiagnostics:
    return StageDiagnostics(
        iterations=tuple(int(v) for v in obj.get("iterations", ())),
        objectives=tuple(float(v) for v in obj.get("objectives", ())),
        converged=tuple(bool(v) for v in obj.get("converged", ())),
    )


def _vector(values) -> Optional[List[float]]:
    return None if values is None else [float(v) for v in values]


def coefficients_to_dict(coef: CoefficientSet, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """JSON payload of a fitted model in a fixed key order."""
    scaling = coef.scaling or ScalingRecord.identity(coef.q, coef.p)
    return {
        "format_version": FORMAT_VERSION,
        "shape": {"q": coef.q, "p": coef.p, "t": coef.t, "s": coef.s},
        "column_names": {block: list(coef.column_names.get(block, ())) for block in BLOCKS},
        "penalties": None if coef.penalties is None else coef.penalties.model_dump(),
        "scaling": {
            "applied": scaling.applied,
            "x_means": _vector(scaling.x_means),
            "x_scales": _vector(scaling.x_scales),
            "m_means": _vector(scaling.m_means),
            "m_scales": _vector(scaling.m_scales),
        },
        "matrices": {name: matrix_to_json(getattr(coef, name)) for name in MATRICES},
        "diagnostics": {
            "mediator_stage": _stage_to_json(coef.diagnostics.mediator_stage),
            "outcome_stage": _stage_to_json(coef.diagnostics.outcome_stage),
        },
        "metadata": dict(metadata or {}),
    }


def coefficients_from_dict(payload: Dict[str, Any]) -> CoefficientSet:
    try:
        matrices = {name: matrix_from_json(payload["matrices"][name], name) for name in MATRICES}
        scaling = payload.get("scaling") or {}
        record = None
        if scaling.get("x_scales") is not None:
            record = ScalingRecord(
                x_means=np.array(scaling["x_means"], dtype=np.float64),
                x_scales=np.array(scaling["x_scales"], dtype=np.float64),
                m_means=None if scaling.get("m_means") is None else np.array(scaling["m_means"], dtype=np.float64),
                m_scales=None if scaling.get("m_scales") is None else np.array(scaling["m_scales"], dtype=np.float64),
                applied=bool(scaling.get("applied", False)),
            )
        penalties = payload.get("penalties")
        diagnostics = payload.get("diagnostics") or {}
        return CoefficientSet(
            **matrices,
            diagnostics=FitDiagnostics(
                mediator_stage=_stage_from_json(diagnostics.get("mediator_stage", {})),
                outcome_stage=_stage_from_json(diagnostics.get("outcome_stage", {})),
            ),
            column_names={block: tuple(names) for block, names in payload.get("column_names", {}).items()},
            penalties=None if penalties is None else PenaltyConfig(**penalties),
            scaling=record,
        )
    except KeyError as exc:
        raise InputFormatError(f"model file lacks key {exc}") from exc


def write_coefficients(path: Path, coef: CoefficientSet, metadata: Optional[Dict[str, Any]] = None) -> None:
    write_json(path, coefficients_to_dict(coef, metadata))


def read_coefficients(path: Path) -> Tuple[CoefficientSet, Dict[str, Any]]:
    """Fitted model and its metadata block."""
    payload = read_json(path)
    try:
        return coefficients_from_dict(payload), payload.get("metadata", {})
    except InputFormatError as exc:
        raise exc.with_context(file=str(path)) from exc


GRID_SCALES = ("absolute", "relative")


def parse_cv_grid(payload: Dict[str, Any]) -> PenaltyGrid:
    """
    Per-stage candidate pairs. "scale": "relative" marks (fraction of
    lambda_max, lambda2 / n) pairs; the default "absolute" takes the pairs as
    given.
    """
    scale = payload.get("scale", "absolute") if isinstance(payload, dict) else None
    if scale not in GRID_SCALES:
        raise InputFormatError(f"cross-validation grid scale must be one of {GRID_SCALES}, got {scale!r}")
    try:
        grids = tuple([(float(a), float(b)) for a, b in payload[stage]] for stage in ("mediator", "outcome"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"cross-validation grid is malformed: {exc}") from exc
    return PenaltyGrid(grids[0], grids[1], relative=scale == "relative")


def read_cv_grid(path: Path) -> PenaltyGrid:
    try:
        return parse_cv_grid(read_json(path))
    except InputFormatError as exc:
        raise exc.with_context(file=str(path)) from exc


def default_grid_path() -> Path:
    """The grid shipped in the repository's config directory."""
    path = Path(__file__).resolve().parent.parent / "config" / DEFAULT_GRID_NAME
    if not path.is_file():
        raise InputFormatError(f"default cross-validation grid missing at {path}")
    return path
