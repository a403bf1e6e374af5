import json

import numpy as np
import pytest

from src.core_types import PenaltyConfig
from src.errors import InputFormatError
from src.estimator import fit_mmm
from src.file_formats import (
    FORMAT_VERSION,
    atomic_writer,
    default_grid_path,
    parse_cv_grid,
    read_coefficients,
    read_cv_grid,
    read_json,
    read_matrix_csv,
    write_coefficients,
    write_json,
)


def test_atomic_writer_keeps_old_content_on_error(tmp_path):
    target = tmp_path / "out.txt"
    target.write_text("old", encoding="utf-8")
    with pytest.raises(RuntimeError):
        with atomic_writer(target) as handle:
            handle.write("partial")
            raise RuntimeError("boom")
    assert target.read_text(encoding="utf-8") == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_atomic_writer_creates_parent(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    with atomic_writer(target) as handle:
        handle.write("done")
    assert target.read_text(encoding="utf-8") == "done"


class TestMatrixCsv:
    def test_reads_header_and_values(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2.5\n-3,0.1\n", encoding="utf-8")
        matrix, names = read_matrix_csv(path)
        assert names == ("a", "b")
        np.testing.assert_array_equal(matrix, [[1.0, 2.5], [-3.0, 0.1]])

    def test_non_numeric_cell_reports_line_and_column(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2\n3,oops\n", encoding="utf-8")
        with pytest.raises(InputFormatError) as info:
            read_matrix_csv(path)
        assert info.value.context["line"] == 3
        assert info.value.context["column"] == "b"

    def test_missing_cell(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,\n3,4\n", encoding="utf-8")
        with pytest.raises(InputFormatError) as info:
            read_matrix_csv(path)
        assert info.value.context["line"] == 2

    def test_header_only(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n", encoding="utf-8")
        with pytest.raises(InputFormatError):
            read_matrix_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputFormatError):
            read_matrix_csv(tmp_path / "absent.csv")


class TestJson:
    def test_version_is_checked(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"format_version": FORMAT_VERSION + 1}), encoding="utf-8")
        with pytest.raises(InputFormatError, match="format_version"):
            read_json(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(InputFormatError):
            read_json(path)

    def test_nan_is_refused(self, tmp_path):
        with pytest.raises(ValueError):
            write_json(tmp_path / "bad.json", {"format_version": FORMAT_VERSION, "value": float("nan")})


def test_coefficients_survive_a_file(tmp_path, dataset):
    coef = fit_mmm(dataset, PenaltyConfig.uniform(0.5))
    path = tmp_path / "coefficients.json"
    write_coefficients(path, coef, {"seed": 3})
    loaded, metadata = read_coefficients(path)
    for name in ("alpha", "zeta", "beta", "gamma", "eta"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(coef, name))
    assert loaded.penalties == coef.penalties
    assert loaded.column_names["z"] == ("intercept", "z1")
    np.testing.assert_array_equal(loaded.scaling.x_scales, coef.scaling.x_scales)
    assert loaded.diagnostics.mediator_stage.converged == coef.diagnostics.mediator_stage.converged
    assert metadata == {"seed": 3}


def test_model_file_without_matrices(tmp_path):
    path = tmp_path / "coefficients.json"
    path.write_text(json.dumps({"format_version": FORMAT_VERSION}), encoding="utf-8")
    with pytest.raises(InputFormatError) as info:
        read_coefficients(path)
    assert info.value.context["file"] == str(path)


class TestCvGrid:
    def test_parse(self):
        grid = parse_cv_grid({"mediator": [[1, 0.1]], "outcome": [[2, 0], [3, 1]]})
        assert grid.mediator == [(1.0, 0.1)]
        assert grid.outcome == [(2.0, 0.0), (3.0, 1.0)]
        assert not grid.relative

    def test_relative_scale(self):
        grid = parse_cv_grid({"scale": "relative", "mediator": [[0.5, 0.01]], "outcome": [[1, 0]]})
        assert grid.relative
        assert grid.mediator == [(0.5, 0.01)]

    def test_unknown_scale(self):
        with pytest.raises(InputFormatError):
            parse_cv_grid({"scale": "log", "mediator": [[1, 0]], "outcome": [[1, 0]]})

    def test_malformed(self):
        with pytest.raises(InputFormatError):
            parse_cv_grid({"mediator": [[1]], "outcome": []})
        with pytest.raises(InputFormatError):
            parse_cv_grid({"mediator": []})

    def test_bundled_grid(self):
        grid = read_cv_grid(default_grid_path())
        assert grid.relative
        assert grid.mediator and grid.outcome
        # fractions of lambda_max, the largest zeroing every penalized coefficient
        assert all(0 < a <= 1 and b >= 0 for a, b in grid.mediator + grid.outcome)
        assert max(a for a, _ in grid.mediator) == 1.0

    def test_default_grid_path_ignores_working_directory(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        path = default_grid_path()
        assert path.is_absolute() and path.is_file()
