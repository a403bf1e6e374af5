import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from src.core_types import (
    CoefficientSet,
    PenaltyConfig,
    ScalingRecord,
    assemble_dataset,
    scale_columns,
    unscale_coefficients,
)
from src.errors import (
    DegenerateColumnError,
    DimensionMismatchError,
    EmptyBlockError,
    NonFiniteInputError,
    ShapeMismatchError,
)


class TestAssembleDataset:
    def test_intercept_only(self):
        ds = assemble_dataset(np.ones((3, 2)), np.zeros((3, 2)), np.zeros((3, 1)))
        assert ds.s == 1
        np.testing.assert_array_equal(ds.z, np.ones((3, 1)))
        assert ds.names("z") == ("intercept",)
        assert ds.names("x") == ("x1", "x2")

    def test_covariates_follow_intercept(self):
        cov = np.array([[70.0, 1.0], [65.0, 0.0]])
        ds = assemble_dataset(np.ones((2, 1)), z_covariates=cov, column_names={"z": ["age", "sex"]})
        np.testing.assert_array_equal(ds.z, np.hstack([np.ones((2, 1)), cov]))
        np.testing.assert_array_equal(ds.z_covariates, cov)
        assert ds.names("z") == ("intercept", "age", "sex")

    def test_row_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            assemble_dataset(np.ones((3, 2)), np.ones((4, 2)))

    def test_non_finite(self):
        x = np.ones((3, 2))
        x[1, 1] = np.nan
        with pytest.raises(NonFiniteInputError) as info:
            assemble_dataset(x)
        assert info.value.context == {"row": 1, "column": 1}

    def test_empty_exposures(self):
        with pytest.raises(EmptyBlockError):
            assemble_dataset(np.empty((3, 0)))

    def test_wrong_name_count(self):
        with pytest.raises(DimensionMismatchError):
            assemble_dataset(np.ones((2, 2)), column_names={"x": ["a"]})

    def test_blocks_are_read_only(self, dataset):
        with pytest.raises(ValueError):
            dataset.x[0, 0] = 1.0

    def test_take_rows_repeats(self, dataset):
        sub = dataset.take_rows([0, 0, 3])
        assert sub.n == 3
        np.testing.assert_array_equal(sub.m[1], dataset.m[0])
        assert sub.column_names == dataset.column_names


class TestScaling:
    def test_hand_column(self):
        ds = assemble_dataset(np.array([[3.0], [4.0]]))
        scaled, record = scale_columns(ds)
        np.testing.assert_allclose(scaled.x[:, 0], np.array([3.0, 4.0]) * math.sqrt(2) / 5)
        assert np.linalg.norm(scaled.x[:, 0]) == pytest.approx(math.sqrt(2), abs=1e-12)
        assert record.applied

    def test_norms_are_sqrt_n(self, dataset):
        scaled, _ = scale_columns(dataset)
        for block in (scaled.x, scaled.m):
            np.testing.assert_allclose(np.linalg.norm(block, axis=0), math.sqrt(dataset.n), atol=1e-10)
        np.testing.assert_array_equal(scaled.z, dataset.z)
        np.testing.assert_array_equal(scaled.y, dataset.y)

    def test_idempotent(self, dataset):
        once, _ = scale_columns(dataset)
        twice, record = scale_columns(once)
        np.testing.assert_allclose(twice.x, once.x, atol=1e-12)
        np.testing.assert_allclose(record.x_scales, 1.0, atol=1e-12)

    def test_zero_column(self):
        x = np.array([[1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(DegenerateColumnError) as info:
            scale_columns(assemble_dataset(x))
        assert info.value.context["column"] == 1


class TestUnscale:
    def _coef(self, rng, q=5, p=4, t=2, s=2):
        return CoefficientSet(
            alpha=rng.normal(size=(q, p)), zeta=rng.normal(size=(s, p)),
            beta=rng.normal(size=(p, t)), gamma=rng.normal(size=(q, t)), eta=rng.normal(size=(s, t)),
        )

    def test_identity_record(self, rng):
        coef = self._coef(rng)
        out = unscale_coefficients(coef, ScalingRecord.identity(coef.q, coef.p))
        for name in ("alpha", "zeta", "beta", "gamma", "eta"):
            np.testing.assert_array_equal(getattr(out, name), getattr(coef, name))

    def test_single_column_factor(self):
        record = ScalingRecord(x_means=np.zeros(1), x_scales=np.array([4.0]), applied=True)
        assert record.unscale_gamma(np.array([[2.0]]))[0, 0] == 8.0
        # fitted on x * 4: the raw-scale coefficient absorbs the factor
        coef_raw = record.unscale_alpha(np.array([[0.5]]))
        assert coef_raw[0, 0] == 2.0

    def test_fitted_values_preserved(self, rng):
        n, q, p, t = 20, 5, 3, 2
        x = rng.normal(size=(n, q))
        m = rng.normal(size=(n, p))
        ds = assemble_dataset(x, m, rng.normal(size=(n, t)), rng.normal(size=(n, 1)))
        scaled, record = scale_columns(ds)
        coef_s = self._coef(rng, q, p, t, ds.s)
        coef = unscale_coefficients(coef_s, record)

        med_scaled = scaled.x @ coef_s.alpha + scaled.z @ coef_s.zeta
        med_raw = ds.x @ coef.alpha + ds.z @ coef.zeta
        np.testing.assert_allclose(med_raw * record.m_scales[None, :], med_scaled, rtol=1e-10, atol=1e-10)

        out_scaled = scaled.m @ coef_s.beta + scaled.x @ coef_s.gamma + scaled.z @ coef_s.eta
        out_raw = ds.m @ coef.beta + ds.x @ coef.gamma + ds.z @ coef.eta
        np.testing.assert_allclose(out_raw, out_scaled, rtol=1e-10, atol=1e-10)

    def test_shape_mismatch(self, rng):
        coef = self._coef(rng)
        with pytest.raises(ShapeMismatchError):
            unscale_coefficients(coef, ScalingRecord.identity(coef.q + 1, coef.p))


class TestCoefficientSet:
    def test_shape_check(self):
        with pytest.raises(ShapeMismatchError):
            CoefficientSet(alpha=np.zeros((2, 3)), zeta=np.zeros((1, 3)), beta=np.zeros((2, 1)),
                           gamma=np.zeros((2, 1)), eta=np.zeros((1, 1)))

    def test_non_finite(self):
        with pytest.raises(NonFiniteInputError):
            CoefficientSet(alpha=np.full((1, 1), np.inf), zeta=np.zeros((1, 1)), beta=np.zeros((1, 1)),
                           gamma=np.zeros((1, 1)), eta=np.zeros((1, 1)))


class TestPenaltyConfig:
    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            PenaltyConfig(lambda_m1=-1.0, lambda_m2=0.0, lambda_y1=0.0, lambda_y2=0.0)

    def test_infinite_rejected(self):
        with pytest.raises(ValidationError):
            PenaltyConfig.uniform(float("inf"))

    def test_pairs(self):
        pen = PenaltyConfig(lambda_m1=1.0, lambda_m2=2.0, lambda_y1=3.0, lambda_y2=4.0)
        assert pen.mediator_pair() == (1.0, 2.0)
        assert pen.outcome_pair() == (3.0, 4.0)


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=40),
    magnitudes=st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=5),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_scaled_norms_for_any_column_magnitude(n, magnitudes, seed):
    x = np.random.default_rng(seed).normal(size=(n, len(magnitudes))) * np.array(magnitudes)
    scaled, record = scale_columns(assemble_dataset(x))
    np.testing.assert_allclose(np.linalg.norm(scaled.x, axis=0), math.sqrt(n), rtol=1e-10)
    np.testing.assert_allclose(scaled.x / record.x_scales, x, rtol=1e-10, atol=1e-12)
