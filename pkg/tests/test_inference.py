import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.core_types import CoefficientSet, PenaltyConfig, assemble_dataset
from src.errors import EmptySupportError, IndexOutOfRangeError, ShapeMismatchError, SingularGramError, UnnormalizedDirectionError
from src.estimator import fit_mmm
from src.inference import (
    BootstrapResult,
    bootstrap_indirect,
    check_eic,
    generate_diagnostics_report,
    lambda_scaling_ratios,
    mse_bound_beta,
    run_diagnostics,
    sign_agreement,
    stability_index,
    standardized_alpha_stat,
    standardized_beta_stat,
    standardized_mediation_stat,
    type1_rate,
)

from .conftest import dataset_from


# Columns of a 4 x 4 Hadamard matrix: mutually orthogonal, squared norm 4 = n.
HADAMARD = np.array([
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
])


def coefficients(alpha, beta, s=1) -> CoefficientSet:
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    q, p = alpha.shape
    t = beta.shape[1]
    return CoefficientSet(alpha=alpha, zeta=np.zeros((s, p)), beta=beta,
                          gamma=np.zeros((q, t)), eta=np.zeros((s, t)))


class TestMseBound:
    def test_unpenalized_reduction(self, dataset):
        zero = PenaltyConfig.uniform(0.0)
        n, p = dataset.n, dataset.p
        delta = np.linalg.eigvalsh(dataset.m.T @ dataset.m / n)[0]
        m_inf = np.max(np.abs(dataset.m))
        expected = 8 * n * p * m_inf ** 2 / (delta * n) ** 2
        assert mse_bound_beta(dataset, np.ones(p), zero) == pytest.approx(expected, rel=1e-12)

    def test_spot_value(self):
        m = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [0.0, 0.0]])
        ds = assemble_dataset(np.ones((4, 1)), m, np.zeros((4, 1)))
        pen = PenaltyConfig(lambda_m1=0.0, lambda_m2=0.0, lambda_y1=2.0, lambda_y2=1.0)
        beta = np.array([1.0, -1.0])
        delta = np.linalg.eigvalsh(m.T @ m / 4)[0]
        expected = (4 * 1.0 * 2.0 + 8 * 4 * 2 * 4.0 + 4.0 * 2) / (delta * 4 + 1.0) ** 2
        assert mse_bound_beta(ds, beta, pen) == pytest.approx(expected, rel=1e-12)

    def test_decreases_when_rows_are_duplicated(self, dataset):
        pen = PenaltyConfig.uniform(1.0)
        doubled = dataset.take_rows(np.concatenate([np.arange(dataset.n)] * 2))
        beta = np.ones(dataset.p)
        assert mse_bound_beta(doubled, beta, pen) < mse_bound_beta(dataset, beta, pen)

    def test_singular(self):
        m = np.ones((5, 2))
        ds = assemble_dataset(np.ones((5, 1)), m, np.zeros((5, 1)))
        with pytest.raises(SingularGramError):
            mse_bound_beta(ds, np.zeros(2), PenaltyConfig.uniform(1.0))


class TestEic:
    def _dataset(self, m, x=None):
        x = HADAMARD if x is None else x
        return assemble_dataset(x, m, np.zeros((m.shape[0], 1)))

    def test_orthogonal_design(self):
        ds = self._dataset(HADAMARD)
        coef = coefficients(alpha=np.eye(3), beta=[[1.0], [0.0], [0.0]])
        report = check_eic(ds, coef, PenaltyConfig.uniform(1.0), 0, 0)
        assert report.value_beta == pytest.approx(0.0, abs=1e-12)
        assert report.value_alpha == pytest.approx(0.0, abs=1e-12)
        assert report.psi_margin == pytest.approx(1.0)
        assert report.satisfied
        assert report.support_size_beta == 1
        assert report.c_min_beta == pytest.approx(1.0)

    def test_duplicated_column_sits_on_the_boundary(self):
        col = np.array([[1.0], [2.0], [-1.0], [0.5]])
        ds = self._dataset(np.hstack([col, col]), x=np.hstack([col, col]))
        coef = coefficients(alpha=[[1.0, 0.0], [0.0, 0.0]], beta=[[1.0], [0.0]])
        pen = PenaltyConfig(lambda_m1=1.0, lambda_m2=0.0, lambda_y1=1.0, lambda_y2=0.0)
        report = check_eic(ds, coef, pen, 0, 0)
        assert report.value_beta == pytest.approx(1.0, abs=1e-12)
        assert report.psi_margin == pytest.approx(0.0, abs=1e-12)

    def test_full_support(self):
        ds = self._dataset(HADAMARD)
        coef = coefficients(alpha=np.ones((3, 3)), beta=np.ones((3, 1)))
        report = check_eic(ds, coef, PenaltyConfig.uniform(1.0), 0, 0)
        assert report.value_beta == 0.0
        assert report.value_alpha == 0.0

    def test_zero_lambda1_is_not_applicable(self):
        ds = self._dataset(HADAMARD)
        coef = coefficients(alpha=np.eye(3), beta=[[1.0], [0.0], [0.0]])
        pen = PenaltyConfig(lambda_m1=0.0, lambda_m2=1.0, lambda_y1=0.0, lambda_y2=1.0)
        report = check_eic(ds, coef, pen, 0, 0)
        assert report.value_beta is None and report.value_alpha is None
        assert report.psi_margin is None and report.satisfied is None

    def test_empty_support(self):
        ds = self._dataset(HADAMARD)
        coef = coefficients(alpha=np.eye(3), beta=np.zeros((3, 1)))
        with pytest.raises(EmptySupportError):
            check_eic(ds, coef, PenaltyConfig.uniform(1.0), 0, 0)

    def test_pair_out_of_range(self):
        ds = self._dataset(HADAMARD)
        coef = coefficients(alpha=np.eye(3), beta=np.ones((3, 1)))
        with pytest.raises(IndexOutOfRangeError):
            check_eic(ds, coef, PenaltyConfig.uniform(1.0), 1, 0)


def test_lambda_ratios_echo_inputs():
    pen = PenaltyConfig(lambda_m1=10.0, lambda_m2=1.0, lambda_y1=100.0, lambda_y2=0.0)
    ratios = lambda_scaling_ratios(pen, 100)
    assert ratios["lambda_m1"] == {"value": 10.0, "over_sqrt_n": 1.0, "over_n": 0.1}
    assert ratios["lambda_y1"]["over_sqrt_n"] == 10.0
    assert ratios["lambda_y2"]["value"] == 0.0


class TestStandardizedStats:
    def test_zero_deviation(self, dataset):
        truth = coefficients(alpha=np.eye(dataset.q, dataset.p), beta=np.ones((dataset.p, 1)), s=dataset.s)
        assert standardized_beta_stat(dataset, truth, truth, 0) == 0.0
        stat = standardized_mediation_stat(dataset, truth, truth, 0)
        assert stat.value == 0.0
        assert stat.target_variance == float(dataset.p)

    def test_one_dimensional_closed_form(self):
        n = 16
        m = np.ones((n, 1))
        ds = assemble_dataset(np.ones((n, 1)), m, np.zeros((n, 1)))
        truth = coefficients(alpha=[[1.0]], beta=[[2.0]])
        estimate = coefficients(alpha=[[1.0]], beta=[[2.5]])
        value = standardized_beta_stat(ds, truth, estimate, 0, lambda2=0.0)
        assert value == pytest.approx(math.sqrt(n) * 0.5, rel=1e-12)

    def test_ridge_factor(self):
        n = 16
        ds = assemble_dataset(np.ones((n, 1)), np.ones((n, 1)), np.zeros((n, 1)))
        truth = coefficients(alpha=[[1.0]], beta=[[2.0]])
        estimate = coefficients(alpha=[[1.0]], beta=[[2.5]])
        value = standardized_beta_stat(ds, truth, estimate, 0, lambda2=4.0, noise_scale=2.0)
        assert value == pytest.approx((1 + 4.0 / n) * math.sqrt(n) * 0.5 / 2.0, rel=1e-12)

    def test_unnormalized_direction(self, dataset):
        truth = coefficients(alpha=np.eye(dataset.q, dataset.p), beta=np.ones((dataset.p, 1)), s=dataset.s)
        with pytest.raises(UnnormalizedDirectionError):
            standardized_beta_stat(dataset, truth, truth, 0, v=np.full(dataset.p, 1.0))

    def test_singular_restricted_gram(self):
        col = np.arange(1.0, 7.0).reshape(-1, 1)
        ds = assemble_dataset(np.ones((6, 1)), np.hstack([col, col]), np.zeros((6, 1)))
        truth = coefficients(alpha=[[1.0, 1.0]], beta=[[1.0], [1.0]])
        with pytest.raises(SingularGramError):
            standardized_beta_stat(ds, truth, truth, 0)

    def test_degenerate_mediation_variance(self, dataset):
        truth = coefficients(alpha=np.eye(dataset.q, dataset.p), beta=np.zeros((dataset.p, 1)), s=dataset.s)
        stat = standardized_mediation_stat(dataset, truth, truth, 0)
        assert stat.target_variance == 0.0
        assert stat.studentized is None
        assert stat.value == 0.0


class TestSignAgreement:
    def test_identical_replicates(self):
        reps = np.stack([np.array([[1.0, -2.0], [0.0, 3.0]])] * 4)
        br = BootstrapResult(replicates=reps, replicate_ids=(0, 1, 2, 3), requested=4)
        assert stability_index(br, 0.0) == 1.0

    def test_opposite_signs(self):
        reps = np.stack([np.ones((2, 2)), -np.ones((2, 2))])
        br = BootstrapResult(replicates=reps, replicate_ids=(0, 1), requested=2)
        assert stability_index(br, 0.0) == 0.5

    def test_three_replicate_enumeration(self):
        reps = np.array([[[1.0], [0.0]], [[2.0], [0.5]], [[-1.0], [0.0]]])
        agreement = sign_agreement(reps, 0.0)
        np.testing.assert_allclose(agreement, [[2 / 3], [2 / 3]])
        # a threshold above 0.5 zeroes the second entry everywhere
        np.testing.assert_allclose(sign_agreement(reps, 0.6), [[2 / 3], [1.0]])

    def test_bootstrap_result_needs_two_replicates(self):
        with pytest.raises(ValueError):
            BootstrapResult(replicates=np.zeros((1, 2, 2)), replicate_ids=(0,), requested=1)


class TestType1:
    def test_exact_estimate(self):
        truth = np.array([[0.0, 1.0], [0.0, 2.0]])
        assert type1_rate(truth, truth, 1e-8) == 0.0

    def test_all_null(self):
        truth = np.zeros((3, 3))
        assert type1_rate(np.full((3, 3), 1e-3), truth, 0.0) == 1.0

    def test_counting(self):
        truth = np.array([1, 0, 2, 0, 3, 0, 4, 0, 5, 6], dtype=float)
        estimate = truth.copy()
        estimate[[1, 3]] = 0.5
        estimate[5] = 1e-12
        assert type1_rate(estimate, truth, 1e-8) == 0.5

    def test_no_null_entries(self):
        assert type1_rate(np.ones(3), np.ones(3), 0.0) is None

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            type1_rate(np.ones(3), np.ones(4), 0.0)


class TestBootstrap:
    def _low_noise(self):
        rng = np.random.default_rng(31)
        n = 200
        x = rng.normal(size=(n, 3))
        alpha = np.array([[1.0, 0.5], [0.5, 1.0], [1.0, 1.0]])
        beta = np.array([[1.0, 0.5], [0.5, 1.0]])
        m = x @ alpha + 0.1 * rng.normal(size=(n, 2))
        y = m @ beta
        return assemble_dataset(x, m, y)

    def test_low_noise_replicates_agree(self):
        ds = self._low_noise()
        br = bootstrap_indirect(ds, PenaltyConfig.uniform(1e-6), replicates=5, seed=3)
        assert br.replicate_count == 5 and br.failed == 0
        assert np.max(np.ptp(br.replicates, axis=0)) < 0.1
        assert stability_index(br, 0.0) == 1.0
        np.testing.assert_array_equal(br.sign_agreement, 1.0)

    def test_same_seed_same_result(self, dataset):
        pen = PenaltyConfig.uniform(1.0)
        first = bootstrap_indirect(dataset, pen, replicates=3, seed=11)
        second = bootstrap_indirect(dataset, pen, replicates=3, seed=11, threads=3)
        np.testing.assert_array_equal(first.replicates, second.replicates)
        other = bootstrap_indirect(dataset, pen, replicates=3, seed=12)
        assert not np.array_equal(first.replicates, other.replicates)

    def test_needs_two_replicates(self, dataset):
        with pytest.raises(ValueError):
            bootstrap_indirect(dataset, PenaltyConfig.uniform(1.0), replicates=1)


class TestDiagnostics:
    def test_report_for_fitted_model(self, dataset):
        pen = PenaltyConfig.uniform(1.0)
        coef = fit_mmm(dataset, pen)
        report = run_diagnostics(dataset, coef, pen, pairs=[(0, 0), (1, 2)])
        assert sorted(report.mse_bounds) == list(range(dataset.t))
        assert len(report.eic) + len(report.issues) >= 2
        payload = report.to_dict()
        assert payload["format_version"] == 1
        assert set(payload["lambda_ratios"]) == {"lambda_m1", "lambda_m2", "lambda_y1", "lambda_y2"}
        text = generate_diagnostics_report(report)
        assert "lambda" in text.lower()

    def test_empty_support_becomes_issue(self, dataset):
        pen = PenaltyConfig.uniform(1e9)
        coef = fit_mmm(dataset, pen)
        report = run_diagnostics(dataset, coef, pen, pairs=[(0, 0)])
        assert report.eic == []
        assert report.issues and report.issues[0].field == "eic[0,0]"


@pytest.mark.slow
def test_error_bound_holds_empirically():
    rng = np.random.default_rng(2024)
    n, q, p = 200, 3, 5
    alpha = rng.normal(size=(q, p))
    beta = np.zeros((p, 1))
    beta[:2, 0] = [1.0, -0.5]
    pen = PenaltyConfig.uniform(1.0)
    errors, bounds = [], []
    for _ in range(500):
        x = rng.normal(size=(n, q))
        m = x @ alpha + rng.normal(size=(n, p))
        y = m @ beta + rng.normal(size=(n, 1))
        ds = assemble_dataset(x, m, y)
        coef = fit_mmm(ds, pen, scale=False)
        errors.append(float(np.sum((coef.beta[:, 0] - beta[:, 0]) ** 2)))
        bounds.append(mse_bound_beta(ds, beta[:, 0], pen))
    assert np.mean(errors) <= min(bounds)


@settings(max_examples=50, deadline=None)
@given(
    shape=st.tuples(st.integers(2, 12), st.integers(1, 4), st.integers(1, 4)),
    threshold=st.floats(min_value=0.0, max_value=2.0),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_stability_index_range(shape, threshold, seed):
    draws = np.random.default_rng(seed).normal(size=shape)
    value = stability_index(BootstrapResult(draws, tuple(range(shape[0])), shape[0]), threshold)
    assert 1.0 / 3.0 - 1e-12 <= value <= 1.0


H4 = np.array([
    [1.0, 1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
])


class TestBoundShape:
    def test_grows_with_mediator_count(self):
        pen = PenaltyConfig(lambda_m1=0.0, lambda_m2=0.0, lambda_y1=2.0, lambda_y2=1.0)
        bounds = []
        for p in range(1, 5):
            ds = assemble_dataset(np.ones((4, 1)), H4[:, :p], np.zeros((4, 1)))
            beta = np.zeros(p)
            beta[0] = 1.0
            bounds.append(mse_bound_beta(ds, beta, pen))
        assert all(a < b for a, b in zip(bounds, bounds[1:]))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_grows_with_largest_mediator_entry(self, seed):
        # an orthogonal row mix keeps M^T M and moves only max |m_ij|
        rng = np.random.default_rng(seed)
        n = 12
        m = rng.normal(size=(n, 3))
        mixed = np.linalg.qr(rng.normal(size=(n, n)))[0] @ m
        pen = PenaltyConfig.uniform(1.0)
        beta = np.array([1.0, 0.0, -1.0])
        first = mse_bound_beta(assemble_dataset(np.ones((n, 1)), m, np.zeros((n, 1))), beta, pen)
        second = mse_bound_beta(assemble_dataset(np.ones((n, 1)), mixed, np.zeros((n, 1))), beta, pen)
        assert (second > first) == (np.max(np.abs(mixed)) > np.max(np.abs(m)))


@settings(max_examples=20, deadline=None)
@given(order=st.permutations([2, 3, 4]))
def test_eic_ignores_order_of_inactive_mediators(order):
    rng = np.random.default_rng(17)
    n, q, p = 40, 4, 5
    x = rng.normal(size=(n, q))
    m = rng.normal(size=(n, p))
    ds = assemble_dataset(x, m, np.zeros((n, 1)))
    alpha = np.zeros((q, p))
    alpha[:2, 0] = [1.0, 0.5]
    beta = np.zeros((p, 1))
    beta[:2, 0] = [1.0, -0.5]
    pen = PenaltyConfig.uniform(1.0)
    base = check_eic(ds, coefficients(alpha, beta), pen, 0, 0)

    columns = [0, 1, *order]
    shuffled = assemble_dataset(x, m[:, columns], np.zeros((n, 1)))
    report = check_eic(shuffled, coefficients(alpha[:, columns], beta[columns]), pen, 0, 0)
    assert report.value_beta == pytest.approx(base.value_beta, rel=1e-12)
    assert report.value_alpha == pytest.approx(base.value_alpha, rel=1e-12)
    assert report.support_size_beta == base.support_size_beta == 2


@settings(max_examples=30, deadline=None)
@given(factor=st.floats(min_value=-10.0, max_value=10.0, allow_nan=False))
def test_statistics_are_linear_in_the_deviation(factor):
    rng = np.random.default_rng(5)
    n = 30
    x = rng.normal(size=(n, 3))
    m = rng.normal(size=(n, 2))
    ds = assemble_dataset(x, m, np.zeros((n, 1)))
    truth = coefficients(alpha=[[1.0, 0.5], [0.5, 1.0], [0.0, 1.0]], beta=[[1.0], [-0.5]])
    shift_alpha = rng.normal(size=(3, 2))
    shift_beta = rng.normal(size=(2, 1))
    unit = coefficients(truth.alpha + shift_alpha, truth.beta + shift_beta)
    scaled = coefficients(truth.alpha + factor * shift_alpha, truth.beta + factor * shift_beta)
    assert standardized_beta_stat(ds, truth, scaled, 0, lambda2=3.0) == pytest.approx(
        factor * standardized_beta_stat(ds, truth, unit, 0, lambda2=3.0), rel=1e-9, abs=1e-9)
    assert standardized_alpha_stat(ds, truth, scaled, 1, lambda2=3.0) == pytest.approx(
        factor * standardized_alpha_stat(ds, truth, unit, 1, lambda2=3.0), rel=1e-9, abs=1e-9)


def test_zero_noise_bootstrap_is_fully_stable():
    # every mediator is an exact multiple of the single exposure
    rng = np.random.default_rng(41)
    n = 200
    x = rng.normal(size=(n, 1))
    m = x @ np.array([[1.0, -2.0]])
    y = x @ np.array([[3.0, -2.0]])
    ds = assemble_dataset(x, m, y)
    pen = PenaltyConfig(lambda_m1=1.0, lambda_m2=1.0, lambda_y1=1.0, lambda_y2=50.0)
    br = bootstrap_indirect(ds, pen, replicates=10, seed=6, exempt_intercept=True)
    assert br.failed == 0
    assert stability_index(br) == 1.0
    np.testing.assert_array_equal(np.sign(br.replicates), np.broadcast_to([[[1.0, -1.0]]], br.replicates.shape))


class TestFitScale:
    PEN = PenaltyConfig(lambda_m1=0.5, lambda_m2=20.0, lambda_y1=0.5, lambda_y2=20.0)

    def test_beta_stat_ignores_mediator_units(self, blocks):
        units = np.array([0.1, 3.0, 10.0, 0.5, 2.0])
        ds = dataset_from(blocks)
        rescaled = dataset_from(dict(blocks, m=blocks["m"] * units))
        truth = coefficients(blocks["alpha"], blocks["beta"], s=ds.s)
        rescaled_truth = coefficients(blocks["alpha"] * units, blocks["beta"] / units[:, None], s=ds.s)
        for k in range(ds.t):
            value = standardized_beta_stat(ds, truth, fit_mmm(ds, self.PEN), k)
            other = standardized_beta_stat(rescaled, rescaled_truth, fit_mmm(rescaled, self.PEN), k)
            assert other == pytest.approx(value, rel=1e-6, abs=1e-9)

    def test_exposure_statistics_ignore_exposure_units(self, blocks):
        units = np.array([4.0, 0.25, 1.0, 7.0, 0.5])
        ds = dataset_from(blocks)
        rescaled = dataset_from(dict(blocks, x=blocks["x"] * units))
        truth = coefficients(blocks["alpha"], blocks["beta"], s=ds.s)
        rescaled_truth = coefficients(blocks["alpha"] / units[:, None], blocks["beta"], s=ds.s)
        fit, refit = fit_mmm(ds, self.PEN), fit_mmm(rescaled, self.PEN)
        assert standardized_alpha_stat(rescaled, rescaled_truth, refit, 0) == pytest.approx(
            standardized_alpha_stat(ds, truth, fit, 0), rel=1e-6, abs=1e-9)
        assert standardized_mediation_stat(rescaled, rescaled_truth, refit, 0).value == pytest.approx(
            standardized_mediation_stat(ds, truth, fit, 0).value, rel=1e-6, abs=1e-9)

    def test_diagnostic_bounds_ignore_mediator_units(self, blocks):
        units = np.array([0.1, 3.0, 10.0, 0.5, 2.0])
        ds = dataset_from(blocks)
        rescaled = dataset_from(dict(blocks, m=blocks["m"] * units))
        first = run_diagnostics(ds, fit_mmm(ds, self.PEN), self.PEN, pairs=[])
        second = run_diagnostics(rescaled, fit_mmm(rescaled, self.PEN), self.PEN, pairs=[])
        for k, bound in first.mse_bounds.items():
            assert second.mse_bounds[k] == pytest.approx(bound, rel=1e-6)
