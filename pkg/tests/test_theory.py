import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from core.errors import OutOfRegionError, UnsupportedProblemError
from core.linalg import spectral_norm2, spectral_radius2
from core.problems import counterexample_finite_sum, partitioned_least_squares, worst_case_quadratic
from core.theory import (
    OptimizerParams,
    SegmentPattern,
    SpectrumBounds,
    asg_distance_bound,
    b_matrix,
    b_mu_power_closed_form,
    big_R,
    big_R_lambda,
    c_epsilon_estimate,
    delta_lambda,
    divergence_factor,
    finite_sum_bound,
    finite_sum_neighborhood,
    lemma1_product,
    lemma1_rho,
    nesterov_defaults,
    nesterov_variance_coeff,
    rate_report,
    rho,
    rho_lambda,
    sgd_finite_sum_bound,
    sgd_finite_sum_rate,
    sgd_stochapprox_neighborhood,
    sgd_stochapprox_rate,
    sigma_star,
    variance_coeff,
)

conditions = st.floats(1.01, 5000.0)


def test_params_validation():
    for alpha in (-0.1, 0.0, math.inf, math.nan):
        with pytest.raises(OutOfRegionError):
            OptimizerParams(alpha, 0.0)
    with pytest.raises(ValueError):
        OptimizerParams(0.1, 1.0)
    with pytest.raises(ValueError):
        SpectrumBounds(0.0, 1.0)
    with pytest.raises(ValueError):
        SpectrumBounds(2.0, 1.0)
    assert OptimizerParams(0.1, 0.0).is_sgd
    assert SpectrumBounds.from_condition(8.0, 2.0).Q == pytest.approx(8.0)


@given(Q=conditions)
def test_nesterov_rate_closed_form(Q):
    b = SpectrumBounds.from_condition(Q)
    expected = (math.sqrt(Q) - 1.0) / math.sqrt(Q)
    assert rho(b, nesterov_defaults(b)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("Q", [1.001, 1.00601, 1.01, 1.5, 2.0, 4.0, 8.0, 32.0, 2000.0])
def test_nesterov_rate_near_critical_damping(Q):
    # lambda = mu 处两根重合，t = 1 - 1/Q 很小时判别式只剩舍入误差
    b = SpectrumBounds.from_condition(Q)
    p = nesterov_defaults(b)
    expected = (math.sqrt(Q) - 1.0) / math.sqrt(Q)
    assert rho(b, p) == pytest.approx(expected, abs=1e-12)
    assert delta_lambda(b.mu, p) == 0.0


def test_known_rates():
    b4 = SpectrumBounds(1.0, 4.0)
    assert rho(b4, nesterov_defaults(b4)) == pytest.approx(0.5, abs=1e-12)
    b8 = SpectrumBounds.from_condition(8.0)
    assert rho(b8, nesterov_defaults(b8)) == pytest.approx(0.64644, abs=1e-5)


def test_sgd_rate_at_optimal_step():
    b = SpectrumBounds(1.0, 9.0)
    p = OptimizerParams(2.0 / (b.mu + b.L), 0.0)
    assert rho(b, p) == pytest.approx(sgd_stochapprox_rate(b), abs=1e-12)
    assert sgd_finite_sum_rate(b, p.alpha) == pytest.approx(0.8)


@settings(max_examples=100)
@given(lam=st.floats(0.01, 10.0), alpha=st.floats(1e-4, 0.5), beta=st.floats(-0.95, 0.95))
def test_closed_forms_match_2x2(lam, alpha, beta):
    p = OptimizerParams(alpha, beta)
    m = b_matrix(lam, p)
    assert rho_lambda(lam, p) == pytest.approx(spectral_radius2(m), abs=1e-12)
    assert big_R_lambda(lam, p) == pytest.approx(spectral_norm2(m), abs=1e-12)


@settings(max_examples=50)
@given(Q=conditions, alpha=st.floats(1e-3, 2.5), beta=st.floats(-0.95, 0.95))
def test_rho_is_max_over_spectrum(Q, alpha, beta):
    b = SpectrumBounds.from_condition(Q)
    p = OptimizerParams(alpha, beta)
    grid = np.geomspace(b.mu, b.L, 200)
    assert rho(b, p) >= max(rho_lambda(lam, p) for lam in grid) - 1e-12
    assert big_R(b, p) >= rho(b, p) - 1e-12


def test_delta_sign_selects_branch():
    p = OptimizerParams(0.1, 0.5)
    assert delta_lambda(0.0, p) > 0
    assert delta_lambda(5.0, p) < 0


def test_rate_report_unstable_has_no_coefficients():
    report = rate_report(SpectrumBounds(1.0, 4.0), OptimizerParams(0.9, 0.5))
    assert not report.stable
    assert report.status == "unstable"
    assert report.neighborhood is None
    assert report.to_dict()["variance_coeff"] is None


def test_rate_report_stable():
    b = SpectrumBounds(1.0, 16.0)
    report = rate_report(b, nesterov_defaults(b))
    assert report.stable
    assert report.rho == pytest.approx(0.75)
    assert report.c_epsilon >= 1.0
    assert report.neighborhood == pytest.approx(math.sqrt(report.c_epsilon * report.variance_coeff))


def test_variance_coeff_out_of_region():
    with pytest.raises(OutOfRegionError):
        variance_coeff(SpectrumBounds(1.0, 4.0), OptimizerParams(0.9, 0.5))


def test_c_epsilon_estimate():
    assert c_epsilon_estimate(0.5, 0.5) == pytest.approx(1.0)
    assert c_epsilon_estimate(1.0, 0.5) == pytest.approx(1.0 + 0.75 * 0.75)
    with pytest.raises(ValueError):
        c_epsilon_estimate(0.1, 0.5)


def test_nesterov_variance_coeff_is_finite_and_positive():
    b = SpectrumBounds.from_condition(16.0)
    assert 0 < nesterov_variance_coeff(b) < math.inf


def test_divergence_factor_values():
    b = SpectrumBounds(0.05, 100.0)
    assert divergence_factor(b, 50) == pytest.approx(1.05678, abs=1e-4)
    assert divergence_factor(b, 1000) == pytest.approx(0.98441, abs=1e-4)
    with pytest.raises(ValueError):
        divergence_factor(b, 1)


def test_divergence_factor_decreases_in_n():
    # (n-1)^(1/n) peaks between n = 4 and n = 5
    b = SpectrumBounds(0.05, 100.0)
    assert divergence_factor(b, 4) < divergence_factor(b, 5)
    values = [divergence_factor(b, n) for n in range(5, 400)]
    assert all(a > c for a, c in zip(values, values[1:]))


def test_segment_pattern_validation():
    assert SegmentPattern((2, 3)).k_total == 7
    assert SegmentPattern((2, 3)).s == 2
    with pytest.raises(ValueError):
        SegmentPattern(())
    with pytest.raises(ValueError):
        SegmentPattern((0, 2))


def test_lemma1_single_segment_q4():
    assert lemma1_rho(SpectrumBounds.from_condition(4.0), SegmentPattern((1,))) == pytest.approx(0.25)


@settings(max_examples=60)
@given(Q=st.sampled_from([4.0, 16.0, 100.0]),
       k_list=st.lists(st.integers(1, 6), min_size=1, max_size=5))
def test_lemma1_matches_explicit_product(Q, k_list):
    b = SpectrumBounds.from_condition(Q)
    pattern = SegmentPattern(tuple(k_list))
    closed = lemma1_rho(b, pattern)
    assert spectral_radius2(lemma1_product(b, pattern)) == pytest.approx(closed, rel=1e-8)


@pytest.mark.parametrize("Q", [4.0, 16.0, 100.0])
def test_jordan_power_closed_form(Q):
    b = SpectrumBounds.from_condition(Q)
    m = b_matrix(b.mu, nesterov_defaults(b))
    for k in range(1, 30):
        assert b_mu_power_closed_form(b, k).max_abs_diff(m.power(k)) < 1e-10
    with pytest.raises(ValueError):
        b_mu_power_closed_form(b, 0)


def test_sgd_finite_sum_rate_region():
    b = SpectrumBounds(1.0, 10.0)
    with pytest.raises(OutOfRegionError):
        sgd_finite_sum_rate(b, 0.2)
    with pytest.raises(OutOfRegionError):
        sgd_finite_sum_rate(b, 0.0)


def test_sgd_neighborhood_formula():
    b = SpectrumBounds(1.0, 3.0)
    assert sgd_stochapprox_neighborhood(b, 0.1) == pytest.approx(3 * 0.01 / 6)


def test_bounds_are_monotone_in_k():
    b = SpectrumBounds(1.0, 10.0)
    p = nesterov_defaults(b)
    k = np.arange(50)
    dist = asg_distance_bound(b, p, k, 10.0, 0.1)
    assert np.all(np.diff(dist) <= 0)
    sgd = sgd_finite_sum_bound(b, 2.0 / 11.0, k, 10.0, 0.5)
    assert np.all(np.diff(sgd) <= 0)
    assert sgd[-1] > 2.0 / 11.0 * 0.5 / (1 - 9.0 / 11.0) - 1e-12


def test_finite_sum_bound_needs_contractive_norm():
    b = SpectrumBounds(1.0, 10.0)
    p = OptimizerParams(0.05, 0.0)
    assert big_R(b, p) < 1
    values = finite_sum_bound(b, p, [0, 1, 2], 1.0, 0.1)
    assert values[0] == pytest.approx(1.0 + finite_sum_neighborhood(b, p, 0.1))
    with pytest.raises(OutOfRegionError):
        finite_sum_neighborhood(b, OptimizerParams(0.1, 0.9), 0.1)


def test_sigma_star_zero_under_interpolation():
    assert sigma_star(counterexample_finite_sum(10, 0.1, 1.0)) == pytest.approx(0.0, abs=1e-12)
    fs = partitioned_least_squares(0, n_samples=200, n_batches=10)
    assert sigma_star(fs) > 0


def test_sigma_star_rejects_plain_quadratic():
    with pytest.raises(UnsupportedProblemError):
        sigma_star(worst_case_quadratic(4, 1.0, 2.0))


@given(Q=conditions)
def test_nesterov_rate_beats_sgd(Q):
    assume(Q > 1.5)
    b = SpectrumBounds.from_condition(Q)
    assert rho(b, nesterov_defaults(b)) < sgd_stochapprox_rate(b) + 1e-12


def test_variance_coeff_sgd_and_nesterov_forms():
    b = SpectrumBounds(1.0 / 3.0, 1.0)
    sgd = variance_coeff(b, OptimizerParams(2.0 / (b.mu + b.L), 0.0))
    assert sgd == pytest.approx(2.0 * b.Q / b.L ** 2, rel=1e-12)
    assert sgd * b.L / 4.0 == pytest.approx(sgd_stochapprox_neighborhood(b, 1.0), rel=1e-12)
    b16 = SpectrumBounds.from_condition(16.0, 2.0)
    assert variance_coeff(b16, nesterov_defaults(b16)) == pytest.approx(nesterov_variance_coeff(b16), rel=1e-12)
