import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import approx_fprime

from core.errors import DimensionError, UnsupportedProblemError
from core.linalg import sym_eigen
from core.problems import (
    GENERATOR_VERSION,
    FiniteSumProblem,
    SamplingVector,
    counterexample_finite_sum,
    grad_exact,
    grad_gaussian,
    grad_minibatch,
    logreg_problem,
    partitioned_least_squares,
    problem_from_dict,
    random_least_squares,
    sampling_schedule,
    schedule_segments,
    schedule_vectors,
    worst_case_quadratic,
)


def test_worst_case_spectrum_inside_bounds():
    q = worst_case_quadratic(30, 0.1, 10.0)
    eig = sym_eigen(q.H).eigenvalues
    assert eig[0] >= 0.1 - 1e-12
    assert eig[-1] <= 10.0 + 1e-12
    assert q.verify_spectrum()
    assert np.allclose(q.gradient(q.x_star), 0.0, atol=1e-9)


def test_worst_case_rejects_bad_arguments():
    with pytest.raises(ValueError):
        worst_case_quadratic(1, 0.1, 1.0)
    with pytest.raises(ValueError):
        worst_case_quadratic(5, 1.0, 1.0)


def test_quadratic_value_and_gradient(small_least_squares):
    q = small_least_squares
    y = np.linspace(-1.0, 1.0, q.dim)
    assert q.value(q.x_star) == pytest.approx(q.f_star)
    assert q.value(y) >= q.f_star
    numeric = approx_fprime(y, q.value, 1e-7)
    assert np.allclose(q.gradient(y), numeric, atol=1e-4)
    with pytest.raises(DimensionError):
        q.gradient(np.zeros(q.dim + 1))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000), Q=st.floats(1.5, 200.0))
def test_random_least_squares_hits_condition_number(seed, Q):
    q = random_least_squares(seed, n_samples=40, n_features=6, Q_target=Q)
    eig = sym_eigen(q.H).eigenvalues
    assert eig[0] == pytest.approx(q.mu, rel=1e-8)
    assert eig[-1] == pytest.approx(q.L, rel=1e-8)


def test_random_least_squares_is_seeded():
    a = random_least_squares(3, n_samples=30, n_features=4)
    b = random_least_squares(3, n_samples=30, n_features=4)
    c = random_least_squares(4, n_samples=30, n_features=4)
    assert np.array_equal(a.H.entries, b.H.entries)
    assert not np.array_equal(a.H.entries, c.H.entries)


def test_counterexample_structure(counterexample_n50):
    fs = counterexample_n50
    assert fs.n == 50 and fs.dim == 3
    assert fs.interpolation
    assert np.allclose(fs.x_star, np.ones(3) / np.sqrt(3.0))
    for q in fs.components:
        assert np.allclose(q.gradient(fs.x_star), 0.0, atol=1e-12)
    assert fs.components[-1].H.entries[2, 2] == 100.0
    assert fs.components[0].H.entries[2, 2] == 0.05
    assert fs.component_bounds() == (pytest.approx(0.05), pytest.approx(100.0))


def test_counterexample_needs_three_terms():
    with pytest.raises(ValueError):
        counterexample_finite_sum(2, 0.05, 100.0)


def test_partitioned_least_squares_batches():
    fs = partitioned_least_squares(0, n_samples=500, n_features=2, n_batches=10, Q=16.0)
    assert fs.n == 10
    for q in fs.components:
        eig = sym_eigen(q.H).eigenvalues
        assert eig[-1] / eig[0] == pytest.approx(16.0, rel=1e-8)
    with pytest.raises(ValueError):
        partitioned_least_squares(0, n_samples=501, n_batches=10)


def test_interpolating_partition_shares_minimizer():
    fs = partitioned_least_squares(1, n_samples=200, n_features=2, n_batches=10, interpolation=True)
    for q in fs.components:
        assert np.allclose(q.x_star, fs.x_star, atol=1e-8)


def test_finite_sum_rejects_mixed_dimensions():
    a = worst_case_quadratic(3, 1.0, 2.0)
    b = worst_case_quadratic(4, 1.0, 2.0)
    with pytest.raises(DimensionError):
        FiniteSumProblem((a, b))


def test_logreg_gradient_matches_finite_differences():
    problem = logreg_problem(0, classes=3, n_samples=30, n_features=4, n_informative=2)
    w = np.random.default_rng(0).standard_normal(problem.dim) * 0.3
    numeric = approx_fprime(w, problem.value, 1e-7)
    assert np.allclose(problem.gradient(w), numeric, atol=1e-5)


def test_logreg_hessian_is_spd_and_bounded():
    problem = logreg_problem(1, classes=3, n_samples=40, n_features=4, n_informative=2, reg=0.05)
    w = np.zeros(problem.dim)
    eig = sym_eigen(problem.hessian(w)).eigenvalues
    assert eig[0] >= 0.05 - 1e-10
    assert eig[-1] <= problem.smoothness_bound() + 1e-10
    assert np.linalg.norm(problem.gradient(problem.x_star)) < 1e-8


def test_logreg_rejects_too_many_classes():
    with pytest.raises(ValueError):
        logreg_problem(0, classes=5, n_informative=2)


@pytest.mark.parametrize("make", [
    lambda: worst_case_quadratic(5, 0.5, 4.0),
    lambda: random_least_squares(2, n_samples=20, n_features=3),
    lambda: counterexample_finite_sum(5, 0.1, 1.0),
    lambda: partitioned_least_squares(2, n_samples=40, n_batches=4),
    lambda: logreg_problem(2, classes=3, n_samples=20, n_features=4, n_informative=2),
])
def test_problem_replays_from_metadata(make):
    problem = make()
    doc = problem.to_dict()
    assert doc["generator_version"] == GENERATOR_VERSION
    replayed = problem_from_dict(doc)
    assert replayed.to_dict() == doc
    y = np.full(problem.dim, 0.3)
    assert np.array_equal(replayed.gradient(y), problem.gradient(y))


def test_problem_from_dict_rejects_unknown_generator():
    with pytest.raises(UnsupportedProblemError):
        problem_from_dict({"generator": "mystery"})


def test_gaussian_oracle_noise_level(small_least_squares, rng):
    q = small_least_squares
    y = q.x_star
    samples = np.array([grad_gaussian(q, y, 0.5, rng).value for _ in range(4000)])
    assert np.mean(np.sum(samples ** 2, axis=1)) == pytest.approx(0.25, rel=0.05)
    assert np.array_equal(grad_gaussian(q, y, 0.0, rng).value, grad_exact(q, y).value)


def test_minibatch_gradient_is_batch_average(counterexample_n50):
    fs = counterexample_n50
    y = np.array([1.0, 2.0, 3.0])
    nu = SamplingVector((0, 49), 50)
    expected = 0.5 * (fs.components[0].gradient(y) + fs.components[49].gradient(y))
    sample = grad_minibatch(fs, y, nu)
    assert np.allclose(sample.value, expected)
    assert sample.kind == "minibatch" and sample.batch == nu
    full = SamplingVector(tuple(range(50)), 50)
    assert np.allclose(grad_minibatch(fs, y, full).value, fs.gradient(y))


def test_sampling_vector_validation():
    assert SamplingVector((3, 1), 5).indices == (1, 3)
    assert SamplingVector((3, 1), 5).weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SamplingVector((1, 1), 5)
    with pytest.raises(ValueError):
        SamplingVector((5,), 5)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 20), m=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_no_repeat_schedule_never_repeats(n, m, seed):
    m = min(m, n - 1)
    schedule = sampling_schedule(n, m, 200, np.random.default_rng(seed))
    assert schedule.shape == (200, m)
    assert np.all((schedule >= 0) & (schedule < n))
    assert not any(np.array_equal(a, b) for a, b in zip(schedule, schedule[1:]))
    assert all(len(set(row)) == m for row in schedule)


def test_single_sample_schedule_is_uniform():
    schedule = sampling_schedule(5, 1, 50_000, np.random.default_rng(0), no_repeat=False)
    counts = np.bincount(schedule[:, 0], minlength=5) / 50_000
    assert np.allclose(counts, 0.2, atol=0.01)


def test_schedule_argument_checks():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sampling_schedule(3, 4, 10, rng)
    with pytest.raises(ValueError):
        sampling_schedule(3, 3, 10, rng, no_repeat=True)
    assert sampling_schedule(3, 1, 0, rng).shape == (0, 1)


def test_schedule_segments_and_vectors():
    assert schedule_segments([4, 0, 1, 4, 2, 3, 0, 4], 4) == [2, 3]
    assert schedule_segments([1, 2, 3], 4) == []
    vectors = schedule_vectors(np.array([[0], [2]]), 3)
    assert [v.indices for v in vectors] == [(0,), (2,)]


def test_minibatch_gradient_is_unbiased_over_all_batches():
    fs = counterexample_finite_sum(5, 0.1, 1.0)
    y = np.array([0.7, -1.2, 2.5])
    batches = list(itertools.combinations(range(5), 2))
    assert len(batches) == 10
    mean = sum(grad_minibatch(fs, y, SamplingVector(idx, 5)).value for idx in batches) / len(batches)
    assert np.allclose(mean, fs.gradient(y), rtol=1e-12, atol=1e-12)


def test_no_repeat_single_sample_schedule_is_uniform():
    schedule = sampling_schedule(50, 1, 200_000, np.random.default_rng(3))
    assert not np.any(schedule[1:, 0] == schedule[:-1, 0])
    counts = np.bincount(schedule[:, 0], minlength=50) / 200_000
    assert np.allclose(counts, 1.0 / 50, atol=0.002)


def test_gaussian_oracle_is_centered(small_least_squares, rng):
    q = small_least_squares
    y = np.linspace(-1.0, 1.0, q.dim)
    exact = q.gradient(y)
    draws, sigma = 100_000, 0.5
    noise = np.array([grad_gaussian(q, y, sigma, rng).value for _ in range(draws)]) - exact
    # 中心极限定理下每个分量的 4 倍标准误
    assert np.all(np.abs(noise.mean(axis=0)) <= 4.0 * (sigma / np.sqrt(q.dim)) / np.sqrt(draws))


@pytest.mark.parametrize("classes, n_samples", [(5, 100), (4, 103), (3, 20)])
def test_logreg_class_balance(classes, n_samples):
    problem = logreg_problem(3, classes=classes, n_samples=n_samples, n_features=4, n_informative=3)
    counts = np.bincount(problem.labels, minlength=classes)
    base, extra = divmod(n_samples, classes)
    assert counts.tolist() == [base + 1] * extra + [base] * (classes - extra)
