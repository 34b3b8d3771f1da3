import os
import sys

import numpy as np
import pytest

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.problems import counterexample_finite_sum, random_least_squares, worst_case_quadratic  # noqa: E402
from core.theory import SpectrumBounds  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bounds_q8():
    return SpectrumBounds.from_condition(8.0)


@pytest.fixture
def worst_case_q8(bounds_q8):
    return worst_case_quadratic(20, bounds_q8.mu, bounds_q8.L)


@pytest.fixture
def small_least_squares():
    return random_least_squares(7, n_samples=60, n_features=5, Q_target=10.0)


@pytest.fixture
def counterexample_n50():
    return counterexample_finite_sum(50, 0.05, 100.0)


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv("MOMLAB_SEED", raising=False)
