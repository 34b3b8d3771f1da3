"""
数值校验套件
每个套件由若干检查组成，检查结果用构建器汇总（通过 / 失败）
"""

import inspect
import logging
import math
import time
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from core.errors import InternalError, MomlabError, UsageError
from core.experiments import (
    CellResult,
    GridSpec,
    best_rate,
    divergence_experiment,
    heatmap_sweep,
    lemma1_validation,
    logreg_sweep,
    sgd_finite_sum_experiment,
    sgd_gap_check,
)
from core.linalg import (
    SymMatrix,
    block_diag2,
    block_diagonalize,
    build_permutation,
    gelfand_envelope,
    lu_determinant,
    rotate_to_blocks,
    spectral_norm2,
    spectral_radius2,
    sym_eigen,
)
from core.optim import OptState, StateSpaceVec, asg_step, peek_y, state_space_step
from core.problems import logreg_problem, random_least_squares, worst_case_quadratic
from core.theory import (
    OptimizerParams,
    SpectrumBounds,
    b_matrix,
    b_mu_power_closed_form,
    big_R_lambda,
    nesterov_defaults,
    rho,
    rho_lambda,
    state_transition_matrix,
)

logger = logging.getLogger(__name__)


@dataclass
class CheckStep:
    """单项检查"""
    name: str
    description: str
    status: str  # passed, failed
    measured: float
    tolerance: float
    duration: float = 0.0
    error_message: Optional[str] = None


@dataclass
class SuiteResult:
    """一个校验套件的结果"""
    suite_id: str
    name: str
    status: str
    start_time: str
    end_time: str
    duration: float
    checks: List[CheckStep]
    error_message: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.status == "passed"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class SuiteResultBuilder:
    """校验结果构建器"""

    def __init__(self, suite_id: str, name: str):
        self.suite_id = suite_id
        self.name = name
        self.start_time = datetime.now()
        self._clock = time.perf_counter()
        self.checks: List[CheckStep] = []
        self.error_message: Optional[str] = None
        self.status = "passed"

    def check(self, name: str, description: str, measured: float, tolerance: float,
              passed: Optional[bool] = None) -> "SuiteResultBuilder":
        """默认规则 measured <= tolerance"""
        ok = bool(measured <= tolerance) if passed is None else bool(passed)
        now = time.perf_counter()
        self.checks.append(CheckStep(name, description, "passed" if ok else "failed", float(measured),
                                     float(tolerance), now - self._clock,
                                     None if ok else f"{measured:.6g} outside tolerance {tolerance:.3g}"))
        self._clock = now
        if not ok:
            self.status = "failed"
        return self

    def fail(self, name: str, description: str, error_message: str) -> "SuiteResultBuilder":
        """没有测量值的失败项，例如套件中途抛出的异常"""
        now = time.perf_counter()
        self.checks.append(CheckStep(name, description, "failed", math.nan, 0.0, now - self._clock, error_message))
        self._clock = now
        self.status = "failed"
        return self

    def set_error(self, error_message: str) -> "SuiteResultBuilder":
        self.error_message = error_message
        self.status = "failed"
        return self

    def build(self) -> SuiteResult:
        end_time = datetime.now()
        return SuiteResult(
            suite_id=self.suite_id,
            name=self.name,
            status=self.status,
            start_time=self.start_time.isoformat(),
            end_time=end_time.isoformat(),
            duration=(end_time - self.start_time).total_seconds(),
            checks=self.checks,
            error_message=self.error_message,
        )


# ---------------------------------------------------------------- 套件


def closed_form_suite(builder: SuiteResultBuilder, Q_values: Sequence[float] = (2, 4, 8, 32, 2000)) -> None:
    for Q in Q_values:
        b = SpectrumBounds.from_condition(Q)
        err = abs(rho(b, nesterov_defaults(b)) - (math.sqrt(Q) - 1.0) / math.sqrt(Q))
        builder.check(f"nesterov rho Q={Q:g}", "rho at Nesterov parameters equals (sqrt(Q)-1)/sqrt(Q)", err, 1e-12)


def two_by_two_suite(builder: SuiteResultBuilder, samples: int = 1000, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    b = SpectrumBounds(1.0, 10.0)
    worst_rho, worst_norm, gelfand = 0.0, 0.0, 0.0
    for _ in range(samples):
        lam = rng.uniform(b.mu, b.L)
        p = OptimizerParams(rng.uniform(1e-6, 2.0 / b.L), rng.uniform(-0.95, 0.95))
        m = b_matrix(lam, p)
        worst_rho = max(worst_rho, abs(rho_lambda(lam, p) - spectral_radius2(m)))
        worst_norm = max(worst_norm, abs(big_R_lambda(lam, p) - spectral_norm2(m)))
        # rho^k <= ||M^k||
        gelfand = max(gelfand, max((r - n) / max(n, 1e-300) for _, r, n in gelfand_envelope(m, 10)))
    builder.check("rho_lambda", "closed form vs 2x2 eigenvalues", worst_rho, 1e-12)
    builder.check("R_lambda", "closed form vs 2x2 singular values", worst_norm, 1e-12)
    builder.check("gelfand", "rho^k never exceeds ||M^k||, k <= 10", gelfand, 1e-9)


def lemma1_suite(builder: SuiteResultBuilder, seed: int = 0) -> None:
    report = lemma1_validation(seed=seed)
    builder.check("segment products", "closed-form spectral radius vs explicit product",
                  report.max_rel_error, 1e-8)
    builder.check("rank-one identity", "B(L)B(mu)^k B(L) = -r^{k+1} k B(L), k <= 10", report.identity_residual, 1e-10)


def jordan_power_suite(builder: SuiteResultBuilder, k_max: int = 50) -> None:
    for Q in (4.0, 16.0):
        b = SpectrumBounds.from_condition(Q)
        m = b_matrix(b.mu, nesterov_defaults(b))
        worst = 0.0
        power = m
        for k in range(1, k_max + 1):
            if k > 1:
                power = power @ m
            scale = max(1e-300, float(np.max(np.abs(power.as_array()))))
            worst = max(worst, b_mu_power_closed_form(b, k).max_abs_diff(power) / scale)
        builder.check(f"B(mu)^k Q={Q:g}", "closed-form power vs repeated multiplication", worst, 1e-10)


def random_spd(rng: np.random.Generator, d: int, mu: float, L: float) -> SymMatrix:
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = rng.uniform(mu, L, size=d)
    eig[0], eig[-1] = mu, L
    h = (q * eig) @ q.T
    return SymMatrix(0.5 * (h + h.T))


def block_diag_suite(builder: SuiteResultBuilder, trials: int = 20, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    worst, det_err = 0.0, 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 9))
        h = random_spd(rng, d, 1.0, 10.0)
        p = OptimizerParams(rng.uniform(0.01, 0.19), rng.uniform(-0.9, 0.9))
        decomp = sym_eigen(h)
        a = state_transition_matrix(h, p)
        rotated = rotate_to_blocks(a, decomp.eigenvectors, build_permutation(d))
        blocks = block_diagonalize(h, p.alpha, p.beta, decomp)
        expected = block_diag2(blocks)
        worst = max(worst, float(np.max(np.abs(rotated - expected))))
        # det A = prod_j det B(lambda_j)
        det_blocks = math.prod(blk.det for blk in blocks)
        det_err = max(det_err, abs(lu_determinant(a) - det_blocks) / max(abs(det_blocks), 1e-6))
    builder.check("block diagonalization", "rotated transition matrix vs diag(B(lambda_j))", worst, 1e-10)
    builder.check("determinant", "LU determinant of A vs product of block determinants", det_err, 1e-8)


def dual_path_suite(builder: SuiteResultBuilder, problems: int = 20, steps: int = 100, seed: int = 0) -> None:
    """同一噪声序列下，ASG 的 y_k 与状态空间递推的 r_k + x* 一致"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(problems):
        d = int(rng.integers(2, 8))
        q = random_least_squares(seed + i, n_samples=4 * d, n_features=d, Q_target=float(rng.uniform(2, 50)))
        b = SpectrumBounds(q.mu, q.L)
        p = nesterov_defaults(b) if i % 2 == 0 else OptimizerParams(rng.uniform(0.1, 1.9) / b.L,
                                                                     rng.uniform(-0.5, 0.9))
        sigma = 0.0 if i % 3 == 0 else 0.1
        x0 = rng.standard_normal(d) * 3.0
        s = OptState.initial(x0)
        z = StateSpaceVec.initial(x0, q.x_star)
        noise = rng.standard_normal((steps, d)) * sigma
        for k in range(steps):
            y = peek_y(s, p)
            y_ss = z.r + q.x_star
            scale = max(1.0, float(np.linalg.norm(y)))
            worst = max(worst, float(np.linalg.norm(y - y_ss)) / scale)
            s = asg_step(s, q.gradient(y) + noise[k], p)
            z = state_space_step(z, q.gradient(y_ss) + noise[k], p)
    builder.check("dual path", "ASG iterates vs state-space recursion, 100 steps", worst, 1e-9)


def counterexample_suite(builder: SuiteResultBuilder, seeds: int = 20, iterations: int = 1500, seed: int = 0) -> None:
    b = SpectrumBounds(0.05, 100.0)
    small, large = divergence_experiment([50, 1000], b, iterations, seeds, seed)
    builder.check("n=50 divergent seeds", "seed majority hits the divergence guard",
                  small.divergent_count, 0.8 * seeds, passed=small.divergent_count >= 0.8 * seeds)
    builder.check("n=50 growth exponent", "mean growth exponent vs log(divergence factor)",
                  abs(small.mean_growth_exponent - small.predicted_exponent), 0.03)
    builder.check("n=1000 converged seeds", "seed majority stays bounded",
                  large.converged_count, 0.8 * seeds, passed=large.converged_count >= 0.8 * seeds)
    builder.check("growth ordering", "growth exponent decreases with n",
                  large.mean_growth_exponent - small.mean_growth_exponent, 0.0)


def sgd_finite_sum_suite(builder: SuiteResultBuilder, seed: int = 0, full_scale: bool = False) -> None:
    n_samples = 25000 if full_scale else 2500
    for result in sgd_finite_sum_experiment((16, 32, 64), seed=seed, n_samples=n_samples):
        builder.check(f"bound Q={result.Q:g}", "mean distance never exceeds the finite-sum bound",
                      result.violations, 0)
        rel = math.inf if result.fitted_rate is None else abs(result.fitted_rate / result.theory_rate - 1.0)
        builder.check(f"rate Q={result.Q:g}", "fitted rate within 5% of (Q-1)/(Q+1)", rel, 0.05)


def sgd_gap_suite(builder: SuiteResultBuilder, seed: int = 0) -> None:
    window = 100_000
    result = sgd_gap_check(iterations=window, seed=seed)
    builder.check("SGD gap window", "post burn-in iterations missing from the average",
                  window - result.samples, 0)
    builder.check("SGD gap", "tail mean f(y_k)-f* over 2 Q sigma^2/(2L)", result.ratio, 2.0)


def _reached_floor_early(cell: CellResult) -> bool:
    """收敛太快、在拟合所需点数之前就跌到噪声底的单元"""
    return cell.failure is not None and "points above floor" in cell.failure


def heatmap_suite(builder: SuiteResultBuilder, seed: int = 0, full_scale: bool = False, jobs: int = 1) -> None:
    d, size = (100, 32) if full_scale else (20, 8)
    for Q in (2.0, 8.0, 32.0):
        b = SpectrumBounds.from_condition(Q)
        grid = heatmap_sweep(worst_case_quadratic(d, b.mu, b.L), b, GridSpec.default_for(b, size, size),
                             sigma=0.05, iterations=2000, trials=3, seed=seed, jobs=jobs)
        rate_err, hood_ratio, missed, unmeasured = 0.0, 0.0, 0, 0
        for _, _, cell in grid.iter_cells():
            r = cell.theory.rho
            if r <= 0.95 and cell.empirical_rate is not None:
                rate_err = max(rate_err, abs(cell.empirical_rate - r))
            elif r <= 0.95 and not _reached_floor_early(cell):
                unmeasured += 1
            if r >= 1.05 and cell.diverged_trials < 0.9 * cell.trials:
                missed += 1
            if cell.theory.stable and cell.empirical_neighborhood is not None:
                hood_ratio = max(hood_ratio, cell.empirical_neighborhood / cell.theory.neighborhood)
        builder.check(f"rates Q={Q:g}", "|empirical rate - rho| on cells with rho <= 0.95", rate_err, 0.05)
        builder.check(f"coverage Q={Q:g}", "cells with rho <= 0.95 left without a rate", unmeasured, 0)
        builder.check(f"contour Q={Q:g}", "cells with rho >= 1.05 that did not diverge", missed, 0)
        builder.check(f"neighborhood Q={Q:g}", "empirical neighborhood over sqrt(C_eps * coeff)", hood_ratio, 3.0)


def logreg_suite(builder: SuiteResultBuilder, seed: int = 0, jobs: int = 1) -> None:
    problem = logreg_problem(seed, reg=0.02)
    grid, b = logreg_sweep(problem, iterations=1500, seed=seed, jobs=jobs)
    asg, sgd = best_rate(grid, True), best_rate(grid, False)
    builder.check("acceleration", f"best momentum rate below best SGD rate (Q={b.Q:.3g})",
                  (asg if asg is not None else 1.0) - (sgd if sgd is not None else 0.0), 0.0,
                  passed=asg is not None and sgd is not None and asg < sgd)


SUITES: Dict[str, Callable[..., None]] = {
    "closed_form": closed_form_suite,
    "two_by_two": two_by_two_suite,
    "lemma1": lemma1_suite,
    "jordan_power": jordan_power_suite,
    "block_diag": block_diag_suite,
    "dual_path": dual_path_suite,
    "counterexample": counterexample_suite,
    "sgd_finite_sum": sgd_finite_sum_suite,
    "sgd_gap": sgd_gap_suite,
    "heatmap": heatmap_suite,
    "logreg": logreg_suite,
}

FAST_SUITES = ("closed_form", "two_by_two", "lemma1", "jordan_power", "block_diag", "dual_path")


def run_suite(name: str, **kwargs) -> SuiteResult:
    """运行单个套件；套件内部异常记为失败，不向外抛出"""
    builder = SuiteResultBuilder(name, name.replace("_", " "))
    fn = SUITES[name]
    accepted = inspect.signature(fn).parameters
    try:
        fn(builder, **{k: v for k, v in kwargs.items() if k in accepted})
    except MomlabError as exc:
        logger.error("suite %s raised: %s", name, exc)
        builder.set_error(f"{type(exc).__name__}: {exc}")
    except Exception as exc:
        logger.exception("suite %s failed unexpectedly", name)
        error = InternalError(f"{type(exc).__name__}: {exc}")
        builder.fail("unexpected_error", "suite raised outside the library error hierarchy", str(error))
        builder.set_error(f"InternalError: {error}")
    return builder.build()


def run_validation(names: Optional[Sequence[str]] = None, seed: int = 0, full_scale: bool = False,
                   jobs: int = 1) -> List[SuiteResult]:
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown validation suites: {unknown}")
    results = []
    for name in names:
        result = run_suite(name, seed=seed, full_scale=full_scale, jobs=jobs)
        logger.info("suite %s: %s (%.1fs)", name, result.status, result.duration)
        results.append(result)
    return results


def summarize(results: Sequence[SuiteResult]) -> Dict[str, Any]:
    total = len(results)
    passed = sum(r.passed for r in results)
    return {
        "total_suites": total,
        "passed": passed,
        "failed": total - passed,
        "success_rate": round(passed / total * 100, 1) if total else 0.0,
    }
