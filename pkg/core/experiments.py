"""
实验编排
(alpha, beta) 热图扫描、稳定边界、有限和发散实验、SGD 有限和界、逻辑回归扫描与分段乘积校验
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from core.errors import MomlabError, NonStationaryTailError, TooFewPointsError
from core.linalg import spectral_radius2, sym_eigen
from core.optim import OracleConfig, RecordOptions, Trajectory, run
from core.problems import (
    LogRegProblem,
    Problem,
    counterexample_finite_sum,
    partitioned_least_squares,
    random_least_squares,
)
from core.theory import (
    OptimizerParams,
    RateReport,
    SegmentPattern,
    SpectrumBounds,
    b_matrix,
    divergence_factor,
    lemma1_product,
    lemma1_rho,
    nesterov_defaults,
    rate_report,
    rho,
    sgd_finite_sum_bound,
    sgd_finite_sum_rate,
    sgd_stochapprox_neighborhood,
    sigma_star,
    b_mu_power_closed_form,
)

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 20
TAIL_SLOPE_TOL = 0.002
VANISHING_TAIL = 1e-10
INIT_DISTANCE = 1e8


# ---------------------------------------------------------------- 拟合


def fit_linear_rate(t: Trajectory, floor: float = 1e-12, min_points: int = MIN_FIT_POINTS) -> float:
    """
    log(distance) 对 k 的最小二乘斜率，只用第一次低于 floor 之前的迭代
    返回 exp(slope)
    """
    if t.diverged:
        raise TooFewPointsError(f"trajectory diverged at iteration {t.diverged_at}")
    d = np.asarray(t.distances, dtype=float)
    below = np.nonzero(d < floor if floor > 0 else d <= 0)[0]
    end = int(below[0]) if below.size else d.size
    if end < min_points:
        raise TooFewPointsError(f"only {end} points above floor {floor:.3e}, need {min_points}")
    k = np.arange(end, dtype=float)
    slope, _ = np.polyfit(k, np.log(d[:end]), 1)
    return float(math.exp(slope))


def estimate_neighborhood(t: Trajectory, sigma: float, tail_fraction: float = 0.25) -> float:
    """尾部距离均值除以 sigma；尾部必须平稳"""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    if t.diverged:
        raise NonStationaryTailError(f"trajectory diverged at iteration {t.diverged_at}")
    d = np.asarray(t.distances, dtype=float)
    n_tail = max(2, int(math.ceil(tail_fraction * d.size)))
    if d.size < n_tail:
        raise TooFewPointsError(f"trajectory of length {d.size} has no tail")
    tail = d[-n_tail:]
    mean = float(np.mean(tail))
    if mean < VANISHING_TAIL:
        return 0.0
    slope, _ = np.polyfit(np.arange(n_tail, dtype=float), np.log(np.maximum(tail, 1e-300)), 1)
    if abs(slope) > TAIL_SLOPE_TOL:
        raise NonStationaryTailError(f"tail slope {slope:.4g} is outside +/-{TAIL_SLOPE_TOL}")
    if sigma <= 0:
        raise ValueError("sigma must be positive when the tail does not vanish")
    return mean / sigma


def growth_exponent(t: Trajectory) -> float:
    """log ||(r_k, v_{k-1})|| 增量的平均值"""
    if t.state_norms is None:
        raise ValueError("trajectory was recorded without state norms")
    norms = np.asarray(t.state_norms, dtype=float)
    if norms.size < 2:
        raise TooFewPointsError("need at least two state norms")
    logs = np.log(np.maximum(norms, 1e-300))
    return float((logs[-1] - logs[0]) / (norms.size - 1))


# ---------------------------------------------------------------- 网格


@dataclass(frozen=True)
class GridSpec:
    """alpha 维 width 个点、beta 维 height 个点"""
    width: int = 32
    height: int = 32
    alpha_range: Tuple[float, float] = (0.01, 1.99)
    beta_range: Tuple[float, float] = (-0.95, 0.95)
    alpha_scale: str = "log"
    # 最近的网格节点替换为这一点，例如 Nesterov 默认参数
    anchor: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be non-empty")
        lo, hi = self.alpha_range
        if not 0 < lo <= hi:
            raise ValueError(f"alpha range must satisfy 0 < lo <= hi, got {self.alpha_range}")
        blo, bhi = self.beta_range
        if not -1 < blo <= bhi < 1:
            raise ValueError(f"beta range must lie inside (-1, 1), got {self.beta_range}")
        if self.alpha_scale not in ("log", "linear"):
            raise ValueError("alpha_scale must be 'log' or 'linear'")
        if self.anchor is not None and not (lo <= self.anchor[0] <= hi and blo <= self.anchor[1] <= bhi):
            raise ValueError(f"anchor {self.anchor} lies outside the grid")

    @classmethod
    def default_for(cls, b: SpectrumBounds, width: int = 32, height: int = 32) -> "GridSpec":
        return cls(width, height, (0.01 / b.L, 1.99 / b.L), (-0.95, 0.95))

    def alpha_values(self) -> np.ndarray:
        lo, hi = self.alpha_range
        log = self.alpha_scale == "log"
        values = np.geomspace(lo, hi, self.width) if log else np.linspace(lo, hi, self.width)
        if self.anchor is not None:
            a = self.anchor[0]
            gap = np.abs(np.log(values / a)) if log else np.abs(values - a)
            values[np.argmin(gap)] = a
        return values

    def beta_values(self) -> np.ndarray:
        values = np.linspace(self.beta_range[0], self.beta_range[1], self.height)
        if self.anchor is not None:
            values[np.argmin(np.abs(values - self.anchor[1]))] = self.anchor[1]
        return values

    def to_dict(self) -> Dict[str, Any]:
        return {"width": self.width, "height": self.height, "alpha_range": list(self.alpha_range),
                "beta_range": list(self.beta_range), "alpha_scale": self.alpha_scale,
                "anchor": None if self.anchor is None else list(self.anchor)}


@dataclass(frozen=True)
class CellResult:
    """一个像素：理论值加多次试验的经验测量"""
    theory: RateReport
    empirical_rate: Optional[float] = None
    empirical_neighborhood: Optional[float] = None
    diverged: bool = False
    rate_median: Optional[float] = None
    neighborhood_median: Optional[float] = None
    diverged_trials: int = 0
    trials: int = 0
    failure: Optional[str] = None
    hessian_min: Optional[float] = None
    hessian_max: Optional[float] = None

    def __post_init__(self):
        if self.diverged and (self.empirical_rate is not None or self.empirical_neighborhood is not None):
            raise ValueError("a diverged cell carries no empirical measurement")


@dataclass
class SweepGrid:
    """cells[i][j] 对应 beta_values[i]、alpha_values[j]"""
    alpha_values: np.ndarray
    beta_values: np.ndarray
    cells: List[List[CellResult]]
    bounds: SpectrumBounds
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.cells) != len(self.beta_values) or any(len(row) != len(self.alpha_values) for row in self.cells):
            raise ValueError("grid is not rectangular")

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.beta_values), len(self.alpha_values)

    def iter_cells(self) -> Iterable[Tuple[float, float, CellResult]]:
        for i, beta in enumerate(self.beta_values):
            for j, alpha in enumerate(self.alpha_values):
                yield float(alpha), float(beta), self.cells[i][j]

    def quantity(self, name: str) -> np.ndarray:
        """按 (beta, alpha) 排列的某个数值，缺失为 nan"""
        out = np.full(self.shape, np.nan)
        for i, row in enumerate(self.cells):
            for j, cell in enumerate(row):
                value = {
                    "theory_rho": cell.theory.rho,
                    "theory_R": cell.theory.spectral_norm_rate,
                    "theory_neighborhood": cell.theory.neighborhood,
                    "emp_rate": cell.empirical_rate,
                    "emp_neighborhood": cell.empirical_neighborhood,
                }[name]
                if value is not None:
                    out[i, j] = value
        return out

    def diverged_mask(self) -> np.ndarray:
        return np.array([[cell.diverged for cell in row] for row in self.cells], dtype=bool)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for alpha, beta, cell in self.iter_cells():
            rows.append({
                "alpha": alpha,
                "beta": beta,
                "theory_rho": cell.theory.rho,
                "theory_R": cell.theory.spectral_norm_rate,
                "theory_neighborhood": cell.theory.neighborhood,
                "emp_rate": cell.empirical_rate,
                "emp_neighborhood": cell.empirical_neighborhood,
                "diverged": int(cell.diverged),
                "emp_rate_median": cell.rate_median,
                "emp_neighborhood_median": cell.neighborhood_median,
                "diverged_trials": cell.diverged_trials,
                "trials": cell.trials,
                "hessian_min": cell.hessian_min,
                "hessian_max": cell.hessian_max,
                "failure": cell.failure or "",
            })
        return pd.DataFrame(rows)


# ---------------------------------------------------------------- 单元测量


def _cell_seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=tuple(int(k) for k in key))


def _mean_or_none(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def _median_or_none(values: List[float]) -> Optional[float]:
    return float(np.median(values)) if values else None


def measure_cell(problem: Problem, theory: RateReport, p: OptimizerParams, oracle: OracleConfig,
                 iterations: int, trials: int, seeds: Sequence[np.random.SeedSequence],
                 x0: Optional[np.ndarray] = None, norm="inf",
                 tail_fraction: float = 0.25,
                 record: Optional[RecordOptions] = None) -> Tuple[CellResult, List[Trajectory]]:
    """多次试验：过半发散则标记发散，否则平均拟合速率与邻域"""
    record = record or RecordOptions(norm=norm, batches=False)
    rates, hoods, failures = [], [], []
    trajectories = []
    n_div = 0
    for trial in range(trials):
        t = run(problem, oracle, p, iterations, seeds[trial], record, x0=x0)
        trajectories.append(t)
        if t.diverged:
            n_div += 1
            continue
        hood = None
        if oracle.sigma > 0:
            try:
                hood = estimate_neighborhood(t, oracle.sigma, tail_fraction)
                hoods.append(hood)
            except MomlabError as exc:
                failures.append(f"neighborhood: {exc}")
        floor = max(5.0 * (hood or 0.0) * oracle.sigma, 1e-12)
        try:
            rates.append(fit_linear_rate(t, floor))
        except MomlabError as exc:
            failures.append(f"rate: {exc}")

    if 2 * n_div > trials:
        return CellResult(theory, diverged=True, diverged_trials=n_div, trials=trials), trajectories
    failure = "; ".join(sorted(set(failures))) or None
    cell = CellResult(
        theory,
        empirical_rate=_mean_or_none(rates),
        empirical_neighborhood=_mean_or_none(hoods),
        rate_median=_median_or_none(rates),
        neighborhood_median=_median_or_none(hoods),
        diverged_trials=n_div,
        trials=trials,
        failure=failure,
    )
    return cell, trajectories


def _map_cells(fn: Callable[[int, int], CellResult], shape: Tuple[int, int], jobs: int) -> List[List[CellResult]]:
    keys = [(i, j) for i in range(shape[0]) for j in range(shape[1])]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda key: fn(*key), keys))
    else:
        results = [fn(i, j) for i, j in keys]
    return [results[i * shape[1]:(i + 1) * shape[1]] for i in range(shape[0])]


def heatmap_sweep(problem: Problem, b: SpectrumBounds, grid: Optional[GridSpec] = None, sigma: float = 0.05,
                  iterations: int = 2000, trials: int = 3, seed: int = 0, jobs: int = 1,
                  init_distance: float = INIT_DISTANCE) -> SweepGrid:
    """
    每个 (alpha, beta) 像素：rate_report 给出理论值，
    高斯噪声下的 ASG 多次试验给出经验速率与 inf-范数邻域
    """
    grid = grid or GridSpec.default_for(b)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    alphas, betas = grid.alpha_values(), grid.beta_values()
    x_star = np.asarray(problem.x_star, dtype=float)
    # 远离 x* 起步，留出足够的线性收敛段供拟合
    x0 = x_star + init_distance * np.ones_like(x_star)
    oracle = OracleConfig("gaussian", sigma=sigma)
    logger.info("heatmap sweep: %dx%d cells, Q=%.4g, K=%d, trials=%d", grid.width, grid.height, b.Q,
                iterations, trials)

    def cell(i: int, j: int) -> CellResult:
        p = OptimizerParams(alphas[j], betas[i])
        theory = rate_report(b, p)
        try:
            result, _ = measure_cell(problem, theory, p, oracle, iterations, trials,
                                     [_cell_seed(seed, i, j, t) for t in range(trials)], x0)
        except MomlabError as exc:
            logger.warning("cell alpha=%.4g beta=%.4g failed: %s", p.alpha, p.beta, exc)
            return CellResult(theory, trials=trials, failure=str(exc))
        return result

    cells = _map_cells(cell, (len(betas), len(alphas)), jobs)
    meta = {"Q": b.Q, "mu": b.mu, "L": b.L, "sigma": sigma, "iterations": iterations, "trials": trials,
            "seed": seed, "grid": grid.to_dict(), "init_distance": init_distance,
            "problem": problem.to_dict()}
    return SweepGrid(alphas, betas, cells, b, meta)


def stability_contour(grid: SweepGrid) -> List[Tuple[float, float]]:
    """
    rho = 1 等值线在网格边上的交点
    沿每条边用 brentq 求根，按 (log alpha, beta) 中心的极角排序成折线
    """
    b = grid.bounds
    alphas, betas = grid.alpha_values, grid.beta_values

    def excess(alpha: float, beta: float) -> float:
        return rho(b, OptimizerParams(alpha, beta)) - 1.0

    values = np.array([[excess(a, bt) for a in alphas] for bt in betas])
    points = []
    for i, beta in enumerate(betas):
        for j in range(len(alphas) - 1):
            if values[i, j] * values[i, j + 1] < 0:
                a = brentq(lambda x: excess(x, beta), alphas[j], alphas[j + 1], xtol=1e-14)
                points.append((float(a), float(beta)))
    for j, alpha in enumerate(alphas):
        for i in range(len(betas) - 1):
            if values[i, j] * values[i + 1, j] < 0:
                bt = brentq(lambda x: excess(alpha, x), betas[i], betas[i + 1], xtol=1e-14)
                points.append((float(alpha), float(bt)))
    if not points:
        return []
    xs = np.log([pt[0] for pt in points])
    ys = np.array([pt[1] for pt in points])
    angle = np.arctan2(ys - ys.mean(), xs - xs.mean())
    return [points[k] for k in np.argsort(angle, kind="stable")]


# ---------------------------------------------------------------- 发散实验


@dataclass(frozen=True)
class DivergenceSeries:
    """一个种子的反例轨迹与标注"""
    n: int
    seed_index: int
    trajectory: Trajectory
    red_points: np.ndarray
    opposite_sign: np.ndarray
    growth_exponent: float

    @property
    def diverged(self) -> bool:
        return self.trajectory.diverged

    def coord2(self) -> np.ndarray:
        return self.trajectory.per_coordinate[:, 2]

    def to_frame(self) -> pd.DataFrame:
        """列：k, coord2_value, batch_index, opposite_sign_flag"""
        t = self.trajectory
        return pd.DataFrame({
            "k": np.arange(t.iterations),
            "coord2_value": self.coord2(),
            "batch_index": t.batch_labels(),
            "opposite_sign_flag": self.opposite_sign.astype(int),
        })


@dataclass(frozen=True)
class DivergenceResult:
    n: int
    factor: float
    series: Tuple[DivergenceSeries, ...]

    @property
    def predicted_exponent(self) -> float:
        return math.log(self.factor)

    @property
    def divergent_count(self) -> int:
        return sum(s.diverged for s in self.series)

    @property
    def converged_count(self) -> int:
        return len(self.series) - self.divergent_count

    @property
    def mean_growth_exponent(self) -> float:
        return float(np.mean([s.growth_exponent for s in self.series]))

    def summary(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "divergence_factor": self.factor,
            "predicted_exponent": self.predicted_exponent,
            "mean_growth_exponent": self.mean_growth_exponent,
            "divergent_seeds": self.divergent_count,
            "seeds": len(self.series),
        }


def divergence_experiment(n_values: Sequence[int], b: SpectrumBounds, iterations: int = 1500,
                          seeds: int = 20, seed: int = 0, jobs: int = 1, m: int = 1) -> List[DivergenceResult]:
    """Nesterov 参数下的三维有限和反例，默认单样本小批量"""
    p = nesterov_defaults(b)
    record = RecordOptions(norm=2, per_coordinate=True, momentum=True, gradients=True, state_norms=True)
    oracle = OracleConfig("minibatch", minibatch_size=m)
    results = []
    for n in n_values:
        problem = counterexample_finite_sum(n, b.mu, b.L)

        def one(s: int, n: int = n, problem=problem) -> DivergenceSeries:
            t = run(problem, oracle, p, iterations, _cell_seed(seed, n, s), record)
            red = np.nonzero(np.any(t.sampled_batches == n - 1, axis=1))[0]
            opposite = np.sign(t.momentum[:, 2]) * np.sign(t.gradients[:, 2]) < 0
            return DivergenceSeries(n, s, t, red, opposite, growth_exponent(t))

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                series = tuple(pool.map(one, range(seeds)))
        else:
            series = tuple(one(s) for s in range(seeds))
        result = DivergenceResult(n, divergence_factor(b, n), series)
        logger.info("counterexample n=%d: %d/%d seeds diverged, growth %.4f (predicted %.4f)", n,
                    result.divergent_count, seeds, result.mean_growth_exponent, result.predicted_exponent)
        results.append(result)
    return results


# ---------------------------------------------------------------- SGD 有限和


@dataclass(frozen=True)
class BoundCheck:
    k: int
    empirical: float
    bound: float

    @property
    def violated(self) -> bool:
        return self.empirical > self.bound * (1.0 + 1e-9)


@dataclass(frozen=True)
class SgdFiniteSumResult:
    Q: float
    theory_rate: float
    fitted_rate: Optional[float]
    sigma_star: float
    checks: Tuple[BoundCheck, ...]
    interpolation: bool = False

    @property
    def violations(self) -> int:
        return sum(c.violated for c in self.checks)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"k": [c.k for c in self.checks], "empirical": [c.empirical for c in self.checks],
                             "bound": [c.bound for c in self.checks]})


def sgd_finite_sum_experiment(Q_values: Sequence[float], seed: int = 0, iterations: int = 1000, seeds: int = 20,
                              n_samples: int = 2500, n_batches: int = 50, n_features: int = 2,
                              noise: float = 0.1, interpolation: bool = False,
                              init_distance: float = 1e3) -> List[SgdFiniteSumResult]:
    """alpha = 2/(mu+L) 的单批次 SGD：跨种子平均距离对比有限和上界"""
    out = []
    for Q in Q_values:
        problem = partitioned_least_squares(seed, n_samples, n_features, n_batches, Q, 1.0, noise, interpolation)
        b = SpectrumBounds(problem.mu, problem.L)
        alpha = 2.0 / (b.mu + b.L)
        p = OptimizerParams(alpha, 0.0)
        x_star = problem.x_star
        x0 = x_star + init_distance * np.ones_like(x_star) / math.sqrt(x_star.size)
        # 有限和界假设每步独立均匀抽样
        oracle = OracleConfig("minibatch", minibatch_size=1, no_repeat=False)
        runs = [run(problem, oracle, p, iterations, _cell_seed(seed, int(Q), s), RecordOptions(batches=False), x0=x0)
                for s in range(seeds)]
        mean = np.mean([t.distances for t in runs], axis=0)
        s_star = sigma_star(problem)
        k = np.arange(mean.size)
        bound = sgd_finite_sum_bound(b, alpha, k, float(np.linalg.norm(x0 - x_star)), s_star)
        floor = max(5.0 * alpha * s_star / (1.0 - sgd_finite_sum_rate(b, alpha)), 1e-12)
        mean_traj = Trajectory(mean, p, seed, norm=2, problem_doc=problem.to_dict())
        try:
            fitted = fit_linear_rate(mean_traj, floor)
        except TooFewPointsError as exc:
            logger.warning("Q=%g: rate fit failed: %s", Q, exc)
            fitted = None
        checks = tuple(BoundCheck(int(i), float(e), float(u)) for i, e, u in zip(k, mean, bound))
        result = SgdFiniteSumResult(float(Q), sgd_finite_sum_rate(b, alpha), fitted, s_star, checks, interpolation)
        if result.violations:
            logger.warning("Q=%g: finite-sum bound violated at %d iterations", Q, result.violations)
        out.append(result)
    return out


@dataclass(frozen=True)
class SgdGapResult:
    """SGD 在高斯噪声下尾部函数值间隙与 Q sigma^2 / (2L) 的比较"""
    tail_mean_gap: float
    bound: float
    samples: int = 0

    @property
    def ratio(self) -> float:
        return self.tail_mean_gap / self.bound


def sgd_gap_check(Q: float = 3.0, d: int = 10, sigma: float = 0.1, iterations: int = 100_000,
                  burn_in: int = 1000, seed: int = 0) -> SgdGapResult:
    """iterations 是 burn_in 之后参与平均的步数"""
    problem = random_least_squares(seed, n_samples=max(10 * d, 50), n_features=d, Q_target=Q)
    b = SpectrumBounds(problem.mu, problem.L)
    p = OptimizerParams(2.0 / (b.mu + b.L), 0.0)
    t = run(problem, OracleConfig("gaussian", sigma=sigma), p, burn_in + iterations, seed,
            RecordOptions(objective_gap=True, batches=False), x0=problem.x_star)
    tail = t.objective_gaps[burn_in:]
    return SgdGapResult(float(np.mean(tail)), sgd_stochapprox_neighborhood(b, sigma), len(tail))


# ---------------------------------------------------------------- 逻辑回归


def hessian_extremes(problem: LogRegProblem, w: np.ndarray) -> Tuple[float, float]:
    eig = sym_eigen(problem.hessian(w)).eigenvalues
    return float(eig[0]), float(eig[-1])


def track_hessian_extremes(problem: LogRegProblem, points: Iterable[np.ndarray], every: int = 10,
                            move_tol: float = 1e-10) -> Tuple[float, float]:
    """
    沿轨迹每 every 个点算一次 Hessian 极端特征值，返回窗口内的最小、最大值
    与上一次求值点的距离不超过 move_tol * (1 + |w|) 时跳过
    """
    if every < 1:
        raise ValueError("every must be >= 1")
    lo, hi = math.inf, -math.inf
    last = None
    for k, w in enumerate(points):
        if k % every:
            continue
        if last is not None and np.linalg.norm(w - last) <= move_tol * (1.0 + np.linalg.norm(last)):
            continue
        a, b = hessian_extremes(problem, w)
        lo, hi = min(lo, a), max(hi, b)
        last = np.array(w, dtype=float)
    return lo, hi


def _gradient_descent_path(problem: LogRegProblem, iterations: int) -> Iterator[np.ndarray]:
    alpha = 1.0 / problem.smoothness_bound()
    w = np.zeros(problem.dim)
    for _ in range(iterations + 1):
        yield w
        w = w - alpha * problem.gradient(w)


def estimate_logreg_bounds(problem: LogRegProblem, iterations: int = 300, every: int = 10) -> SpectrumBounds:
    """
    参考梯度下降轨迹上每 every 步算一次 Hessian 极端特征值，
    mu 取见过的最小值、L 取最大值
    """
    lo, hi = track_hessian_extremes(problem, _gradient_descent_path(problem, iterations), every)
    a, b = hessian_extremes(problem, problem.x_star)
    lo, hi = min(lo, a), max(hi, b)
    logger.info("logistic spectrum estimate: mu=%.4g L=%.4g Q=%.4g", lo, hi, hi / lo)
    return SpectrumBounds(lo, hi)


def logreg_sweep(problem: LogRegProblem, grid: Optional[GridSpec] = None, iterations: int = 1000, seed: int = 0,
                 sigma: float = 0.0, trials: int = 1, jobs: int = 1,
                 bounds: Optional[SpectrumBounds] = None,
                 size: Tuple[int, int] = (12, 13),
                 hessian_every: int = 10) -> Tuple[SweepGrid, SpectrumBounds]:
    """
    逻辑回归上的 (alpha, beta) 扫描；每个收敛单元沿轨迹每 hessian_every 步跟踪 Hessian 极端特征值
    grid 缺省时按估计的 L 取 alpha 范围，高度为奇数才包含 beta = 0 这一行
    """
    b = bounds or estimate_logreg_bounds(problem)
    grid = grid or GridSpec.default_for(b, *size)
    alphas, betas = grid.alpha_values(), grid.beta_values()
    oracle = OracleConfig("gaussian" if sigma > 0 else "exact", sigma=sigma)
    record = RecordOptions(norm=2, per_coordinate=True, batches=False)

    def cell(i: int, j: int) -> CellResult:
        p = OptimizerParams(alphas[j], betas[i])
        theory = rate_report(b, p)
        try:
            result, runs = measure_cell(problem, theory, p, oracle, iterations, trials,
                                        [_cell_seed(seed, i, j, t) for t in range(trials)], record=record)
        except MomlabError as exc:
            logger.warning("cell alpha=%.4g beta=%.4g failed: %s", p.alpha, p.beta, exc)
            return CellResult(theory, trials=trials, failure=str(exc))
        if result.diverged:
            return result
        lo, hi = math.inf, -math.inf
        for t in runs:
            if t.diverged:
                continue
            # per_coordinate 存的是查询点 y 与 x* 之差
            path_lo, path_hi = track_hessian_extremes(problem, problem.x_star + t.per_coordinate, hessian_every)
            end_lo, end_hi = hessian_extremes(problem, t.final_x)
            lo, hi = min(lo, path_lo, end_lo), max(hi, path_hi, end_hi)
        return replace(result, hessian_min=lo, hessian_max=hi)

    cells = _map_cells(cell, (len(betas), len(alphas)), jobs)
    meta = {"Q": b.Q, "mu": b.mu, "L": b.L, "sigma": sigma, "iterations": iterations, "trials": trials,
            "seed": seed, "hessian_every": hessian_every, "grid": grid.to_dict(), "problem": problem.to_dict()}
    return SweepGrid(alphas, betas, cells, b, meta), b


def best_rate(grid: SweepGrid, momentum: bool) -> Optional[float]:
    """beta > 0 (momentum=True) 或 beta == 0 的单元里最小的经验速率"""
    rates = [cell.empirical_rate for _, beta, cell in grid.iter_cells()
             if cell.empirical_rate is not None and ((beta > 0) if momentum else abs(beta) < 1e-12)]
    return min(rates) if rates else None


# ---------------------------------------------------------------- 分段乘积


@dataclass(frozen=True)
class Lemma1Report:
    patterns: int
    max_rel_error: float
    worst_pattern: Optional[SegmentPattern]
    identity_residual: float
    power_residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "patterns": self.patterns,
            "max_rel_error": self.max_rel_error,
            "worst_pattern": list(self.worst_pattern.k_list) if self.worst_pattern else None,
            "identity_residual": self.identity_residual,
            "power_residual": self.power_residual,
        }


def lemma1_validation(Q_values: Sequence[float] = (4, 16, 100), n_patterns: int = 200, seed: int = 0,
                      max_segments: int = 5, max_k: int = 6, identity_Q: float = 16.0,
                      identity_k: int = 10) -> Lemma1Report:
    """闭式谱半径对显式乘积，以及 B(L) B(mu)^k B(L) = -r^{k+1} k B(L) 恒等式"""
    rng = np.random.default_rng(seed)
    worst, worst_pattern = 0.0, None
    for _ in range(n_patterns):
        b = SpectrumBounds.from_condition(float(rng.choice(Q_values)))
        pattern = SegmentPattern(tuple(rng.integers(1, max_k + 1, size=int(rng.integers(1, max_segments + 1)))))
        closed = lemma1_rho(b, pattern)
        numeric = spectral_radius2(lemma1_product(b, pattern))
        err = abs(closed - numeric) / closed
        if err > worst:
            worst, worst_pattern = err, pattern

    b = SpectrumBounds.from_condition(identity_Q)
    p = nesterov_defaults(b)
    big, small = b_matrix(b.L, p), b_matrix(b.mu, p)
    r = (math.sqrt(b.Q) - 1.0) / math.sqrt(b.Q)
    identity, power = 0.0, 0.0
    for k in range(1, identity_k + 1):
        lhs = big @ small.power(k) @ big
        rhs = big.scale(-(r ** (k + 1)) * k)
        identity = max(identity, lhs.max_abs_diff(rhs))
        power = max(power, b_mu_power_closed_form(b, k).max_abs_diff(small.power(k)))
    return Lemma1Report(n_patterns, worst, worst_pattern, identity, power)
