"""
收敛速率理论
闭式速率函数、稳定区域、方差邻域系数以及有限和反例的代数
"""

import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import InternalError, OutOfRegionError, UnsupportedProblemError
from core.linalg import DOUBLE_ROOT_RTOL, Mat2, SymMatrix
from core.problems import FiniteSumProblem, Quadratic

R_GRID_POINTS = 1024


@dataclass(frozen=True)
class OptimizerParams:
    """步长 alpha 与动量 beta"""
    alpha: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise OutOfRegionError(f"alpha must be positive and finite, got {self.alpha}")
        if not abs(self.beta) < 1:
            raise ValueError(f"|beta| must be < 1, got {self.beta}")

    @property
    def is_sgd(self) -> bool:
        return self.beta == 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class SpectrumBounds:
    """强凸模 mu 与光滑常数 L"""
    mu: float
    L: float

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "L", float(self.L))
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.L >= self.mu:
            raise ValueError(f"L must be >= mu, got L={self.L}, mu={self.mu}")

    @property
    def Q(self) -> float:
        return self.L / self.mu

    @classmethod
    def from_condition(cls, Q: float, L: float = 1.0) -> "SpectrumBounds":
        return cls(mu=L / Q, L=L)

    def to_dict(self) -> Dict[str, float]:
        return {"mu": self.mu, "L": self.L, "Q": self.Q}


@dataclass(frozen=True)
class RateReport:
    """单个 (alpha, beta, mu, L) 的理论结果；不稳定时 variance_coeff 与 c_epsilon 为 None"""
    rho: float
    stable: bool
    variance_coeff: Optional[float]
    c_epsilon: Optional[float]
    spectral_norm_rate: float

    @property
    def status(self) -> str:
        return "stable" if self.stable else "unstable"

    @property
    def neighborhood(self) -> Optional[float]:
        """sqrt(C_eps * 方差系数)，距离/sigma 的单位"""
        if not self.stable:
            return None
        return math.sqrt(self.c_epsilon * self.variance_coeff)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["status"] = self.status
        return data


@dataclass(frozen=True)
class SegmentPattern:
    """两次取到高曲率批次之间的间隔 (k_1, ..., k_s)"""
    k_list: Tuple[int, ...]

    def __post_init__(self):
        k_list = tuple(int(k) for k in self.k_list)
        if not k_list:
            raise ValueError("pattern needs at least one segment")
        if any(k < 1 for k in k_list):
            raise ValueError("every k_l must be >= 1 (no consecutive inconsistent batches)")
        object.__setattr__(self, "k_list", k_list)

    @property
    def s(self) -> int:
        return len(self.k_list)

    @property
    def k_total(self) -> int:
        return sum(self.k_list) + self.s


def _damping_gap(t: float, alpha_lam: float, beta: float) -> float:
    """
    (1+beta)^2 t - 4 beta，判别式为 t 乘以它
    落在输入舍入误差范围内时取 0：t = 1 - alpha*lambda 的绝对误差约 eps*(1 + alpha*lambda)，
    经 d/dt = (1+beta)^2 传到这里
    """
    s = (1.0 + beta) ** 2
    gap = s * t - 4.0 * beta
    if abs(gap) <= DOUBLE_ROOT_RTOL * (s * (1.0 + abs(alpha_lam) + abs(t)) + 4.0 * abs(beta)):
        return 0.0
    return gap


def delta_lambda(lam: float, p: OptimizerParams) -> float:
    t = 1.0 - p.alpha * lam
    return t * _damping_gap(t, p.alpha * lam, p.beta)


def rho_lambda(lam: float, p: OptimizerParams) -> float:
    """B(lambda) 的谱半径，分实根与复根两支"""
    t = 1.0 - p.alpha * lam
    delta = t * _damping_gap(t, p.alpha * lam, p.beta)
    if delta >= 0.0:
        return 0.5 * abs((1.0 + p.beta) * t) + 0.5 * math.sqrt(delta)
    bt = p.beta * t
    if bt < 0.0:
        raise InternalError(f"negative discriminant with beta*(1-alpha*lambda)={bt} < 0")
    return math.sqrt(bt)


def rho(b: SpectrumBounds, p: OptimizerParams) -> float:
    # rho_lambda 关于 lambda 拟凸，最大值在端点
    return max(rho_lambda(b.mu, p), rho_lambda(b.L, p))


def variance_coeff(b: SpectrumBounds, p: OptimizerParams) -> float:
    r = rho(b, p)
    if r >= 1.0:
        raise OutOfRegionError(f"rho={r:.6g} >= 1 for alpha={p.alpha:.6g}, beta={p.beta:.6g}")
    return p.alpha ** 2 * ((1.0 + p.beta) ** 2 + 1.0) / (1.0 - r * r)


def c_epsilon_estimate(norm_A: float, rho_value: float) -> float:
    if rho_value < 0 or norm_A < rho_value * (1.0 - 1e-12):
        raise ValueError(f"need norm_A >= rho >= 0, got norm_A={norm_A}, rho={rho_value}")
    return 1.0 + (1.0 - rho_value ** 2) * (norm_A ** 2 - rho_value ** 2)


def nesterov_defaults(b: SpectrumBounds) -> OptimizerParams:
    sq = math.sqrt(b.Q)
    return OptimizerParams(alpha=1.0 / b.L, beta=(sq - 1.0) / (sq + 1.0))


def _c_lambda(lam, p: OptimizerParams):
    return (1.0 - p.alpha * (1.0 + p.beta) * lam) ** 2 + (p.alpha * lam) ** 2 + p.beta ** 2 * (p.beta ** 2 + 1.0)


def big_R_lambda(lam: float, p: OptimizerParams) -> float:
    """B(lambda) 的谱范数"""
    c = _c_lambda(lam, p)
    det = p.beta * (1.0 - p.alpha * lam)
    delta = c * c - 4.0 * det * det
    if delta < -1e-12 * c * c:
        raise InternalError(f"negative discriminant {delta} in spectral-norm rate")
    return math.sqrt(0.5 * (c + math.sqrt(max(delta, 0.0))))


def big_R(b: SpectrumBounds, p: OptimizerParams, grid_points: int = R_GRID_POINTS) -> float:
    """
    R(alpha, beta) = max_{lambda in [mu, L]} R_lambda
    R_lambda 没有拟凸性保证，取两端点加对数均匀网格上的最大值
    """
    if b.mu == b.L:
        return big_R_lambda(b.mu, p)
    lam = np.geomspace(b.mu, b.L, grid_points)
    c = _c_lambda(lam, p)
    det = p.beta * (1.0 - p.alpha * lam)
    values = np.sqrt(0.5 * (c + np.sqrt(np.maximum(c * c - 4.0 * det * det, 0.0))))
    return float(max(values.max(), big_R_lambda(b.mu, p), big_R_lambda(b.L, p)))


def sgd_finite_sum_rate(b: SpectrumBounds, alpha: float) -> float:
    if not 0 < alpha < 2.0 / b.L:
        raise OutOfRegionError(f"need 0 < alpha < 2/L = {2.0 / b.L:.6g}, got {alpha}")
    return max(abs(1.0 - alpha * b.mu), abs(1.0 - alpha * b.L))


def b_matrix(lam: float, p: OptimizerParams) -> Mat2:
    return Mat2.transition(lam, p.alpha, p.beta)


def _nesterov_ratio(b: SpectrumBounds) -> float:
    sq = math.sqrt(b.Q)
    return (sq - 1.0) / sq


def b_mu_power_closed_form(b: SpectrumBounds, k: int) -> Mat2:
    """Nesterov 参数下 B(mu)^k 的 Jordan 闭式（0^0 取 1）"""
    if k < 1:
        raise ValueError("k must be >= 1")
    sq = math.sqrt(b.Q)
    r = _nesterov_ratio(b)
    beta = (sq - 1.0) / (sq + 1.0)
    rk = r ** k
    rk1 = r ** (k - 1)
    return Mat2(
        (1.0 + k / (sq + 1.0)) * rk,
        k * beta * beta * rk1,
        -(k / b.Q) * rk1,
        (1.0 - k / (sq + 1.0)) * rk,
    )


def lemma1_product(b: SpectrumBounds, pattern: SegmentPattern) -> Mat2:
    """显式乘积 B(L) B(mu)^{k_1} ... B(L) B(mu)^{k_s}"""
    p = nesterov_defaults(b)
    b_L = b_matrix(b.L, p)
    b_mu = b_matrix(b.mu, p)
    product = Mat2.identity()
    for k in pattern.k_list:
        product = product @ b_L @ b_mu.power(k)
    return product


def lemma1_rho(b: SpectrumBounds, pattern: SegmentPattern) -> float:
    return _nesterov_ratio(b) ** pattern.k_total * math.prod(pattern.k_list)


def divergence_factor(b: SpectrumBounds, n: int) -> float:
    if n < 2:
        raise ValueError("n must be >= 2")
    return _nesterov_ratio(b) * (n - 1.0) ** (1.0 / n)


def sigma_star(fs: FiniteSumProblem) -> float:
    """最优点处各分量梯度范数的平均"""
    if not isinstance(fs, FiniteSumProblem) or not all(isinstance(q, Quadratic) for q in fs.components):
        raise UnsupportedProblemError("sigma_star needs a finite sum of quadratics with a computable minimizer")
    x_star = fs.aggregate.x_star
    norms = [float(np.linalg.norm(q.H.matvec(x_star) - q.b)) for q in fs.components]
    return float(np.mean(norms))


def state_transition_matrix(h: SymMatrix, p: OptimizerParams) -> np.ndarray:
    """二次问题递推的 2d x 2d 矩阵 A"""
    d = h.dim
    eye = np.eye(d)
    a = np.zeros((2 * d, 2 * d))
    a[:d, :d] = eye - p.alpha * (1.0 + p.beta) * h.entries
    a[:d, d:] = p.beta ** 2 * eye
    a[d:, :d] = -p.alpha * h.entries
    a[d:, d:] = p.beta * eye
    return a


def rate_report(b: SpectrumBounds, p: OptimizerParams, grid_points: int = R_GRID_POINTS) -> RateReport:
    """一个热图像素的理论值；||A|| 用 R(alpha, beta) 近似"""
    r = rho(b, p)
    big = big_R(b, p, grid_points)
    if r >= 1.0:
        return RateReport(rho=r, stable=False, variance_coeff=None, c_epsilon=None, spectral_norm_rate=big)
    return RateReport(
        rho=r,
        stable=True,
        variance_coeff=variance_coeff(b, p),
        c_epsilon=c_epsilon_estimate(max(big, r), r),
        spectral_norm_rate=big,
    )


def nesterov_variance_coeff(b: SpectrumBounds) -> float:
    sq = math.sqrt(b.Q)
    Q = b.Q
    return (5 * Q * Q + 2 * Q * sq + Q) / ((sq + 1.0) ** 2 * (2.0 * sq - 1.0)) / b.L ** 2


def nesterov_gap_neighborhood(b: SpectrumBounds, sigma: float, c_eps: float = 1.0) -> float:
    """Nesterov 参数下函数值间隙的方差邻域"""
    return 0.5 * b.L * c_eps * nesterov_variance_coeff(b) * sigma ** 2


def sgd_stochapprox_rate(b: SpectrumBounds) -> float:
    return (b.Q - 1.0) / (b.Q + 1.0)


def sgd_stochapprox_neighborhood(b: SpectrumBounds, sigma: float) -> float:
    """alpha = 2/(mu+L) 时 SGD 函数值间隙邻域 Q sigma^2 / (2L)"""
    return b.Q * sigma ** 2 / (2.0 * b.L)


ArrayLike = Union[int, Sequence[int], np.ndarray]


def asg_distance_bound(b: SpectrumBounds, p: OptimizerParams, k: ArrayLike, x0_dist: float,
                       sigma: float, c_eps: float = 1.0, eps: float = 0.0) -> np.ndarray:
    """E||y_{k+1} - x*||^2 的上界序列"""
    k = np.asarray(k, dtype=float)
    r = rho(b, p)
    return c_eps * ((r + eps) ** (2 * k) * x0_dist ** 2 + variance_coeff(b, p) * sigma ** 2)


def finite_sum_neighborhood(b: SpectrumBounds, p: OptimizerParams, sigma: float) -> float:
    big = big_R(b, p)
    if big >= 1.0:
        raise OutOfRegionError(f"R={big:.6g} >= 1 for alpha={p.alpha:.6g}, beta={p.beta:.6g}")
    return p.alpha * math.sqrt((1.0 + p.beta) ** 2 + 1.0) * sigma / (1.0 - big)


def finite_sum_bound(b: SpectrumBounds, p: OptimizerParams, k: ArrayLike, y1_dist: float,
                     sigma: float) -> np.ndarray:
    """E||y_{k+1} - x*|| <= R^k ||y_1 - x*|| + 邻域"""
    k = np.asarray(k, dtype=float)
    tail = finite_sum_neighborhood(b, p, sigma)
    return big_R(b, p) ** k * y1_dist + tail


def sgd_finite_sum_bound(b: SpectrumBounds, alpha: float, k: ArrayLike, y0_dist: float,
                         sigma: float) -> np.ndarray:
    """SGD 有限和界：varrho^k ||y_0 - x*|| + alpha sigma / (1 - varrho)"""
    k = np.asarray(k, dtype=float)
    rate = sgd_finite_sum_rate(b, alpha)
    return rate ** k * y0_dist + alpha * sigma / (1.0 - rate)
