"""
目标函数构造器
最坏情况二次函数、随机最小二乘、有限和反例、多项逻辑回归，
以及梯度预言机与小批量采样计划
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from core.errors import DimensionError, UnsupportedProblemError
from core.linalg import SymMatrix, sym_eigen

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "1"

GRADIENT_KINDS = ("exact", "gaussian-noise", "minibatch")


def _check_vector(y: np.ndarray, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (dim,):
        raise DimensionError(f"point of shape {y.shape} does not match dimension {dim}")
    return y


@dataclass(frozen=True)
class Quadratic:
    """f(x) = 1/2 x^T H x - b^T x + c"""
    H: SymMatrix
    b: np.ndarray
    c: float = 0.0
    mu: Optional[float] = None
    L: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.shape != (self.H.dim,):
            raise DimensionError(f"linear term of shape {b.shape} does not match H of dim {self.H.dim}")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.H.dim

    @cached_property
    def x_star(self) -> np.ndarray:
        x = np.linalg.solve(self.H.entries, self.b)
        x.setflags(write=False)
        return x

    @property
    def f_star(self) -> float:
        return self.value(self.x_star)

    def value(self, y: np.ndarray) -> float:
        y = _check_vector(y, self.dim)
        return float(0.5 * y @ self.H.entries @ y - self.b @ y + self.c)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return self.H.matvec(_check_vector(y, self.dim)) - self.b

    def spectrum(self) -> np.ndarray:
        return sym_eigen(self.H).eigenvalues

    def verify_spectrum(self, tol: float = 1e-8) -> bool:
        """测得的谱落在声明的 [mu, L] 内"""
        if self.mu is None or self.L is None:
            return True
        eig = self.spectrum()
        return bool(eig[0] >= self.mu - tol and eig[-1] <= self.L + tol)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "quadratic",
            "dim": self.dim,
            "mu": self.mu,
            "L": self.L,
            **self.meta,
        }


@dataclass(frozen=True)
class SamplingVector:
    """小批量采样向量：m 个下标权重为 1/m，其余为 0"""
    indices: Tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if not idx:
            raise ValueError("sampling vector needs at least one index")
        if len(set(idx)) != len(idx):
            raise ValueError("sampling vector indices must be distinct")
        if idx[0] < 0 or idx[-1] >= self.n:
            raise ValueError(f"indices must lie in [0, {self.n})")
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def weights(self) -> np.ndarray:
        w = np.zeros(self.n)
        w[list(self.indices)] = 1.0 / self.m
        return w


@dataclass(frozen=True)
class FiniteSumProblem:
    """f(x) = (1/n) sum_i f_i(x)"""
    components: Tuple[Quadratic, ...]
    minibatch_size: int = 1
    interpolation: bool = False
    mu: Optional[float] = None
    L: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("finite sum needs at least one component")
        dims = {q.dim for q in comps}
        if len(dims) != 1:
            raise DimensionError(f"components have different dimensions: {sorted(dims)}")
        if not 1 <= self.minibatch_size <= len(comps):
            raise ValueError(f"minibatch size must lie in [1, {len(comps)}], got {self.minibatch_size}")
        object.__setattr__(self, "components", comps)
        if self.interpolation:
            x0 = comps[0].x_star
            scale = 1.0 + float(np.max(np.abs(x0)))
            for q in comps[1:]:
                if np.max(np.abs(q.x_star - x0)) > 1e-8 * scale:
                    raise ValueError("interpolation flagged but components do not share a minimizer")

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @cached_property
    def aggregate(self) -> Quadratic:
        h = sum(q.H.entries for q in self.components) / self.n
        b = sum(q.b for q in self.components) / self.n
        c = sum(q.c for q in self.components) / self.n
        return Quadratic(SymMatrix(h), b, c, mu=self.mu, L=self.L, meta={"generator": "aggregate"})

    @property
    def x_star(self) -> np.ndarray:
        return self.aggregate.x_star

    def value(self, y: np.ndarray) -> float:
        return self.aggregate.value(y)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return self.aggregate.gradient(y)

    def component_bounds(self) -> Tuple[float, float]:
        """所有分量谱的最小值与最大值"""
        lo, hi = math.inf, -math.inf
        for q in self.components:
            eig = q.spectrum()
            lo = min(lo, float(eig[0]))
            hi = max(hi, float(eig[-1]))
        return lo, hi

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "finite_sum",
            "dim": self.dim,
            "n": self.n,
            "minibatch_size": self.minibatch_size,
            "interpolation": self.interpolation,
            "mu": self.mu,
            "L": self.L,
            **self.meta,
        }


@dataclass(frozen=True)
class LogRegProblem:
    """带 l2 正则的多项逻辑回归，参数为 (n_features, classes) 矩阵按行展平"""
    features: np.ndarray
    labels: np.ndarray
    classes: int
    reg: float
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=int)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DimensionError(f"features {x.shape} and labels {y.shape} disagree")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if not self.reg > 0:
            raise ValueError("reg must be positive for strong convexity")
        if y.min() < 0 or y.max() >= self.classes:
            raise ValueError("labels out of range")
        if len(np.unique(y)) != self.classes:
            raise ValueError("every class must be present at least once")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.n_features * self.classes

    @cached_property
    def _one_hot(self) -> np.ndarray:
        return np.eye(self.classes)[self.labels]

    def _weights(self, w: np.ndarray) -> np.ndarray:
        return _check_vector(w, self.dim).reshape(self.n_features, self.classes)

    def value(self, w: np.ndarray) -> float:
        wm = self._weights(w)
        z = self.features @ wm
        loss = np.mean(logsumexp(z, axis=1) - z[np.arange(self.n_samples), self.labels])
        return float(loss + 0.5 * self.reg * np.sum(wm * wm))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        wm = self._weights(w)
        p = softmax(self.features @ wm, axis=1)
        g = self.features.T @ (p - self._one_hot) / self.n_samples + self.reg * wm
        return g.ravel()

    def hessian(self, w: np.ndarray) -> SymMatrix:
        """显式 Hessian：(1/s) sum_i kron(x_i x_i^T, diag(p_i) - p_i p_i^T) + reg I"""
        wm = self._weights(w)
        p = softmax(self.features @ wm, axis=1)
        s = np.einsum("ic,cd->icd", p, np.eye(self.classes)) - np.einsum("ic,id->icd", p, p)
        h = np.einsum("ij,ik,icd->jckd", self.features, self.features, s) / self.n_samples
        h = h.reshape(self.dim, self.dim) + self.reg * np.eye(self.dim)
        return SymMatrix(0.5 * (h + h.T))

    def smoothness_bound(self) -> float:
        """softmax 协方差的最大特征值不超过 1/2"""
        gram = SymMatrix(self.features.T @ self.features / self.n_samples)
        return 0.5 * float(sym_eigen(gram).eigenvalues[-1]) + self.reg

    @cached_property
    def x_star(self) -> np.ndarray:
        """用确定性 Nesterov 迭代求解到梯度范数 1e-12 以下"""
        L = self.smoothness_bound()
        sq = math.sqrt(L / self.reg)
        alpha, beta = 1.0 / L, (sq - 1.0) / (sq + 1.0)
        x = np.zeros(self.dim)
        x_prev = x.copy()
        g0 = float(np.linalg.norm(self.gradient(x)))
        target = 1e-12 * max(1.0, g0)
        for k in range(200000):
            y = x + beta * (x - x_prev)
            g = self.gradient(y)
            if np.linalg.norm(g) <= target:
                x = y
                break
            x_prev, x = x, y - alpha * g
        else:
            logger.warning("logistic solve stopped at iteration cap, |grad|=%.3e", np.linalg.norm(self.gradient(x)))
        logger.debug("logistic minimizer found after %d iterations", k)
        x.setflags(write=False)
        return x

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "logreg",
            "dim": self.dim,
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "classes": self.classes,
            "reg": self.reg,
            **self.meta,
        }


Problem = Union[Quadratic, FiniteSumProblem, LogRegProblem]


@dataclass(frozen=True)
class GradientSample:
    """一次梯度预言机的输出"""
    value: np.ndarray
    kind: str
    batch: Optional[SamplingVector] = None

    def __post_init__(self):
        if self.kind not in GRADIENT_KINDS:
            raise ValueError(f"unknown gradient kind {self.kind!r}")


def _meta(generator: str, seed: Optional[int] = None, **params) -> Dict[str, Any]:
    meta = {"generator": generator, "generator_version": GENERATOR_VERSION, "params": params}
    if seed is not None:
        meta["seed"] = seed
    return meta


def worst_case_quadratic(d: int, mu: float, L: float) -> Quadratic:
    """三对角最坏情况二次函数：H = (L-mu)/4 T + mu I，b = (L-mu)/4 e_1"""
    if d < 2:
        raise ValueError("worst-case quadratic needs d >= 2")
    if not 0 < mu < L:
        raise ValueError(f"need 0 < mu < L, got mu={mu}, L={L}")
    t = 2.0 * np.eye(d) - np.eye(d, k=1) - np.eye(d, k=-1)
    scale = (L - mu) / 4.0
    b = np.zeros(d)
    b[0] = scale
    return Quadratic(SymMatrix(scale * t + mu * np.eye(d)), b, 0.0, mu=mu, L=L,
                     meta=_meta("worst_case_quadratic", d=d, mu=mu, L=L))


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # 固定 QR 的符号，结果只依赖随机数
    return q * np.sign(np.diag(r))


def _least_squares_block(rng: np.random.Generator, n_samples: int, n_features: int, Q_target: float,
                         mu_floor: float, x_true: np.ndarray, noise: float) -> Quadratic:
    if n_features == 1:
        if Q_target != 1:
            raise ValueError("a single feature only allows Q_target = 1")
        exponents = np.zeros(1)
    else:
        exponents = np.linspace(0.0, 1.0, n_features)
    eig = mu_floor * Q_target ** exponents
    sv = np.sqrt(eig * n_samples)
    left = _orthonormal(rng, n_samples, n_features)
    right = _orthonormal(rng, n_features, n_features)
    a = (left * sv) @ right.T
    y = a @ x_true
    if noise > 0:
        y = y + noise * rng.standard_normal(n_samples)
    h = a.T @ a / n_samples
    return Quadratic(SymMatrix(0.5 * (h + h.T)), a.T @ y / n_samples, float(y @ y) / (2 * n_samples),
                     mu=mu_floor, L=mu_floor * Q_target)


def random_least_squares(seed: int, n_samples: int = 500, n_features: int = 10, Q_target: float = 8.0,
                         mu_floor: float = 1.0, noise: float = 0.1) -> Quadratic:
    """
    随机最小二乘：正交基加对数均匀奇异值
    Hessian A^T A / n_samples 的特征值从 mu_floor 到 mu_floor * Q_target
    """
    if not n_samples >= n_features >= 1:
        raise ValueError("need n_samples >= n_features >= 1")
    if Q_target < 1:
        raise ValueError("Q_target must be >= 1")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(n_features)
    q = _least_squares_block(rng, n_samples, n_features, Q_target, mu_floor, x_true, noise)
    return Quadratic(q.H, q.b, q.c, mu=q.mu, L=q.L,
                     meta=_meta("random_least_squares", seed, n_samples=n_samples, n_features=n_features,
                                Q_target=Q_target, mu_floor=mu_floor, noise=noise))


def counterexample_finite_sum(n: int, mu: float, L: float) -> FiniteSumProblem:
    """
    三维有限和反例：Lambda_i = diag(L, mu, lambda_i)，
    前 n-1 个分量 lambda_i = mu，最后一个为 L；全部在 x* = (1,1,1)/sqrt(3) 处取极小
    """
    if n < 3:
        raise ValueError("counterexample needs n >= 3")
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    x_star = np.ones(3) / math.sqrt(3.0)
    comps = []
    for i in range(n):
        lam = L if i == n - 1 else mu
        h = np.diag([L, mu, lam])
        comps.append(Quadratic(SymMatrix(h), h @ x_star, 0.5 * float(x_star @ h @ x_star), mu=mu, L=L))
    return FiniteSumProblem(tuple(comps), minibatch_size=1, interpolation=True, mu=mu, L=L,
                            meta=_meta("counterexample_finite_sum", n=n, mu=mu, L=L))


def partitioned_least_squares(seed: int, n_samples: int = 25000, n_features: int = 2, n_batches: int = 50,
                              Q: float = 16.0, mu_floor: float = 1.0, noise: float = 0.1,
                              interpolation: bool = False) -> FiniteSumProblem:
    """按批次划分的最小二乘，每个批次的条件数都是 Q"""
    if n_batches < 1 or n_samples % n_batches != 0:
        raise ValueError(f"n_samples={n_samples} is not divisible by n_batches={n_batches}")
    per_batch = n_samples // n_batches
    if per_batch < n_features:
        raise ValueError("each batch needs at least n_features samples")
    root = np.random.SeedSequence(seed)
    x_true = np.random.default_rng(root).standard_normal(n_features)
    comps = []
    for child in root.spawn(n_batches):
        rng = np.random.default_rng(child)
        comps.append(_least_squares_block(rng, per_batch, n_features, Q, mu_floor, x_true,
                                          0.0 if interpolation else noise))
    return FiniteSumProblem(tuple(comps), minibatch_size=1, interpolation=interpolation,
                            mu=mu_floor, L=mu_floor * Q,
                            meta=_meta("partitioned_least_squares", seed, n_samples=n_samples,
                                       n_features=n_features, n_batches=n_batches, Q=Q, mu_floor=mu_floor,
                                       noise=noise, interpolation=interpolation))


def logreg_problem(seed: int, classes: int = 5, n_samples: int = 100, n_features: int = 10,
                   n_informative: int = 5, cluster_sep: float = 1.0, reg: float = 0.01) -> LogRegProblem:
    """每类一个高斯簇（位于信息子空间内的超立方体顶点），其余维度为噪声"""
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if not 1 <= n_informative <= n_features:
        raise ValueError("need 1 <= n_informative <= n_features")
    if n_samples < classes:
        raise ValueError("need at least one sample per class")
    if classes > 2 ** n_informative:
        raise ValueError("too many classes for distinct cluster centers")
    rng = np.random.default_rng(seed)
    vertices = rng.choice(2 ** n_informative, size=classes, replace=False)
    bits = (vertices[:, None] >> np.arange(n_informative)) & 1
    centers = cluster_sep * (2.0 * bits - 1.0)

    # 每类 n_samples // classes 个，余数轮流分配
    labels = np.repeat(np.arange(classes), n_samples // classes)
    labels = np.concatenate([labels, np.arange(n_samples % classes)])
    x = rng.standard_normal((n_samples, n_features))
    x[:, :n_informative] += centers[labels]
    order = rng.permutation(n_samples)
    return LogRegProblem(x[order], labels[order], classes, reg,
                         meta=_meta("logreg_problem", seed, classes=classes, n_samples=n_samples,
                                    n_features=n_features, n_informative=n_informative,
                                    cluster_sep=cluster_sep, reg=reg))


GENERATORS: Dict[str, Callable[..., Problem]] = {
    "worst_case_quadratic": worst_case_quadratic,
    "random_least_squares": random_least_squares,
    "counterexample_finite_sum": counterexample_finite_sum,
    "partitioned_least_squares": partitioned_least_squares,
    "logreg_problem": logreg_problem,
}


def problem_from_dict(doc: Dict[str, Any]) -> Problem:
    """按 JSON 文档里的生成器名与参数重新生成问题"""
    name = doc.get("generator")
    if name not in GENERATORS:
        raise UnsupportedProblemError(f"cannot replay generator {name!r}")
    if doc.get("generator_version") != GENERATOR_VERSION:
        logger.warning("replaying %s written by generator version %s", name, doc.get("generator_version"))
    kwargs = dict(doc.get("params", {}))
    if "seed" in doc:
        kwargs["seed"] = doc["seed"]
    return GENERATORS[name](**kwargs)


def grad_exact(q: Problem, y: np.ndarray) -> GradientSample:
    return GradientSample(q.gradient(y), "exact")


def grad_gaussian(q: Problem, y: np.ndarray, sigma: float, rng: np.random.Generator) -> GradientSample:
    """精确梯度加各向同性高斯噪声，每个分量标准差 sigma/sqrt(d)，E||zeta||^2 = sigma^2"""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    g = q.gradient(y)
    if sigma == 0:
        return GradientSample(g, "gaussian-noise")
    noise = rng.standard_normal(g.shape[0]) * (sigma / math.sqrt(g.shape[0]))
    return GradientSample(g + noise, "gaussian-noise")


def grad_minibatch(fs: FiniteSumProblem, y: np.ndarray, nu: SamplingVector) -> GradientSample:
    if nu.n != fs.n:
        raise DimensionError(f"sampling vector length {nu.n} does not match n={fs.n}")
    y = _check_vector(y, fs.dim)
    g = sum(fs.components[i].gradient(y) for i in nu.indices) / nu.m
    return GradientSample(g, "minibatch", nu)


def sampling_schedule(n: int, m: int, length: int, rng: np.random.Generator,
                      no_repeat: bool = True) -> np.ndarray:
    """
    生成 length 个小批量（每行 m 个升序下标）
    no_repeat 时任何批次都不会与前一个相同
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if no_repeat and m >= n:
        raise ValueError("no-repeat sampling needs m < n")
    if length == 0:
        return np.zeros((0, m), dtype=int)

    if m == 1:
        if not no_repeat:
            return rng.integers(n, size=(length, 1))
        # 相对上一个下标平移 1..n-1，等价于在其余 n-1 个里均匀抽取
        first = rng.integers(n)
        steps = rng.integers(1, n, size=length - 1)
        idx = (first + np.concatenate([[0], np.cumsum(steps)])) % n
        return idx.reshape(-1, 1)

    out = np.empty((length, m), dtype=int)
    prev: Optional[np.ndarray] = None
    for k in range(length):
        draw = np.sort(rng.choice(n, size=m, replace=False))
        while no_repeat and prev is not None and np.array_equal(draw, prev):
            draw = np.sort(rng.choice(n, size=m, replace=False))
        out[k] = draw
        prev = draw
    return out


def schedule_vectors(schedule: np.ndarray, n: int) -> List[SamplingVector]:
    return [SamplingVector(tuple(row), n) for row in schedule]


def schedule_segments(batches: Sequence[int], index: int) -> List[int]:
    """相邻两次取到 index 之间其它批次的个数（只统计完整的间隔）"""
    hits = [k for k, b in enumerate(batches) if b == index]
    return [b - a - 1 for a, b in zip(hits, hits[1:])]
