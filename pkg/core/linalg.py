"""
小规模稠密线性代数
对称特征分解、2x2 谱工具、状态转移矩阵的块对角化
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConvergenceError, DimensionError

logger = logging.getLogger(__name__)

MAX_SWEEPS = 100
DOUBLE_ROOT_RTOL = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class SymMatrix:
    """对称矩阵（稠密行主序存储）"""
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        scale = max(float(np.max(np.abs(a))), 1.0)
        if np.max(np.abs(a - a.T)) > 1e-10 * scale:
            raise ValueError("matrix is not symmetric")
        # 取上下三角平均，保证精确对称
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def diag(cls, values: Sequence[float]) -> "SymMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def identity(cls, d: int) -> "SymMatrix":
        return cls(np.eye(d))

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.entries))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"vector of shape {x.shape} does not match dim {self.dim}")
        return self.entries @ x


@dataclass(frozen=True)
class Mat2:
    """2x2 实矩阵"""
    a11: float
    a12: float
    a21: float
    a22: float

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"Mat2 entry {name} is not finite")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Mat2":
        a = np.asarray(a, dtype=float)
        if a.shape != (2, 2):
            raise DimensionError(f"expected 2x2 array, got {a.shape}")
        return cls(a[0, 0], a[0, 1], a[1, 0], a[1, 1])

    @classmethod
    def identity(cls) -> "Mat2":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def transition(cls, lam: float, alpha: float, beta: float) -> "Mat2":
        """单个特征方向上的转移矩阵 B(lambda)"""
        return cls(1.0 - alpha * (1.0 + beta) * lam, beta * beta, -alpha * lam, beta)

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def transpose(self) -> "Mat2":
        return Mat2(self.a11, self.a21, self.a12, self.a22)

    def scale(self, c: float) -> "Mat2":
        return Mat2(c * self.a11, c * self.a12, c * self.a21, c * self.a22)

    def __matmul__(self, other: "Mat2") -> "Mat2":
        return Mat2(
            self.a11 * other.a11 + self.a12 * other.a21,
            self.a11 * other.a12 + self.a12 * other.a22,
            self.a21 * other.a11 + self.a22 * other.a21,
            self.a21 * other.a12 + self.a22 * other.a22,
        )

    def power(self, k: int) -> "Mat2":
        """逐次相乘得到 k 次幂"""
        if k < 0:
            raise ValueError("power must be non-negative")
        result = Mat2.identity()
        for _ in range(k):
            result = result @ self
        return result

    def max_abs_diff(self, other: "Mat2") -> float:
        return float(np.max(np.abs(self.as_array() - other.as_array())))


@dataclass(frozen=True)
class EigenDecomp:
    """对称特征分解：特征值升序，特征向量按列存放"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    @property
    def condition_number(self) -> float:
        lo, hi = float(self.eigenvalues[0]), float(self.eigenvalues[-1])
        return hi / lo if lo > 0 else math.inf


@dataclass(frozen=True)
class Permutation:
    """
    2d 个下标上的置换（0 起始）
    mapping[i] 是置换后第 i 行取自的原下标，即 (P M P^T)[i, j] = M[mapping[i], mapping[j]]
    """
    mapping: Tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError("mapping is not a bijection")
        object.__setattr__(self, "mapping", mapping)

    @property
    def size(self) -> int:
        return len(self.mapping)

    def inverse(self) -> "Permutation":
        inv = [0] * self.size
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """先应用 other 再应用 self"""
        if other.size != self.size:
            raise DimensionError("permutation sizes differ")
        return Permutation(tuple(other.mapping[i] for i in self.mapping))

    def is_identity(self) -> bool:
        return all(i == j for i, j in enumerate(self.mapping))

    def matrix(self) -> np.ndarray:
        """0/1 置换矩阵 P"""
        p = np.zeros((self.size, self.size))
        p[np.arange(self.size), list(self.mapping)] = 1.0
        return p

    def conjugate(self, m: np.ndarray) -> np.ndarray:
        """计算 P M P^T，只做下标运算"""
        m = np.asarray(m)
        if m.shape != (self.size, self.size):
            raise DimensionError(f"matrix shape {m.shape} does not match permutation size {self.size}")
        idx = np.asarray(self.mapping)
        return m[np.ix_(idx, idx)]


def _off_diagonal_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eigen(h: SymMatrix, tol: Optional[float] = None, max_sweeps: int = MAX_SWEEPS) -> EigenDecomp:
    """
    循环 Jacobi 旋转求对称特征分解
    非对角 Frobenius 范数低于 tol 时停止；tol 默认 1e-12 * ||H||_F
    """
    a = np.array(h.entries, dtype=float)
    d = a.shape[0]
    v = np.eye(d)
    if tol is None:
        tol = 1e-12 * h.frobenius()
    if tol < 0:
        raise ValueError("tol must be non-negative")

    sweeps = 0
    off = _off_diagonal_norm(a)
    while off > tol:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge after {max_sweeps} sweeps (off-diagonal norm {off:.3e})",
                sweeps=sweeps, off_norm=off,
            )
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _off_diagonal_norm(a)

    values = np.diag(a).copy()
    # 稳定排序：值相同按原下标
    order = np.argsort(values, kind="stable")
    logger.debug("sym_eigen converged: d=%d sweeps=%d off=%.3e", d, sweeps, off)
    return EigenDecomp(eigenvalues=values[order], eigenvectors=v[:, order], sweeps=sweeps)


def eig2(m: Mat2) -> Tuple[complex, complex]:
    """
    特征多项式 xi^2 - tr xi + det 的两根
    判别式写成 ((a11 - a22)/2)^2 + a12 a21，避免 tr^2/4 与 det 相消
    实根时先求模较大的根，再由行列式得到另一根
    """
    half_tr = 0.5 * m.trace
    half_gap = 0.5 * (m.a11 - m.a22)
    off = m.a12 * m.a21
    disc = half_gap * half_gap + off
    # 对角元常由 1 - x 相消得到，绝对误差按 eps 乘以最大元素计；重根附近开方会放大它
    scale = 2.0 * max(abs(m.a11), abs(m.a12), abs(m.a21), abs(m.a22))
    if abs(disc) <= DOUBLE_ROOT_RTOL * (half_gap * half_gap + abs(off) + abs(half_gap) * scale):
        disc = 0.0
    if disc >= 0.0:
        big = half_tr + math.copysign(math.sqrt(disc), half_tr)
        small = m.det / big if big != 0.0 else 0.0
        return complex(big), complex(small)
    im = math.sqrt(-disc)
    return complex(half_tr, im), complex(half_tr, -im)


def spectral_radius2(m: Mat2) -> float:
    return max(abs(z) for z in eig2(m))


def spectral_norm2(m: Mat2) -> float:
    """最大奇异值：Gram 矩阵 M^T M 最大特征值的平方根"""
    half_gram_tr = 0.5 * (m.a11 ** 2 + m.a12 ** 2 + m.a21 ** 2 + m.a22 ** 2)
    det = m.det
    disc = max(half_gram_tr * half_gram_tr - det * det, 0.0)
    return math.sqrt(half_gram_tr + math.sqrt(disc))


def build_permutation(d: int) -> Permutation:
    """
    奇数行（1 起始）取第 (i-1)/2+1 个下标，偶数行取第 d+floor((i-1)/2)+1 个下标
    0 起始写法：mapping[2j] = j，mapping[2j+1] = d+j
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    mapping = []
    for j in range(d):
        mapping.append(j)
        mapping.append(d + j)
    return Permutation(tuple(mapping))


def block_diag2(blocks: Sequence[Mat2]) -> np.ndarray:
    """把若干 2x2 块拼成块对角矩阵"""
    n = len(blocks)
    out = np.zeros((2 * n, 2 * n))
    for j, blk in enumerate(blocks):
        out[2 * j:2 * j + 2, 2 * j:2 * j + 2] = blk.as_array()
    return out


def rotate_to_blocks(a: np.ndarray, u: np.ndarray, perm: Permutation) -> np.ndarray:
    """计算 P diag(U^T, U^T) A diag(U, U) P^T"""
    d = u.shape[0]
    if a.shape != (2 * d, 2 * d):
        raise DimensionError(f"matrix shape {a.shape} does not match 2d={2 * d}")
    w = np.zeros((2 * d, 2 * d))
    w[:d, :d] = u
    w[d:, d:] = u
    return perm.conjugate(w.T @ a @ w)


def block_diagonalize(h: SymMatrix, alpha: float, beta: float,
                      decomp: Optional[EigenDecomp] = None) -> List[Mat2]:
    """按 H 的特征值返回 [B(lambda_1), ..., B(lambda_d)]"""
    if decomp is None:
        decomp = sym_eigen(h)
    return [Mat2.transition(float(lam), alpha, beta) for lam in decomp.eigenvalues]


def lu_determinant(a: np.ndarray) -> float:
    """部分主元 LU 分解求行列式"""
    m = np.array(a, dtype=float)
    n = m.shape[0]
    sign = 1.0
    det = 1.0
    for k in range(n):
        pivot = int(np.argmax(np.abs(m[k:, k]))) + k
        if m[pivot, k] == 0.0:
            return 0.0
        if pivot != k:
            m[[k, pivot]] = m[[pivot, k]]
            sign = -sign
        det *= m[k, k]
        m[k + 1:, k:] -= np.outer(m[k + 1:, k] / m[k, k], m[k, k:])
    return sign * det


def gelfand_envelope(m: Mat2, k_max: int = 20) -> List[Tuple[int, float, float]]:
    """返回 (k, rho^k, ||M^k||) 序列，用于检查 rho^k <= ||M^k||"""
    rho = spectral_radius2(m)
    out = []
    power = Mat2.identity()
    for k in range(1, k_max + 1):
        power = power @ m
        out.append((k, rho ** k, spectral_norm2(power)))
    return out
