"""
异常定义
所有模块共用的错误层次
"""

from typing import Optional


class MomlabError(Exception):
    """momlab 基础异常"""


class ConvergenceError(MomlabError):
    """迭代算法在预算内未收敛"""

    def __init__(self, message: str, sweeps: int = 0, off_norm: float = float("nan")):
        super().__init__(message)
        self.sweeps = sweeps
        self.off_norm = off_norm


class OutOfRegionError(MomlabError):
    """参数落在稳定区域之外"""


class UnsupportedProblemError(MomlabError):
    """问题类型不支持该操作"""


class DimensionError(MomlabError, ValueError):
    """维度不匹配"""


class InternalError(MomlabError):
    """代数恒等式被违反"""


class OracleError(MomlabError):
    """梯度预言机在某次迭代失败"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class TooFewPointsError(MomlabError):
    """可用于拟合的点数不足"""


class NonStationaryTailError(MomlabError):
    """轨迹尾部未达到平稳"""


class UsageError(MomlabError, ValueError):
    """命令行或配置参数非法"""
