"""
优化器迭代
Nesterov ASG / SGD 单步、等价的状态空间递推、轨迹记录与发散保护
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from core.errors import DimensionError, MomlabError, OracleError, UnsupportedProblemError
from core.problems import (
    FiniteSumProblem,
    GradientSample,
    Problem,
    grad_exact,
    grad_gaussian,
    grad_minibatch,
    sampling_schedule,
    SamplingVector,
)
from core.theory import OptimizerParams

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e12
ORACLE_KINDS = ("exact", "gaussian", "minibatch")

Seed = Union[int, np.random.SeedSequence]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _gradient_value(g: Union[GradientSample, np.ndarray], dim: int) -> np.ndarray:
    value = g.value if isinstance(g, GradientSample) else np.asarray(g, dtype=float)
    if value.shape != (dim,):
        raise DimensionError(f"gradient of shape {value.shape} does not match dimension {dim}")
    if not np.all(np.isfinite(value)):
        raise OracleError("non-finite gradient")
    return value


@dataclass(frozen=True)
class OptState:
    """x_k、x_{k-1}、最近一次查询点 y_k 与迭代计数 k"""
    x_curr: np.ndarray
    x_prev: np.ndarray
    y: np.ndarray
    k: int = 0

    def __post_init__(self):
        shapes = {np.shape(self.x_curr), np.shape(self.x_prev), np.shape(self.y)}
        if len(shapes) != 1:
            raise DimensionError(f"state vectors disagree in shape: {sorted(shapes)}")
        for name in ("x_curr", "x_prev", "y"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def initial(cls, x0: np.ndarray) -> "OptState":
        # x_{-1} = x_0
        return cls(x0, x0, x0, 0)

    @property
    def dim(self) -> int:
        return self.x_curr.shape[0]

    @property
    def momentum(self) -> np.ndarray:
        return self.x_curr - self.x_prev


def peek_y(s: OptState, p: OptimizerParams) -> np.ndarray:
    """y_{k+1} = x_k + beta (x_k - x_{k-1})，梯度必须在这里求"""
    return s.x_curr + p.beta * (s.x_curr - s.x_prev)


def asg_step(s: OptState, g: Union[GradientSample, np.ndarray], p: OptimizerParams) -> OptState:
    """消费在 peek_y(s, p) 处求得的梯度，返回 (x_{k+1}, x_k)"""
    value = _gradient_value(g, s.dim)
    y = peek_y(s, p)
    return OptState(y - p.alpha * value, s.x_curr, y, s.k + 1)


@dataclass(frozen=True)
class StateSpaceVec:
    """r_k = y_k - x*，v_{k-1} = x_{k-1} - x_{k-2}"""
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if np.shape(self.r) != np.shape(self.v):
            raise DimensionError(f"r {np.shape(self.r)} and v {np.shape(self.v)} disagree")
        object.__setattr__(self, "r", _frozen(self.r))
        object.__setattr__(self, "v", _frozen(self.v))

    @classmethod
    def initial(cls, x0: np.ndarray, x_star: np.ndarray) -> "StateSpaceVec":
        r = np.asarray(x0, dtype=float) - x_star
        return cls(r, np.zeros_like(r))

    @property
    def dim(self) -> int:
        return self.r.shape[0]

    def norm(self) -> float:
        return math.hypot(float(np.linalg.norm(self.r)), float(np.linalg.norm(self.v)))


def state_space_step(z: StateSpaceVec, g: Union[GradientSample, np.ndarray], p: OptimizerParams) -> StateSpaceVec:
    """r_{k+1} = r_k + beta^2 v_{k-1} - alpha(1+beta) g_k，v_k = beta v_{k-1} - alpha g_k"""
    value = _gradient_value(g, z.dim)
    r = z.r + p.beta ** 2 * z.v - p.alpha * (1.0 + p.beta) * value
    v = p.beta * z.v - p.alpha * value
    return StateSpaceVec(r, v)


@dataclass(frozen=True)
class OracleConfig:
    """梯度预言机：exact / gaussian / minibatch"""
    kind: str = "exact"
    sigma: float = 0.0
    minibatch_size: Optional[int] = None
    no_repeat: bool = True

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}, expected one of {ORACLE_KINDS}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError("minibatch size must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "sigma": self.sigma, "minibatch_size": self.minibatch_size,
                "no_repeat": self.no_repeat}


@dataclass(frozen=True)
class RecordOptions:
    """记录内容；距离每步都记，其它轨迹按需"""
    norm: Union[int, str] = 2
    per_coordinate: bool = False
    momentum: bool = False
    gradients: bool = False
    state_norms: bool = False
    objective_gap: bool = False
    batches: bool = True

    def __post_init__(self):
        if self.norm not in (2, "inf"):
            raise ValueError(f"norm must be 2 or 'inf', got {self.norm!r}")

    def distance(self, e: np.ndarray) -> float:
        if self.norm == "inf":
            return float(np.max(np.abs(e)))
        return float(np.linalg.norm(e))


@dataclass(frozen=True)
class Trajectory:
    """一次运行的记录，完成后不可变"""
    distances: np.ndarray
    params: OptimizerParams
    seed: Optional[int]
    norm: Union[int, str] = 2
    diverged_at: Optional[int] = None
    sampled_batches: Optional[np.ndarray] = None
    per_coordinate: Optional[np.ndarray] = None
    momentum: Optional[np.ndarray] = None
    gradients: Optional[np.ndarray] = None
    state_norms: Optional[np.ndarray] = None
    objective_gaps: Optional[np.ndarray] = None
    final_x: Optional[np.ndarray] = None
    problem_doc: Dict[str, Any] = field(default_factory=dict)
    oracle: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("distances", "per_coordinate", "momentum", "gradients", "state_norms",
                     "objective_gaps", "final_x"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value))
        if self.sampled_batches is not None:
            batches = np.array(self.sampled_batches, dtype=int)
            batches.setflags(write=False)
            object.__setattr__(self, "sampled_batches", batches)
        if np.any(self.distances < 0):
            raise ValueError("distances must be non-negative")

    @property
    def iterations(self) -> int:
        return len(self.distances)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def problem_digest(self) -> str:
        payload = json.dumps(self.problem_doc, sort_keys=True, default=float)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def batch_labels(self) -> Optional[List[str]]:
        if self.sampled_batches is None:
            return None
        return [" ".join(str(i) for i in row) for row in self.sampled_batches]

    def to_frame(self) -> pd.DataFrame:
        """列：k, distance, batch_index?, coord_0...coord_{d-1}?"""
        frame = pd.DataFrame({"k": np.arange(self.iterations), "distance": self.distances})
        labels = self.batch_labels()
        if labels is not None:
            frame["batch_index"] = labels
        if self.per_coordinate is not None:
            for j in range(self.per_coordinate.shape[1]):
                frame[f"coord_{j}"] = self.per_coordinate[:, j]
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path

    def metadata(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "params": self.params.to_dict(),
            "norm": self.norm,
            "iterations": self.iterations,
            "diverged_at": self.diverged_at,
            "problem": self.problem_doc,
            "problem_digest": self.problem_digest,
            "oracle": self.oracle,
        }

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        doc = dict(self.metadata(), distances=[float(d) for d in self.distances])
        text = json.dumps(doc, indent=2, sort_keys=True, default=float)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n", encoding="utf-8")
        return text


def _streams(seed: Seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    noise_ss, schedule_ss = ss.spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(schedule_ss)


def _seed_value(seed: Seed) -> Optional[int]:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.entropy) if isinstance(seed.entropy, int) else None
    return int(seed)


class _Oracle:
    """把 OracleConfig 绑定到问题与随机流"""

    def __init__(self, problem: Problem, config: OracleConfig, iterations: int, seed: Seed):
        self.problem = problem
        self.config = config
        self.noise_rng, schedule_rng = _streams(seed)
        self.schedule: Optional[np.ndarray] = None
        if config.kind == "minibatch":
            if not isinstance(problem, FiniteSumProblem):
                raise UnsupportedProblemError("minibatch oracle needs a finite-sum problem")
            m = config.minibatch_size or problem.minibatch_size
            no_repeat = config.no_repeat and m < problem.n
            self.schedule = sampling_schedule(problem.n, m, iterations, schedule_rng, no_repeat)

    def __call__(self, y: np.ndarray, k: int) -> GradientSample:
        if self.config.kind == "exact":
            return grad_exact(self.problem, y)
        if self.config.kind == "gaussian":
            return grad_gaussian(self.problem, y, self.config.sigma, self.noise_rng)
        nu = SamplingVector(tuple(self.schedule[k]), self.problem.n)
        return grad_minibatch(self.problem, y, nu)


def divergence_threshold(x0: np.ndarray, x_star: np.ndarray) -> float:
    return DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(x0 - x_star)))


def run(problem: Problem, oracle: OracleConfig, p: OptimizerParams, iterations: int, seed: Seed = 0,
        record: Optional[RecordOptions] = None, x0: Optional[np.ndarray] = None,
        threshold: Optional[float] = None) -> Trajectory:
    """
    执行 iterations 次 ASG 步，每步恰好一次梯度查询
    ||y - x*||_2 超过阈值时提前停止并设置 diverged_at
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    record = record or RecordOptions()
    x_star = np.asarray(problem.x_star, dtype=float)
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != x_star.shape:
        raise DimensionError(f"x0 of shape {x0.shape} does not match dimension {problem.dim}")
    limit = divergence_threshold(x0, x_star) if threshold is None else threshold
    f_star = problem.value(x_star) if record.objective_gap else 0.0

    oracle_fn = _Oracle(problem, oracle, iterations, seed)
    state = OptState.initial(x0)
    distances: List[float] = []
    coords, moms, grads, norms, gaps = [], [], [], [], []
    diverged_at = None

    for k in range(iterations):
        y = peek_y(state, p)
        e = y - x_star
        dist2 = float(np.linalg.norm(e))
        if not math.isfinite(dist2) or dist2 > limit:
            diverged_at = k
            logger.info("divergence guard fired at iteration %d (|y - x*| = %.3e)", k, dist2)
            break
        distances.append(record.distance(e))
        if record.per_coordinate:
            coords.append(e)
        if record.momentum:
            moms.append(state.momentum)
        if record.state_norms:
            norms.append(math.hypot(dist2, float(np.linalg.norm(state.momentum))))
        if record.objective_gap:
            gaps.append(problem.value(y) - f_star)

        try:
            g = oracle_fn(y, k)
            state = asg_step(state, g, p)
        except OracleError as exc:
            raise OracleError(str(exc), k) from exc
        except MomlabError:
            raise
        except Exception as exc:
            raise OracleError(f"gradient oracle failed: {exc}", k) from exc
        if record.gradients:
            grads.append(g.value)

    n_done = len(distances)
    batches = None
    if record.batches and oracle_fn.schedule is not None:
        batches = oracle_fn.schedule[:n_done]

    def stacked(rows):
        return np.array(rows) if rows else np.zeros((0, problem.dim))

    return Trajectory(
        distances=np.array(distances),
        params=p,
        seed=_seed_value(seed),
        norm=record.norm,
        diverged_at=diverged_at,
        sampled_batches=batches,
        per_coordinate=stacked(coords) if record.per_coordinate else None,
        momentum=stacked(moms) if record.momentum else None,
        gradients=stacked(grads[:n_done]) if record.gradients else None,
        state_norms=np.array(norms) if record.state_norms else None,
        objective_gaps=np.array(gaps) if record.objective_gap else None,
        final_x=state.x_curr,
        problem_doc=problem.to_dict(),
        oracle=oracle.to_dict(),
    )


def sgd_reference_run(problem: Problem, oracle: OracleConfig, alpha: float, iterations: int,
                      seed: Seed = 0, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """独立的 SGD 实现 x_{k+1} = x_k - alpha g(x_k)，返回查询点序列"""
    oracle_fn = _Oracle(problem, oracle, iterations, seed)
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    points = np.empty((iterations, problem.dim))
    for k in range(iterations):
        points[k] = x
        x = x - alpha * oracle_fn(x, k).value
    return points
