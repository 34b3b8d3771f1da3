"""
运行配置管理
负责命令行参数的预设、校验、环境变量覆盖，以及 JSON / YAML 导入导出
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv

from core.errors import UsageError
from core.theory import SpectrumBounds

logger = logging.getLogger(__name__)

SEED_ENV = "MOMLAB_SEED"
DEFAULT_SEED = 0
COMMANDS = ("theory", "sweep", "counterexample", "sgdfs", "logreg", "validate")
FORMATS = ("csv", "json", "pgm")
PROBLEMS = ("worst_case", "least_squares")

# 桌面规模默认值；--full-scale 时由 FULL_SCALE 覆盖
PRESETS: Dict[str, Dict[str, Any]] = {
    "fig1": {"command": "sweep", "problem": "worst_case", "Q": [8.0], "d": 100, "sigma": 0.05, "grid": (32, 32),
             "iters": 2000, "trials": 3, "L": 1.0},
    "f1": {"command": "sweep", "problem": "least_squares", "Q": [8.0], "d": 10, "n_samples": 500, "sigma": 0.05,
           "grid": (32, 32), "iters": 2000, "trials": 3, "L": 1.0},
    "fig2": {"command": "counterexample", "n": [50, 1000], "mu": 0.05, "L": 100.0, "seeds": 20, "iters": 1500},
    "fig3": {"command": "sgdfs", "Q": [16.0, 32.0, 64.0], "n_samples": 2500, "n_batches": 50, "d": 2,
             "seeds": 20, "iters": 1000},
    "f2": {"command": "logreg", "sigma": 0.0, "classes": 5, "n_samples": 100, "d": 10, "reg": 0.01, "grid": (12, 13),
           "iters": 1500, "trials": 1},
}

# 没有预设时各子命令自己的默认值，优先级低于预设
COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "logreg": {"sigma": 0.0, "n_samples": 100, "d": 10, "grid": (12, 13), "trials": 1},
}

FULL_SCALE: Dict[str, Dict[str, Any]] = {
    "sweep": {"grid": (64, 64), "trials": 10},
    "sgdfs": {"n_samples": 25000},
    "logreg": {"grid": (32, 33), "trials": 3},
    "counterexample": {"seeds": 100},
}


def env_seed(default: int = DEFAULT_SEED) -> int:
    """读取 .env 与 MOMLAB_SEED"""
    load_dotenv()
    raw = os.getenv(SEED_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}")


@dataclass
class RunConfig:
    """一次子命令运行的全部参数"""
    command: str
    mu: Optional[float] = None
    L: Optional[float] = None
    Q: List[float] = field(default_factory=list)
    alpha: Optional[float] = None
    beta: Optional[float] = None
    nesterov: bool = False
    divergence_factor: bool = False
    seed: Optional[int] = None
    iters: Optional[int] = None
    trials: int = 3
    seeds: int = 20
    grid: Tuple[int, int] = (32, 32)
    alpha_range: Optional[Tuple[float, float]] = None
    beta_range: Tuple[float, float] = (-0.95, 0.95)
    sigma: float = 0.05
    n: List[int] = field(default_factory=list)
    m: int = 1
    d: int = 100
    problem: str = "worst_case"
    n_samples: int = 2500
    n_batches: int = 50
    classes: int = 5
    reg: float = 0.01
    interpolation: bool = False
    suites: List[str] = field(default_factory=list)
    out: str = "out"
    formats: List[str] = field(default_factory=lambda: list(FORMATS))
    jobs: int = 1
    preset: Optional[str] = None
    full_scale: bool = False

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("grid", "alpha_range", "beta_range"):
            if data[key] is not None:
                data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """接受配置本身，或带 "config" 键的 meta.json"""
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        if "command" not in data:
            raise UsageError("config is missing 'command'")
        values = dict(data)
        for key in ("grid", "alpha_range", "beta_range"):
            if values.get(key) is not None:
                values[key] = tuple(values[key])
        return cls(**values)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}")
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise UsageError(f"config {path} is not a mapping")
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() in (".yaml", ".yml"):
            path.write_text(yaml.safe_dump(self.to_dict(), allow_unicode=True, default_flow_style=False,
                                           sort_keys=True), encoding="utf-8")
        else:
            path.write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
        return path

    def with_preset(self, explicit: Tuple[str, ...] = ()) -> "RunConfig":
        """
        预设只填充命令行没有显式给出的字段
        explicit 为用户显式设置的字段名
        """
        updates: Dict[str, Any] = {k: v for k, v in COMMAND_DEFAULTS.get(self.command, {}).items()
                                   if k not in explicit}
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise UsageError(f"unknown preset {self.preset!r}, expected one of {sorted(PRESETS)}")
            preset = PRESETS[self.preset]
            if preset["command"] != self.command:
                raise UsageError(f"preset {self.preset} belongs to '{preset['command']}', not '{self.command}'")
            updates.update({k: v for k, v in preset.items() if k != "command" and k not in explicit})
        if self.full_scale:
            updates.update({k: v for k, v in FULL_SCALE.get(self.command, {}).items() if k not in explicit})
        return replace(self, **updates) if updates else self

    def resolve_seed(self) -> "RunConfig":
        if self.seed is not None:
            return self
        return replace(self, seed=env_seed())

    def bounds(self) -> SpectrumBounds:
        """--mu/--L 优先，否则由 --Q 与 --L（默认 1）推出"""
        try:
            if self.mu is not None and self.L is not None:
                return SpectrumBounds(self.mu, self.L)
            if self.Q:
                return SpectrumBounds.from_condition(self.Q[0], self.L if self.L is not None else 1.0)
        except ValueError as exc:
            raise UsageError(str(exc))
        raise UsageError("need --mu and --L, or --Q")

    def validate(self) -> "RunConfig":
        """任何计算开始前检查全部数值参数"""
        errors = []
        if self.command not in COMMANDS:
            errors.append(f"unknown command {self.command!r}")
        if self.mu is not None and not self.mu > 0:
            errors.append("--mu must be positive")
        if self.L is not None and not self.L > 0:
            errors.append("--L must be positive")
        if self.mu is not None and self.L is not None and self.L < self.mu:
            errors.append("--L must be >= --mu")
        if any(not q >= 1 for q in self.Q):
            errors.append("--Q values must be >= 1")
        if self.alpha is not None and not self.alpha > 0:
            errors.append("--alpha must be positive")
        if self.beta is not None and not abs(self.beta) < 1:
            errors.append("--beta must satisfy |beta| < 1")
        if self.iters is not None and self.iters < 1:
            errors.append("--iters must be >= 1")
        if self.trials < 1 or self.seeds < 1:
            errors.append("--trials and --seeds must be >= 1")
        if len(self.grid) != 2 or min(self.grid) < 1:
            errors.append("--grid must be WxH with positive sides")
        if self.alpha_range is not None and not 0 < self.alpha_range[0] <= self.alpha_range[1]:
            errors.append("--alpha-range must satisfy 0 < lo <= hi")
        if not -1 < self.beta_range[0] <= self.beta_range[1] < 1:
            errors.append("--beta-range must lie inside (-1, 1)")
        if self.sigma < 0:
            errors.append("--sigma must be non-negative")
        if self.command == "counterexample" and any(n < 3 for n in self.n):
            errors.append("--n values must be >= 3")
        if self.m < 1 or any(self.m > n for n in self.n):
            errors.append("--m must lie in [1, n]")
        if self.d < 1:
            errors.append("dimension must be >= 1")
        if self.reg <= 0:
            errors.append("--reg must be positive")
        if self.jobs < 1:
            errors.append("--jobs must be >= 1")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            errors.append(f"unknown formats {bad}, expected a subset of {FORMATS}")
        if self.problem not in PROBLEMS:
            errors.append(f"--problem must be one of {PROBLEMS}")
        if self.command == "theory":
            if not (self.nesterov or (self.alpha is not None and self.beta is not None)):
                errors.append("theory needs --nesterov or both --alpha and --beta")
            if self.divergence_factor and not self.n:
                errors.append("--divergence-factor needs --n")
        if self.command in ("theory", "sweep") and self.mu is None and not self.Q:
            errors.append(f"{self.command} needs --mu/--L or --Q")
        if self.command == "theory" and len(self.Q) > 1:
            errors.append("theory takes a single --Q value")
        if self.command == "sweep" and len(self.Q) > 1 and self.mu is not None:
            errors.append("--mu fixes a single spectrum; drop it to sweep several --Q values")
        if self.command == "sgdfs" and not self.Q:
            errors.append("sgdfs needs --Q")
        if errors:
            raise UsageError("; ".join(errors))
        return self


def parse_grid(text: str) -> Tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise UsageError(f"--grid expects WxH, got {text!r}")


def parse_range(text: str) -> Tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise UsageError(f"range expects lo:hi, got {text!r}")


def parse_list(text: str, kind=float) -> List:
    try:
        return [kind(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list, got {text!r}")
