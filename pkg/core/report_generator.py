"""
实验报告生成器
支持多种输出格式：CSV、JSON、PGM 灰度热图、gnuplot 脚本、HTML 摘要
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from jinja2 import Template

from core.experiments import SweepGrid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PGM_MAXVAL = 255


def rate_intensity(rates: np.ndarray, diverged: Optional[np.ndarray] = None) -> np.ndarray:
    """亮 = 快：强度 1 - rate 截断到 [0, 1]；发散与缺失为 0"""
    v = np.clip(1.0 - np.asarray(rates, dtype=float), 0.0, 1.0)
    v = np.where(np.isnan(v), 0.0, v)
    if diverged is not None:
        v = np.where(diverged, 0.0, v)
    return v


def neighborhood_intensity(hoods: np.ndarray, diverged: Optional[np.ndarray] = None) -> np.ndarray:
    """亮 = 邻域小：按网格内最大值归一化"""
    h = np.asarray(hoods, dtype=float)
    finite = h[np.isfinite(h)]
    top = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
    v = np.clip(1.0 - h / top, 0.0, 1.0)
    v = np.where(np.isnan(v), 0.0, v)
    if diverged is not None:
        v = np.where(diverged, 0.0, v)
    return v


def encode_pgm(values: np.ndarray) -> bytes:
    """
    二进制 P5 灰度图，values 取 [0, 1]，行对应 beta
    最大的 beta 在最上面一行
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    pixels = np.rint(np.clip(v, 0.0, 1.0) * PGM_MAXVAL).astype(np.uint8)[::-1]
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + pixels.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """读回 P5 文件，返回与 encode_pgm 输入同向的 uint8 数组"""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    if maxval != PGM_MAXVAL:
        raise ValueError(f"unsupported max value {maxval}")
    pixels = np.frombuffer(parts[3][:width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError("truncated PGM payload")
    return pixels.reshape(height, width)[::-1]


def _frame_to_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dump_json(doc: Any) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True, default=_json_default) + "\n"


GNUPLOT_HEATMAP = """\
# {title}
set datafile separator ','
set logscale x
set xlabel 'alpha'
set ylabel 'beta'
set palette gray
set terminal pngcairo size 900,700
set output '{stem}_rate.png'
set title 'empirical rate'
plot '{grid}' using 1:2:(1-$6) every ::1 with points pt 5 ps 1.5 palette notitle, \\
     '{contour}' using 1:2 every ::1 with lines lc rgb 'red' lw 2 title 'rho = 1'
set output '{stem}_neighborhood.png'
set title 'empirical neighborhood / sigma'
plot '{grid}' using 1:2:7 every ::1 with points pt 5 ps 1.5 palette notitle, \\
     '{contour}' using 1:2 every ::1 with lines lc rgb 'red' lw 2 title 'rho = 1'
"""

GNUPLOT_TRACES = """\
# {title}
set datafile separator ','
set terminal pngcairo size 900,500
set xlabel 'k'
{body}
"""

HTML_TEMPLATE = """
<!DOCTYPE html>
<html lang="zh-CN">
<head>
    <meta charset="UTF-8">
    <title>{{ title }}</title>
    <script src="https://cdn.plot.ly/plotly-2.27.0.min.js"></script>
    <style>
        body { font-family: 'Segoe UI', Arial, sans-serif; margin: 0; padding: 20px; background-color: #f5f5f5; }
        .container { max-width: 1200px; margin: 0 auto; background: white; border-radius: 8px; box-shadow: 0 2px 10px rgba(0,0,0,0.1); }
        .header { background: linear-gradient(135deg, #667eea 0%, #764ba2 100%); color: white; padding: 30px; border-radius: 8px 8px 0 0; }
        .header h1 { margin: 0; font-size: 2.2em; }
        .header .subtitle { opacity: 0.9; margin-top: 10px; }
        .summary { display: flex; flex-wrap: wrap; justify-content: space-around; padding: 30px; background: #f8f9fa; }
        .summary-item { text-align: center; margin: 10px; }
        .summary-item .number { font-size: 1.6em; font-weight: bold; margin-bottom: 5px; }
        .summary-item .label { color: #666; font-size: 0.9em; }
        .passed { color: #28a745; }
        .failed { color: #dc3545; }
        .section { padding: 30px; }
        .check { border-left: 3px solid #e9ecef; padding: 10px 15px; margin-bottom: 8px; background: #f8f9fa; }
        .check.passed { border-left-color: #28a745; }
        .check.failed { border-left-color: #dc3545; }
        .error-message { background: #f8d7da; color: #721c24; padding: 10px; border-radius: 4px; margin-top: 6px; }
    </style>
</head>
<body>
    <div class="container">
        <div class="header">
            <h1>{{ title }}</h1>
            <div class="subtitle">生成时间: {{ report_time }}</div>
        </div>
        <div class="summary">
            {% for label, value in summary.items() %}
            <div class="summary-item">
                <div class="number">{{ value }}</div>
                <div class="label">{{ label }}</div>
            </div>
            {% endfor %}
        </div>
        {% for figure in figures %}
        <div class="section">{{ figure }}</div>
        {% endfor %}
        {% if suites %}
        <div class="section">
            <h2>校验结果</h2>
            {% for suite in suites %}
            <h3 class="{{ suite.status }}">{{ suite.name }} ({{ suite.status }})</h3>
            {% for check in suite.checks %}
            <div class="check {{ check.status }}">
                <strong>{{ check.name }}</strong>: {{ check.description }}
                | measured {{ "%.6g"|format(check.measured) }} vs tolerance {{ "%.3g"|format(check.tolerance) }}
                {% if check.error_message %}<div class="error-message">{{ check.error_message }}</div>{% endif %}
            </div>
            {% endfor %}
            {% endfor %}
        </div>
        {% endif %}
    </div>
</body>
</html>
"""


class ReportGenerator:
    """把实验结果写到输出目录：OUT/{meta.json, grid.csv, contour.csv, *.pgm, traces/*.csv, plots.gp}"""

    def __init__(self, output_dir: Union[str, Path] = "./out", formats: Sequence[str] = ("csv", "json", "pgm")):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.formats = set(formats)
        self.written: List[Path] = []

    def _record(self, path: Path) -> Path:
        self.written.append(path)
        logger.debug("wrote %s", path)
        return path

    def write_meta(self, meta: Dict[str, Any]) -> Optional[Path]:
        """不含时间戳，重复运行逐字节一致"""
        if "json" not in self.formats:
            return None
        path = self.output_dir / "meta.json"
        path.write_text(dump_json(meta), encoding="utf-8")
        return self._record(path)

    def write_json(self, name: str, doc: Any) -> Optional[Path]:
        if "json" not in self.formats:
            return None
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_json(doc), encoding="utf-8")
        return self._record(path)

    def write_csv(self, name: str, frame: pd.DataFrame) -> Optional[Path]:
        if "csv" not in self.formats:
            return None
        return self._record(_frame_to_csv(frame, self.output_dir / name))

    def write_grid(self, grid: SweepGrid) -> Optional[Path]:
        return self.write_csv("grid.csv", grid.to_frame())

    def write_contour(self, points: Sequence[Tuple[float, float]]) -> Optional[Path]:
        frame = pd.DataFrame(list(points), columns=["alpha", "beta"])
        return self.write_csv("contour.csv", frame)

    def write_trace(self, name: str, frame: pd.DataFrame) -> Optional[Path]:
        return self.write_csv(f"traces/{name}.csv", frame)

    def write_pgm(self, name: str, values: np.ndarray) -> Optional[Path]:
        if "pgm" not in self.formats:
            return None
        path = self.output_dir / name
        path.write_bytes(encode_pgm(values))
        return self._record(path)

    def write_heatmaps(self, grid: SweepGrid) -> List[Path]:
        mask = grid.diverged_mask()
        out = [
            self.write_pgm("heatmap_rate.pgm", rate_intensity(grid.quantity("emp_rate"), mask)),
            self.write_pgm("heatmap_var.pgm", neighborhood_intensity(grid.quantity("emp_neighborhood"), mask)),
        ]
        return [p for p in out if p is not None]

    def write_sweep(self, grid: SweepGrid, contour: Sequence[Tuple[float, float]]) -> List[Path]:
        paths = [self.write_grid(grid), self.write_contour(contour)]
        paths += self.write_heatmaps(grid)
        paths.append(self.write_heatmap_script(f"Q = {grid.bounds.Q:.4g}"))
        return [p for p in paths if p is not None]

    def write_heatmap_script(self, title: str) -> Path:
        path = self.output_dir / "plots.gp"
        path.write_text(GNUPLOT_HEATMAP.format(title=title, stem="heatmap", grid="grid.csv",
                                               contour="contour.csv"), encoding="utf-8")
        return self._record(path)

    def write_trace_script(self, title: str, traces: Dict[str, Tuple[str, str]]) -> Path:
        """traces: 图名 -> (csv 相对路径, y 列号 gnuplot 表达式)"""
        lines = []
        for name, (csv, column) in sorted(traces.items()):
            lines.append(f"set output '{name}.png'")
            lines.append(f"set title '{name}'")
            lines.append(f"plot '{csv}' using 1:{column} every ::1 with lines notitle")
        path = self.output_dir / "plots.gp"
        path.write_text(GNUPLOT_TRACES.format(title=title, body="\n".join(lines)), encoding="utf-8")
        return self._record(path)

    def write_html_report(self, title: str, summary: Dict[str, Any], figures: Sequence[go.Figure] = (),
                          suites: Sequence[Any] = ()) -> Path:
        """HTML 摘要带时间戳，不参与确定性比较"""
        html = Template(HTML_TEMPLATE).render(
            title=title,
            report_time=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
            summary=summary,
            figures=[fig.to_html(full_html=False, include_plotlyjs=False) for fig in figures],
            suites=suites,
        )
        path = self.output_dir / "report.html"
        path.write_text(html, encoding="utf-8")
        return self._record(path)


def heatmap_figure(grid: SweepGrid, quantity: str, title: str,
                   contour: Sequence[Tuple[float, float]] = ()) -> go.Figure:
    """plotly 热图，叠加 rho = 1 等值线"""
    fig = go.Figure(go.Heatmap(x=grid.alpha_values, y=grid.beta_values, z=grid.quantity(quantity),
                               colorscale="Greys_r" if quantity.endswith("rate") else "Greys",
                               colorbar={"title": quantity}))
    if contour:
        fig.add_trace(go.Scatter(x=[a for a, _ in contour], y=[b for _, b in contour], mode="lines",
                                 line={"color": "red", "width": 2}, name="rho = 1"))
    fig.update_xaxes(type="log", title="alpha")
    fig.update_yaxes(title="beta")
    fig.update_layout(title=title)
    return fig


def line_figure(series: Dict[str, Sequence[float]], title: str, log_y: bool = True,
                markers: Optional[Dict[str, Tuple[Sequence[int], Sequence[float]]]] = None) -> go.Figure:
    fig = go.Figure()
    for name, values in series.items():
        fig.add_trace(go.Scatter(y=list(values), mode="lines", name=name))
    for name, (xs, ys) in (markers or {}).items():
        fig.add_trace(go.Scatter(x=list(xs), y=list(ys), mode="markers", name=name,
                                 marker={"color": "red", "size": 5}))
    fig.update_xaxes(title="k")
    if log_y:
        fig.update_yaxes(type="log")
    fig.update_layout(title=title)
    return fig
