"""
结果查看页面
读取 CLI 输出目录（meta.json、grid.csv、contour.csv、traces/*.csv、validation.json）
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import streamlit as st


def load_meta(out_dir: Path) -> Optional[Dict[str, Any]]:
    path = out_dir / "meta.json"
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def render_sweep_page(out_dir: Path):
    """渲染热图扫描结果"""
    st.header("🗺️ (alpha, beta) 热图")
    grid_file = out_dir / "grid.csv"
    if not grid_file.exists():
        st.info("该目录下没有 grid.csv，先运行 sweep 或 logreg 子命令")
        return

    grid = pd.read_csv(grid_file)
    contour = pd.read_csv(out_dir / "contour.csv") if (out_dir / "contour.csv").exists() else None

    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("单元数", len(grid))
    with col2:
        st.metric("发散单元", int(grid["diverged"].sum()))
    with col3:
        st.metric("理论稳定单元", int((grid["theory_rho"] < 1).sum()))

    quantity = st.selectbox("显示量", ["theory_rho", "emp_rate", "theory_R", "theory_neighborhood",
                                       "emp_neighborhood"])
    pivot = grid.pivot(index="beta", columns="alpha", values=quantity)
    fig = go.Figure(go.Heatmap(x=pivot.columns, y=pivot.index, z=pivot.values, colorscale="Greys_r"))
    if contour is not None and not contour.empty:
        fig.add_trace(go.Scatter(x=contour["alpha"], y=contour["beta"], mode="lines",
                                 line={"color": "red", "width": 2}, name="rho = 1"))
    fig.update_xaxes(type="log", title="alpha")
    fig.update_yaxes(title="beta")
    st.plotly_chart(fig, use_container_width=True)

    # 理论与经验速率对比
    measured = grid.dropna(subset=["emp_rate"])
    if not measured.empty:
        fig = px.scatter(measured, x="theory_rho", y="emp_rate", color="beta",
                         title="经验速率 vs 理论 rho")
        fig.add_trace(go.Scatter(x=[0, 1], y=[0, 1], mode="lines", line={"dash": "dash"}, name="y = x"))
        st.plotly_chart(fig, use_container_width=True)

    failures = grid[grid["failure"].fillna("") != ""]
    if not failures.empty:
        with st.expander(f"⚠️ {len(failures)} 个单元测量失败"):
            st.dataframe(failures[["alpha", "beta", "failure"]], use_container_width=True)


def render_traces_page(out_dir: Path):
    """渲染轨迹文件"""
    st.header("📉 轨迹")
    files = sorted((out_dir / "traces").glob("*.csv")) if (out_dir / "traces").exists() else []
    if not files:
        st.info("该目录下没有 traces/*.csv")
        return

    chosen = st.selectbox("选择轨迹", files, format_func=lambda p: p.stem)
    frame = pd.read_csv(chosen)

    if "coord2_value" in frame.columns:
        fig = go.Figure(go.Scatter(x=frame["k"], y=frame["coord2_value"], mode="lines", name="coordinate 2"))
        batches = frame["batch_index"].astype(str)
        n_last = batches.str.split().explode().astype(int).max()
        red = frame[batches.str.split().apply(lambda ids: str(n_last) in ids)]
        fig.add_trace(go.Scatter(x=red["k"], y=red["coord2_value"], mode="markers",
                                 marker={"color": "red", "size": 5}, name="f_n sampled"))
        for k in frame.loc[frame["opposite_sign_flag"] == 1, "k"]:
            fig.add_vrect(x0=k - 0.5, x1=k + 0.5, fillcolor="gray", opacity=0.15, line_width=0)
        fig.update_yaxes(type="log")
        st.plotly_chart(fig, use_container_width=True)
    elif {"empirical", "bound"} <= set(frame.columns):
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=frame["k"], y=frame["empirical"], mode="lines", name="mean distance"))
        fig.add_trace(go.Scatter(x=frame["k"], y=frame["bound"], mode="lines", line={"dash": "dash"},
                                 name="bound"))
        fig.update_yaxes(type="log")
        st.plotly_chart(fig, use_container_width=True)
    else:
        st.line_chart(frame.set_index("k"))

    with st.expander("原始数据"):
        st.dataframe(frame, use_container_width=True)


def render_validation_page(out_dir: Path):
    """渲染校验套件结果"""
    st.header("🧪 校验结果")
    path = out_dir / "validation.json"
    if not path.exists():
        st.info("该目录下没有 validation.json，先运行 validate 子命令")
        return

    suites = json.loads(path.read_text(encoding="utf-8"))
    passed = sum(s["status"] == "passed" for s in suites)
    col1, col2 = st.columns(2)
    with col1:
        st.metric("通过套件", f"{passed}/{len(suites)}")
    with col2:
        st.metric("检查项", sum(len(s["checks"]) for s in suites))

    for suite in suites:
        icon = "✅" if suite["status"] == "passed" else "❌"
        with st.expander(f"{icon} {suite['name']}", expanded=suite["status"] != "passed"):
            if suite.get("error_message"):
                st.error(suite["error_message"])
            st.dataframe(pd.DataFrame(suite["checks"]), use_container_width=True)
