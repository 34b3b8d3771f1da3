"""
momlab 结果查看器 - 理论计算器与输出目录浏览
"""

import os
import sys
from pathlib import Path

import pandas as pd
import plotly.graph_objects as go
import streamlit as st

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.report_pages import load_meta, render_sweep_page, render_traces_page, render_validation_page
from core.errors import MomlabError
from core.theory import (
    OptimizerParams,
    SpectrumBounds,
    divergence_factor,
    nesterov_defaults,
    rate_report,
    sgd_stochapprox_rate,
)

st.set_page_config(
    page_title="momlab",
    page_icon="📐",
    layout="wide"
)

st.title("📐 momlab - 常数参数 Nesterov / SGD")

page = st.sidebar.selectbox(
    "选择功能",
    ["🧮 理论计算器", "🗺️ 热图", "📉 轨迹", "🧪 校验结果"]
)
out_dir = Path(st.sidebar.text_input("输出目录", value="out"))

meta = load_meta(out_dir)
if meta is not None:
    with st.sidebar.expander("meta.json"):
        st.json(meta.get("config", {}))


def render_theory_page():
    st.header("🧮 理论计算器")
    col1, col2 = st.columns(2)
    with col1:
        mu = st.number_input("mu", value=1.0, min_value=1e-9, format="%.6g")
        L = st.number_input("L", value=8.0, min_value=1e-9, format="%.6g")
    with col2:
        use_nesterov = st.checkbox("Nesterov 默认参数", value=True)
        alpha = st.number_input("alpha", value=0.1, min_value=1e-12, format="%.6g", disabled=use_nesterov)
        beta = st.number_input("beta", value=0.5, min_value=-0.999, max_value=0.999, disabled=use_nesterov)

    try:
        b = SpectrumBounds(mu, L)
        p = nesterov_defaults(b) if use_nesterov else OptimizerParams(alpha, beta)
        report = rate_report(b, p)
    except (ValueError, MomlabError) as e:
        st.error(f"❌ {e}")
        return

    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("rho", f"{report.rho:.6f}", report.status)
    with col2:
        st.metric("R", f"{report.spectral_norm_rate:.6f}")
    with col3:
        st.metric("邻域 / sigma", "-" if report.neighborhood is None else f"{report.neighborhood:.4g}")
    with col4:
        st.metric("SGD 速率", f"{sgd_stochapprox_rate(b):.6f}")

    # 不同 n 下反例的发散因子
    ns = list(range(3, 2001, 7))
    factors = [divergence_factor(b, n) for n in ns]
    fig = go.Figure(go.Scatter(x=ns, y=factors, mode="lines", name="divergence factor"))
    fig.add_hline(y=1.0, line_dash="dash", line_color="red")
    fig.update_xaxes(type="log", title="n")
    fig.update_layout(title="r (n-1)^(1/n)")
    st.plotly_chart(fig, use_container_width=True)

    st.dataframe(pd.DataFrame([report.to_dict()]), use_container_width=True)


if page == "🧮 理论计算器":
    render_theory_page()
elif page == "🗺️ 热图":
    render_sweep_page(out_dir)
elif page == "📉 轨迹":
    render_traces_page(out_dir)
elif page == "🧪 校验结果":
    render_validation_page(out_dir)
