"""
Marginal Emissions Dashboard

Streamlit viewer for report directories written by `marginal_emissions.py report`.
Shows dynamic and static marginal emissions per node, the dispatch stack,
nodal prices and the distribution of static-vs-dynamic deviations.

Run with:
    streamlit run dashboard.py -- results/

Author: Claire Namusoke
Date: October 2026
"""

import os
import sys

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import streamlit as st

from analysis import ScenarioReport, read_report, smooth_series

LME_COLOR = "#d62728"
STATIC_COLOR = "#1f77b4"


def node_long_frame(matrix: np.ndarray, value_name: str) -> pd.DataFrame:
    """T x n matrix to a tidy frame with columns Period, Node, <value_name>."""
    matrix = np.asarray(matrix)
    df = pd.DataFrame(matrix, columns=[f"node_{i}" for i in range(matrix.shape[1])])
    df["Period"] = np.arange(matrix.shape[0])
    return df.melt(id_vars="Period", var_name="Node", value_name=value_name)


def lme_figure(report: ScenarioReport, node: int, window_fraction: float = 0.0) -> go.Figure:
    """Dynamic (and static, if present) rates at one node, with an optional rolling band."""
    periods = np.arange(report.horizon)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=periods, y=report.lme_dynamic[:, node], name="Dynamic LME",
                             mode="lines+markers", line=dict(color=LME_COLOR, width=2)))
    if report.lme_static is not None:
        fig.add_trace(go.Scatter(x=periods, y=report.lme_static[:, node], name="Static LME",
                                 mode="lines", line=dict(color=STATIC_COLOR, width=2, dash="dash")))
    if window_fraction > 0:
        band = smooth_series(report.lme_dynamic[:, node], window_fraction)
        fig.add_trace(go.Scatter(x=periods, y=band["q75"], mode="lines", line=dict(width=0),
                                 showlegend=False, hoverinfo="skip"))
        fig.add_trace(go.Scatter(x=periods, y=band["q25"], mode="lines", line=dict(width=0),
                                 fill="tonexty", fillcolor="rgba(214,39,40,0.15)", name="Interquartile band"))
        fig.add_trace(go.Scatter(x=periods, y=band["mean"], name="Rolling mean",
                                 mode="lines", line=dict(color="#ff7f0e", width=2)))
    fig.update_layout(height=320, hovermode="x unified", margin=dict(l=10, r=10, t=10, b=10),
                      xaxis_title="Period", yaxis_title="tCO₂/MWh")
    return fig


def dispatch_figure(report: ScenarioReport) -> go.Figure:
    """Stacked device outputs; storage charging shows below zero."""
    df = pd.DataFrame(report.dispatch, columns=report.device_names)
    df["Period"] = np.arange(report.horizon)
    long_df = df.melt(id_vars="Period", var_name="Device", value_name="MW")
    fig = px.bar(long_df, x="Period", y="MW", color="Device")
    fig.update_layout(barmode="relative", height=320, margin=dict(l=10, r=10, t=10, b=10))
    return fig


def deviation_figure(report: ScenarioReport) -> go.Figure:
    """Histogram of static minus dynamic rates over all periods and nodes."""
    if report.lme_static is None:
        raise ValueError("report has no static marginal emissions")
    gap = (report.lme_static - report.lme_dynamic).ravel()
    fig = px.histogram(x=gap, nbins=30, labels={"x": "Static − dynamic (tCO₂/MWh)"})
    fig.update_traces(marker_color=STATIC_COLOR)
    fig.update_layout(height=260, margin=dict(l=10, r=10, t=10, b=10), yaxis_title="Count")
    return fig


def price_figure(report: ScenarioReport) -> go.Figure:
    fig = px.line(node_long_frame(report.lmp, "Price"), x="Period", y="Price", color="Node",
                  labels={"Price": "$/MWh"})
    fig.update_layout(height=260, margin=dict(l=10, r=10, t=10, b=10))
    return fig


@st.cache_data
def load_report(out_dir: str) -> ScenarioReport:
    return read_report(out_dir)


def main():
    st.set_page_config(page_title="Marginal Emissions Dashboard", page_icon="⚡", layout="wide")
    st.markdown("<h2 style='text-align:center; color:#d62728;'>Locational Marginal Emissions</h2>",
                unsafe_allow_html=True)

    default_dir = sys.argv[1] if len(sys.argv) > 1 else "results"
    out_dir = st.sidebar.text_input("Report directory", value=default_dir)
    if not os.path.exists(os.path.join(out_dir, "report.json")):
        st.error(f"❌ No report.json in '{out_dir}'. Run `python marginal_emissions.py report` first.")
        return
    report = load_report(out_dir)

    col1, col2, col3, col4 = st.columns(4)
    col1.metric("Total emissions", f"{report.emissions_total:,.2f} tCO₂")
    col2.metric("Mean dynamic LME", f"{np.mean(report.lme_dynamic):.3f}")
    rms = report.metrics.get("rms_deviation_normalized")
    col3.metric("Normalized RMS deviation", "n/a" if rms is None else f"{100 * rms:.1f}%")
    col4.metric("Degenerate", "yes" if report.degenerate.get("dynamic") else "no")

    node = st.sidebar.selectbox("Node", list(range(report.n_nodes)), format_func=lambda i: f"node_{i}")
    window = st.sidebar.slider("Rolling window (fraction of horizon)", 0.0, 0.5, 0.0, 0.05)

    left, right = st.columns(2)
    with left:
        st.subheader("Marginal emissions")
        st.plotly_chart(lme_figure(report, node, window), use_container_width=True)
    with right:
        st.subheader("Dispatch")
        st.plotly_chart(dispatch_figure(report), use_container_width=True)

    left, right = st.columns(2)
    with left:
        st.subheader("Nodal prices")
        st.plotly_chart(price_figure(report), use_container_width=True)
    with right:
        if report.lme_static is not None:
            st.subheader("Static vs dynamic")
            st.plotly_chart(deviation_figure(report), use_container_width=True)
        else:
            st.info("Static approximation not in this report.")


if __name__ == "__main__":
    main()
