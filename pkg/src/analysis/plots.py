"""Plotly figures for FSC curves and training losses."""

from pathlib import Path
from typing import Union

import pandas as pd
import plotly.graph_objects as go

from .fsc import DEFAULT_THRESHOLD, FSCCurve, resolution_at


def fsc_figure(curves: dict[str, FSCCurve], threshold: float = DEFAULT_THRESHOLD) -> go.Figure:
    """FSC curves against spatial frequency with a dashed threshold line."""
    fig = go.Figure()
    for label, curve in curves.items():
        estimate = resolution_at(curve, threshold)
        fig.add_trace(go.Scatter(
            x=curve.shell_freq,
            y=curve.correlation,
            mode="lines+markers",
            name=f"{label} ({estimate.describe()})",
        ))
    fig.add_hline(
        y=threshold,
        line_dash="dash",
        line_color="gray",
        annotation_text=f"FSC = {threshold:g}",
    )
    fig.update_layout(
        xaxis_title="Spatial frequency (1/Å)",
        yaxis_title="FSC",
        yaxis_range=[-0.1, 1.05],
        height=500,
        legend_title="Map",
    )
    return fig


def loss_figure(histories: dict[str, pd.DataFrame], window: int = 50) -> go.Figure:
    """Per-step loss, raw and as a trailing moving average, on a log axis."""
    fig = go.Figure()
    for label, history in histories.items():
        fig.add_trace(go.Scatter(
            x=history["step"], y=history["loss"], mode="lines",
            name=f"{label} (per step)", opacity=0.3,
        ))
        fig.add_trace(go.Scatter(
            x=history["step"],
            y=history["loss"].rolling(window, min_periods=1).mean(),
            mode="lines",
            name=f"{label} (mean of {window})",
        ))
    fig.update_layout(
        xaxis_title="Optimizer step",
        yaxis_title="Loss (MSE)",
        yaxis_type="log",
        height=450,
    )
    return fig


def write_figure(fig: go.Figure, path: Union[str, Path]) -> Path:
    """Standalone HTML with plotly.js inlined."""
    path = Path(path)
    fig.write_html(path, include_plotlyjs=True, full_html=True)
    return path
