import math
from typing import List

import plotly.graph_objects as go
import pandas as pd
from plotly.subplots import make_subplots

from models import CompactionReport


def quality_frame(reports: List[CompactionReport]) -> pd.DataFrame:
    """One row per report with metrics; saturated PSNR is left as a gap."""
    rows = []
    for report in reports:
        if report.metrics is None:
            continue
        value = report.metrics.psnr_mean
        rows.append({
            "ratio": report.rho_global,
            "K": report.total,
            "psnr": None if math.isinf(value) else value,
            "ssim": report.metrics.ssim_mean,
        })
    return pd.DataFrame(rows, columns=["ratio", "K", "psnr", "ssim"]).sort_values("ratio")


def create_quality_chart(reports: List[CompactionReport]) -> go.Figure:
    """PSNR and SSIM against the budget ratio"""
    frame = quality_frame(reports)
    fig = make_subplots(specs=[[{"secondary_y": True}]])
    fig.add_trace(
        go.Scatter(x=frame["ratio"], y=frame["psnr"], name="PSNR (dB)", mode="lines+markers", marker_color='#66B2FF'),
        secondary_y=False,
    )
    fig.add_trace(
        go.Scatter(x=frame["ratio"], y=frame["ssim"], name="SSIM", mode="lines+markers", marker_color='#FF9999'),
        secondary_y=True,
    )

    fig.update_layout(
        title={
            'text': "Quality vs. Budget Ratio",
            'y': 0.95,
            'x': 0.5,
            'xanchor': 'center',
            'yanchor': 'top',
            'font': {'size': 24}
        },
        xaxis_title="Budget ratio K / NHW",
        height=400,
        paper_bgcolor='rgba(0,0,0,0)',
        plot_bgcolor='rgba(0,0,0,0)'
    )
    fig.update_yaxes(title_text="PSNR (dB)", secondary_y=False)
    fig.update_yaxes(title_text="SSIM", secondary_y=True)
    return fig
