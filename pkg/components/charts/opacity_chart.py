from typing import Dict

import plotly.graph_objects as go
import pandas as pd

from models import GaussianSet

COLORS = ['#FF9999', '#66B2FF', '#99FF99', '#FFCC99', '#FF99CC', '#99CCFF']


def create_opacity_distribution_chart(sets: Dict[str, GaussianSet], bins: int = 40) -> go.Figure:
    """Overlaid opacity histograms, one per labelled set (e.g. per budget)"""
    frame = pd.concat(
        [pd.DataFrame({"label": label, "opacity": s.opacities}) for label, s in sets.items()],
        ignore_index=True,
    ) if sets else pd.DataFrame(columns=["label", "opacity"])

    fig = go.Figure()
    for i, (label, group) in enumerate(frame.groupby("label", sort=False)):
        fig.add_trace(go.Histogram(
            x=group["opacity"],
            name=str(label),
            xbins=dict(start=0.0, end=1.0, size=1.0 / bins),
            histnorm="probability",
            marker_color=COLORS[i % len(COLORS)],
            opacity=0.6,
        ))

    fig.update_layout(
        title={
            'text': "Opacity Distribution of Kept Primitives",
            'y': 0.95,
            'x': 0.5,
            'xanchor': 'center',
            'yanchor': 'top',
            'font': {'size': 24}
        },
        barmode="overlay",
        xaxis_title="Opacity",
        yaxis_title="Fraction",
        height=400,
        paper_bgcolor='rgba(0,0,0,0)',
        plot_bgcolor='rgba(0,0,0,0)'
    )
    return fig
