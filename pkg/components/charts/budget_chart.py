import plotly.graph_objects as go
import pandas as pd

from models import AllocationPlan, CompactionReport


def create_budget_chart(source: AllocationPlan | CompactionReport) -> go.Figure:
    """Per-view budgets as bars; a plan also gets its kappa weights on a secondary axis"""
    frame = pd.DataFrame([v.model_dump() for v in source.views]) if isinstance(source, AllocationPlan) \
        else pd.DataFrame([v.model_dump() for v in source.per_view])

    fig = go.Figure(data=[go.Bar(
        x=frame["view_id"],
        y=frame["budget"],
        name="Budget K_i",
        marker_color='#66B2FF',
        marker_line_color='#3399FF',
        marker_line_width=1.5,
        opacity=0.8,
    )])
    if "kappa" in frame:
        fig.add_trace(go.Scatter(
            x=frame["view_id"],
            y=frame["kappa"],
            name="kappa",
            mode="lines+markers",
            marker_color='#FF9999',
            yaxis="y2",
        ))
        fig.update_layout(yaxis2=dict(title="kappa", overlaying="y", side="right"))

    fig.update_layout(
        title={
            'text': f"Per-view Budgets (K = {source.total})",
            'y': 0.95,
            'x': 0.5,
            'xanchor': 'center',
            'yanchor': 'top',
            'font': {'size': 24}
        },
        xaxis_title="View",
        yaxis_title="Primitives",
        height=400,
        paper_bgcolor='rgba(0,0,0,0)',
        plot_bgcolor='rgba(0,0,0,0)'
    )
    return fig
