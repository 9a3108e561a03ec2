"""Interactive HTML reports: training loss curves, view scores and hand meshes."""

import logging
from pathlib import Path

import plotly.graph_objects as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

LOSS_COLORS = {"total": "#667eea", "l_denoise": "#2ecc71", "l_rehand": "#e74c3c"}


def loss_curve_figure(losses):
    """Per-step loss curves from a DataFrame with step, l_denoise, l_rehand, total"""
    fig = go.Figure()
    for column, color in LOSS_COLORS.items():
        fig.add_trace(
            go.Scatter(
                x=losses["step"], y=losses[column],
                mode="lines",
                name=column,
                line=dict(color=color, width=2),
                hovertemplate=f"<b>{column}</b><br>step %{{x}}<br>%{{y:.5f}}<extra></extra>",
            )
        )
    fig.update_layout(
        height=450,
        title_text="Training Loss",
        margin=dict(l=20, r=20, t=50, b=20),
    )
    fig.update_xaxes(title_text="Step")
    fig.update_yaxes(title_text="Loss", type="log")
    return fig


def view_scores_figure(pairs, selected=None):
    """Silhouette area per view and summed score per complementary pair"""
    fig = make_subplots(rows=1, cols=2, subplot_titles=("Per-View Silhouette Area", "Pair Score"))
    views = [view.value for pair in pairs for view in pair.views]
    areas = [area for pair in pairs for area in pair.areas]
    fig.add_trace(
        go.Bar(x=views, y=areas, marker=dict(color="#3B82F6"),
               hovertemplate="<b>%{x}</b><br>area %{y:.4f}<extra></extra>"),
        row=1, col=1,
    )
    colors = ["#e74c3c" if selected is not None and p.pair_id == selected.pair_id else "#93C5FD" for p in pairs]
    fig.add_trace(
        go.Bar(x=[p.pair_id.value for p in pairs], y=[p.score for p in pairs], marker=dict(color=colors),
               hovertemplate="<b>%{x}</b><br>score %{y:.4f}<extra></extra>"),
        row=1, col=2,
    )
    fig.update_layout(height=400, showlegend=False, title_text="View Selection",
                      margin=dict(l=20, r=20, t=50, b=20))
    fig.update_yaxes(title_text="Covered fraction", row=1, col=1)
    return fig


def mesh_figure(mesh):
    """3D view of a hand mesh"""
    v, f = mesh.vertices, mesh.faces
    fig = go.Figure(
        go.Mesh3d(
            x=v[:, 0], y=v[:, 1], z=v[:, 2],
            i=f[:, 0], j=f[:, 1], k=f[:, 2],
            color="#3B82F6",
            opacity=0.95,
            lighting=dict(ambient=0.6, diffuse=0.8, specular=0.1),
            name=f"{mesh.handedness} hand",
        )
    )
    fig.update_layout(height=500, title_text=f"Synthetic {mesh.handedness} hand",
                      scene=dict(aspectmode="data"), margin=dict(l=20, r=20, t=50, b=20))
    return fig


def write_html(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    logger.info("report written to %s", path)
    return path
