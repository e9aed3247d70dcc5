"""
HTML Report Generator for falconc
Renders training curves, error profiles and latent sweeps as interactive plotly charts
"""
import html
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from utils.format_utils import format_intervals, format_percent

TAG_COLORS = {
    'train': '#1f77b4',
    'test': '#2ca02c',
    'malicious': '#d62728',
}


class ReportGenerator:
    """Builds a self-contained HTML page from run artifacts."""

    def __init__(self, title: str = 'falconc run report'):
        self.title = title
        self.timestamp = datetime.now().strftime('%Y-%m-%d %H:%M:%S')

    def generate_html_report(
        self,
        output_file: str,
        history: Optional[pd.DataFrame] = None,
        profile=None,
        boundary=None,
        sweep: Optional[Sequence] = None,
        metrics=None,
    ) -> str:
        """
        Generate the HTML report. Every section is optional.

        Args:
            output_file: Output HTML filename
            history: Training curve with columns epoch, loss
            profile: ErrorProfile to scatter by tag
            boundary: DecisionBoundary shaded over the profile
            sweep: DimSummary rows of a latent sweep
            metrics: MetricsReport shown as stat cards

        Returns:
            Path to generated HTML file
        """
        sections, scripts = [], []
        if metrics is not None:
            sections.append(self._metrics_cards_html(metrics))
        if history is not None and len(history):
            sections.append(self._chart_section('Training curve', 'history-chart'))
            scripts.append(self._create_history_chart(history))
        if profile is not None and profile.entries:
            subtitle = f'Benign intervals: {format_intervals(boundary.intervals)}' if boundary is not None else ''
            sections.append(self._chart_section('Reconstruction error profile', 'profile-chart', subtitle))
            scripts.append(self._create_profile_chart(profile, boundary))
        if sweep:
            sections.append(self._chart_section('Latent dimension sweep', 'sweep-chart'))
            scripts.append(self._create_sweep_chart(sweep))
        if not sections:
            sections.append('<p>No artifacts were given to this report.</p>')

        page = f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{html.escape(self.title)} - {self.timestamp}</title>
    <script src="https://cdn.plot.ly/plotly-2.27.0.min.js"></script>
    <style>
        body {{ font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif; background: #f4f6f8; color: #333; margin: 0; padding: 20px; }}
        .container {{ max-width: 1200px; margin: 0 auto; background: white; border-radius: 12px; box-shadow: 0 10px 30px rgba(0,0,0,0.15); overflow: hidden; }}
        .header {{ background: #243b55; color: white; padding: 30px 40px; }}
        .content {{ padding: 30px 40px; }}
        .section {{ margin-bottom: 40px; }}
        .section-title {{ color: #243b55; border-bottom: 3px solid #243b55; padding-bottom: 8px; margin-bottom: 16px; }}
        .stats-grid {{ display: grid; grid-template-columns: repeat(auto-fit, minmax(180px, 1fr)); gap: 16px; }}
        .stat-card {{ background: #243b55; color: white; padding: 20px; border-radius: 10px; }}
        .stat-card h3 {{ font-size: 0.8em; text-transform: uppercase; letter-spacing: 1px; opacity: 0.85; }}
        .stat-card .value {{ font-size: 1.8em; font-weight: bold; }}
        .chart-container {{ background: #f8f9fa; padding: 16px; border-radius: 10px; }}
        .footer {{ text-align: center; padding: 16px; color: #777; font-size: 0.85em; }}
    </style>
</head>
<body>
    <div class="container">
        <div class="header">
            <h1>{html.escape(self.title)}</h1>
            <p>Generated {self.timestamp}</p>
        </div>
        <div class="content">
            {''.join(sections)}
        </div>
        <div class="footer">falconc flow labeling report</div>
    </div>
    <script>
        {chr(10).join(scripts)}
    </script>
</body>
</html>
"""
        with open(output_file, 'w', encoding='utf-8') as f:
            f.write(page)
        return output_file

    def _chart_section(self, title: str, div_id: str, subtitle: str = '') -> str:
        note = f'<p style="margin-bottom: 10px;">{html.escape(subtitle)}</p>' if subtitle else ''
        return f"""
            <div class="section">
                <h2 class="section-title">{title}</h2>
                {note}
                <div class="chart-container"><div id="{div_id}"></div></div>
            </div>"""

    def _metrics_cards_html(self, metrics) -> str:
        cards = [
            ('Flows', str(metrics.total)),
            ('Accuracy', format_percent(metrics.accuracy)),
            ('Recall', format_percent(metrics.recall)),
            ('False positive rate', format_percent(metrics.false_positive_rate)),
            ('Benign accuracy', format_percent(metrics.benign_accuracy)),
        ]
        body = ''.join(f'<div class="stat-card"><h3>{name}</h3><div class="value">{value}</div></div>'
                       for name, value in cards)
        return f"""
            <div class="section">
                <h2 class="section-title">Labeling metrics</h2>
                <div class="stats-grid">{body}</div>
            </div>"""

    def _create_history_chart(self, history: pd.DataFrame) -> str:
        fig = go.Figure(data=[
            go.Scatter(x=history['epoch'], y=history['loss'], mode='lines+markers', name='loss',
                       line=dict(color='#1f77b4'))
        ])
        fig.update_layout(
            xaxis_title='Epoch',
            yaxis_title='Mean squared reconstruction error',
            yaxis_type='log',
            height=380,
            margin=dict(l=20, r=20, t=20, b=20),
            plot_bgcolor='white',
        )
        return f"Plotly.newPlot('history-chart', {fig.to_json()});"

    def _create_profile_chart(self, profile, boundary=None) -> str:
        """Errors per sample by tag on a log axis, benign intervals shaded green."""
        frame = profile.to_frame()
        positive = frame['error'][frame['error'] > 0]
        floor = float(positive.min()) / 10 if len(positive) else 1e-6
        traces: List[go.Scatter] = []

        if boundary is not None:
            x_max = float(len(frame))
            for k, (lo, hi) in enumerate(boundary.intervals):
                lo = max(lo, floor)
                traces.append(go.Scatter(
                    x=[0, x_max, x_max, 0, 0], y=[lo, lo, hi, hi, lo],
                    fill='toself', fillcolor='rgba(40, 167, 69, 0.15)', line=dict(width=0),
                    mode='lines', hoverinfo='skip', name='benign region', showlegend=k == 0,
                ))

        position = 0
        for tag, group in frame.groupby('tag', sort=False):
            x = np.arange(position, position + len(group))
            position += len(group)
            traces.append(go.Scatter(
                x=x, y=np.maximum(group['error'].to_numpy(), floor), mode='markers', name=tag,
                marker=dict(size=6, color=TAG_COLORS.get(tag, '#6c757d'), opacity=0.75),
                text=group['flow_id'], hovertemplate='%{text}<br>error %{y:.4g}<extra></extra>',
            ))

        fig = go.Figure(data=traces)
        fig.update_layout(
            xaxis_title='Sample',
            yaxis_title='Reconstruction error',
            yaxis_type='log',
            height=450,
            margin=dict(l=20, r=20, t=20, b=20),
            plot_bgcolor='white',
        )
        return f"Plotly.newPlot('profile-chart', {fig.to_json()});"

    def _create_sweep_chart(self, summaries: Sequence) -> str:
        dims = [s.latent_dim for s in summaries]
        means = [s.mean for s in summaries]
        grand_mean = float(np.mean(means))
        fig = go.Figure(data=[
            go.Scatter(
                x=dims, y=means, mode='markers', name='mean over trials',
                error_y=dict(type='data', symmetric=False,
                             array=[s.max - s.mean for s in summaries],
                             arrayminus=[s.mean - s.min for s in summaries]),
                marker=dict(color='#1f77b4'),
            ),
            go.Scatter(x=dims, y=[s.rolling_mean for s in summaries], mode='lines',
                       name='rolling mean', line=dict(color='#243b55', width=3)),
            go.Scatter(x=[dims[0], dims[-1]], y=[grand_mean, grand_mean], mode='lines',
                       name='grand mean over all dims', line=dict(color='red', dash='dash')),
        ])
        fig.update_layout(
            xaxis_title='Latent dimension',
            yaxis_title='Mean held-out reconstruction error',
            height=420,
            margin=dict(l=20, r=20, t=20, b=20),
            plot_bgcolor='white',
        )
        return f"Plotly.newPlot('sweep-chart', {fig.to_json()});"


def sweep_overview(summaries: Sequence) -> Dict[str, float]:
    """Grand mean and best dimension of re-loaded sweep summaries."""
    means = [s.mean for s in summaries]
    best = min(range(len(means)), key=lambda i: (means[i], summaries[i].latent_dim))
    return {'grand_mean': float(np.mean(means)), 'recommended_dim': summaries[best].latent_dim}
