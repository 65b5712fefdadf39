"""
グラフ描画モジュール

Plotlyを使用した「予算n ↔ 評価指標」の折れ線グラフの作成を担当します。
横軸は2のべき乗の予算を対数軸で、縦軸はシード間の中央値を表示し、
四分位範囲（25%〜75%）を帯で重ねます。
"""

from typing import List, Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from .selection import ALGORITHMS


# 手法ごとの色設定
ALGORITHM_COLORS = {
    'adpo': '#1f77b4',
    'adpo_plus': '#d62728',
    'uniform': '#7f7f7f',
    'apo': '#2ca02c',
    'pmc': '#ff7f0e',
}

ALGORITHM_LABELS = {
    'adpo': 'ADPO',
    'adpo_plus': 'ADPO⁺',
    'uniform': 'Uniform',
    'apo': 'APO',
    'pmc': 'PMC',
}

METRICS = ('max_logit_error', 'mean_logit_error', 'error_rate')

METRIC_LABELS = {
    'max_logit_error': '最大ロジット誤差',
    'mean_logit_error': '平均ロジット誤差',
    'error_rate': '誤順序率',
}


def _hex_to_rgba(color: str, alpha: float) -> str:
    color = color.lstrip('#')
    r, g, b = (int(color[i:i + 2], 16) for i in (0, 2, 4))
    return f'rgba({r}, {g}, {b}, {alpha})'


def budget_tick_text(budget: int) -> str:
    """
    予算の目盛りラベル（2のべき乗は 2^k 表記）

    Examples:
        >>> budget_tick_text(1024)
        '2^10'
        >>> budget_tick_text(100)
        '100'
    """
    budget = int(budget)
    if budget > 0 and budget & (budget - 1) == 0:
        return f'2^{budget.bit_length() - 1}'
    return str(budget)


def create_metric_chart(
    summary: pd.DataFrame,
    metric: str,
    algorithms: Optional[List[str]] = None,
    title: Optional[str] = None
) -> go.Figure:
    """
    評価指標の予算推移グラフを作成

    Args:
        summary: 集計結果（runner.aggregateの出力）
            列: ['algorithm', 'budget', 'metric', 'median', 'q25', 'q75', 'n_seeds']
        metric: 表示する指標名
        algorithms: 表示する手法（Noneなら集計結果に含まれる全手法）
        title: グラフタイトル（Noneなら指標名から作成）

    Returns:
        plotly.graph_objects.Figure: 推移グラフ

    Examples:
        >>> fig = create_metric_chart(summary, 'max_logit_error', ['adpo_plus', 'uniform'])
        >>> fig.show()
    """
    data = summary[summary['metric'] == metric]
    if algorithms is None:
        present = set(data['algorithm'])
        algorithms = [a for a in ALGORITHMS if a in present]
        algorithms += sorted(present - set(algorithms))

    fig = go.Figure()

    for algorithm in algorithms:
        algo_data = data[data['algorithm'] == algorithm].sort_values('budget')
        if algo_data.empty:
            continue

        color = ALGORITHM_COLORS.get(algorithm, '#333333')
        label = ALGORITHM_LABELS.get(algorithm, algorithm)
        budgets = algo_data['budget'].tolist()

        # 四分位範囲の帯（上端→下端の順に塗りつぶす）
        fig.add_trace(go.Scatter(
            x=budgets + budgets[::-1],
            y=algo_data['q75'].tolist() + algo_data['q25'].tolist()[::-1],
            fill='toself',
            fillcolor=_hex_to_rgba(color, 0.15),
            line=dict(color='rgba(0, 0, 0, 0)'),
            hoverinfo='skip',
            showlegend=False,
            legendgroup=algorithm,
        ))

        fig.add_trace(go.Scatter(
            x=budgets,
            y=algo_data['median'].tolist(),
            mode='lines+markers',
            name=label,
            legendgroup=algorithm,
            line=dict(color=color, width=2),
            marker=dict(size=6),
            hovertemplate='<b>%{fullData.name}</b><br>' +
                         'n=%{x}: %{y:.4g}<br>' +
                         '<extra></extra>'
        ))

    budgets_all = sorted(int(b) for b in data['budget'].unique())
    metric_label = METRIC_LABELS.get(metric, metric)

    fig.update_layout(
        title={
            'text': title or f"{metric_label} - 予算推移",
            'x': 0.5,
            'xanchor': 'center',
            'font': {'size': 18, 'family': 'Arial, sans-serif'}
        },
        xaxis=dict(
            title='予算 n',
            type='log',
            tickmode='array',
            tickvals=budgets_all,
            ticktext=[budget_tick_text(b) for b in budgets_all],
            showgrid=True,
            gridwidth=1,
            gridcolor='lightgray'
        ),
        yaxis=dict(
            title=metric_label,
            showgrid=True,
            gridwidth=1,
            gridcolor='lightgray'
        ),
        hovermode='x unified',
        legend=dict(
            orientation='v',
            yanchor='top',
            y=1,
            xanchor='left',
            x=1.02,
            bgcolor='rgba(255, 255, 255, 0.8)',
            bordercolor='gray',
            borderwidth=1
        ),
        plot_bgcolor='white',
        height=500,
        margin=dict(l=80, r=150, t=80, b=60)
    )

    fig.update_xaxes(showline=True, linewidth=1, linecolor='gray', mirror=True)
    fig.update_yaxes(showline=True, linewidth=1, linecolor='gray', mirror=True)

    return fig


def create_comparison_table(summary: pd.DataFrame, metric: str) -> pd.DataFrame:
    """
    手法比較テーブルを作成（行: 予算、列: 手法、値: 中央値）

    Returns:
        pd.DataFrame: 列: 予算, 各手法のラベル
    """
    data = summary[summary['metric'] == metric]
    table = data.pivot(index='budget', columns='algorithm', values='median')
    ordered = [a for a in ALGORITHMS if a in table.columns]
    ordered += sorted(set(table.columns) - set(ordered))
    table = table[ordered].rename(columns=lambda a: ALGORITHM_LABELS.get(a, a))
    table.columns.name = None
    return table.reset_index().rename(columns={'budget': '予算'})


def format_metric(value: Optional[float]) -> str:
    """
    指標値を表示用に整形

    Examples:
        >>> format_metric(0.012345)
        '0.01235'
        >>> format_metric(None)
        '-'
    """
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return '-'
    if np.isinf(value):
        return '∞'
    return f'{value:.4g}'
