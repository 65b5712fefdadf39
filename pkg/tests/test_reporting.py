from io import BytesIO

import pandas as pd
import pytest
from openpyxl import load_workbook

from modules.exporter import (
    create_download_filename,
    export_to_csv,
    export_to_excel,
    render_summary_text,
)
from modules.visualizer import (
    budget_tick_text,
    create_comparison_table,
    create_metric_chart,
    format_metric,
)


@pytest.fixture
def summary():
    rows = []
    for algorithm, scale in (('uniform', 2.0), ('adpo_plus', 1.0)):
        for budget in (32, 64, 128):
            rows.append({
                'metric': 'max_logit_error',
                'algorithm': algorithm,
                'budget': budget,
                'median': scale / budget,
                'q25': 0.8 * scale / budget,
                'q75': 1.2 * scale / budget,
                'n_seeds': 3,
            })
    return pd.DataFrame(rows)


class TestVisualizer:

    @pytest.mark.parametrize("budget, expected", [(32, '2^5'), (4096, '2^12'), (1, '2^0'), (100, '100')])
    def test_budget_tick_text(self, budget, expected):
        assert budget_tick_text(budget) == expected

    def test_chart_has_band_and_line_per_algorithm(self, summary):
        fig = create_metric_chart(summary, 'max_logit_error')
        assert len(fig.data) == 4
        # 帯は上端→下端の往復で点数が2倍
        assert len(fig.data[0].x) == 6
        assert fig.data[0].fill == 'toself'
        assert fig.layout.xaxis.type == 'log'
        assert list(fig.layout.xaxis.ticktext) == ['2^5', '2^6', '2^7']

    def test_chart_follows_algorithm_order(self, summary):
        fig = create_metric_chart(summary, 'max_logit_error')
        names = [trace.name for trace in fig.data if trace.showlegend is not False]
        assert names == ['ADPO⁺', 'Uniform']

    def test_chart_for_selected_algorithms(self, summary):
        fig = create_metric_chart(summary, 'max_logit_error', algorithms=['uniform'])
        assert len(fig.data) == 2

    def test_comparison_table(self, summary):
        table = create_comparison_table(summary, 'max_logit_error')
        assert list(table.columns) == ['予算', 'ADPO⁺', 'Uniform']
        assert table['Uniform'].iloc[0] == pytest.approx(2.0 / 32)

    def test_format_metric_handles_missing(self):
        assert format_metric(None) == '-'
        assert format_metric(float('nan')) == '-'


class TestExporter:

    def test_csv_has_bom(self, summary):
        data = export_to_csv(summary)
        assert data.startswith(b'\xef\xbb\xbf')
        assert b'max_logit_error' in data

    def test_excel_roundtrip(self, summary):
        data = export_to_excel(summary)
        sheet = load_workbook(BytesIO(data)).active
        assert sheet.title == '集計'
        assert sheet.cell(row=1, column=1).value == 'metric'
        assert sheet.max_row == len(summary) + 1

    def test_excel_sheet_name_is_second_argument(self, summary):
        sheet = load_workbook(BytesIO(export_to_excel(summary, '比較'))).active
        assert sheet.title == '比較'

    def test_summary_text_lists_every_metric(self, summary):
        other = summary.assign(metric='error_rate')
        text = render_summary_text(pd.concat([summary, other], ignore_index=True))
        assert '[max_logit_error]' in text and '[error_rate]' in text
        assert '| algorithm' in text

    def test_download_filename(self):
        assert create_download_filename('summary', 'excel') == 'summary_集計.xlsx'
        assert create_download_filename('a/b', 'csv') == 'a_b_集計.csv'
