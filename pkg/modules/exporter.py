"""
エクスポートモジュール

実験結果CSV、集計表のCSV/Excel/テキスト出力、グラフファイルの保存を担当します。
"""

import csv
import logging
import math
from io import BytesIO
from pathlib import Path
from typing import Dict, Iterable, Union

import pandas as pd
import plotly.graph_objects as go
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils.dataframe import dataframe_to_rows
from tabulate import tabulate

from .data_loader import RESULT_COLUMNS, RESULTS_SCHEMA_LINE

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _format_cell(value) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        if math.isnan(value):
            return ''
        # repr は往復可能な最短表現
        return repr(value)
    return str(value)


def write_results_csv(rows: Iterable[dict], path: PathLike) -> Path:
    """
    実験結果をスキーマ版数付きのCSVで書き出す

    Args:
        rows: RESULT_COLUMNSのキーを持つdictの列
        path: 出力先

    Returns:
        Path: 出力先
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    count = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(RESULTS_SCHEMA_LINE + '\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row.get(column)) for column in RESULT_COLUMNS])
            count += 1

    logger.info("結果を保存しました: %s (%d行)", path, count)
    return path


def export_to_csv(df: pd.DataFrame) -> bytes:
    """
    DataFrameをCSV形式でエクスポート

    Args:
        df: エクスポートするDataFrame

    Returns:
        bytes: CSV data (UTF-8 BOM付き、Excel対応)

    Examples:
        >>> csv_data = export_to_csv(summary)
        >>> with open('summary.csv', 'wb') as f:
        ...     f.write(csv_data)
    """
    # UTF-8 BOM付きで出力（Excelでの文字化け防止）
    csv_string = df.to_csv(index=False, lineterminator='\n')
    return csv_string.encode('utf-8-sig')


def export_to_excel(df: pd.DataFrame, sheet_name: str = "集計") -> bytes:
    """
    DataFrameをExcel形式でエクスポート（書式設定付き）

    Args:
        df: エクスポートするDataFrame
        sheet_name: シート名

    Returns:
        bytes: Excel data
    """
    wb = Workbook()
    ws = wb.active
    ws.title = sheet_name

    thin_border = Border(
        left=Side(style='thin'),
        right=Side(style='thin'),
        top=Side(style='thin'),
        bottom=Side(style='thin')
    )

    rows = dataframe_to_rows(df, index=False, header=True)
    for r_idx, row in enumerate(rows, 1):
        for c_idx, value in enumerate(row, 1):
            if isinstance(value, float) and math.isinf(value):
                value = str(value)
            cell = ws.cell(row=r_idx, column=c_idx, value=value)

            # ヘッダー行のスタイル
            if r_idx == 1:
                cell.font = Font(bold=True, size=11)
                cell.fill = PatternFill(start_color="C6E0B4", end_color="C6E0B4", fill_type="solid")
                cell.alignment = Alignment(horizontal="center", vertical="center")
            else:
                cell.alignment = Alignment(horizontal="right", vertical="center")
            cell.border = thin_border

    # 列幅の調整
    for column in ws.columns:
        max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
        ws.column_dimensions[column[0].column_letter].width = min(max_length + 2, 20)

    # 指標列は有効数字を揃える
    for col_idx, col_name in enumerate(df.columns, 1):
        if pd.api.types.is_float_dtype(df[col_name]):
            for row_idx in range(2, len(df) + 2):
                ws.cell(row=row_idx, column=col_idx).number_format = '0.0000'

    output = BytesIO()
    wb.save(output)
    output.seek(0)
    return output.getvalue()


def render_summary_text(summary: pd.DataFrame) -> str:
    """
    集計表をプレーンテキストの表に整形

    Args:
        summary: 集計結果（runner.aggregateの出力）

    Returns:
        str: 指標ごとの表（tabulate形式）
    """
    blocks = []
    for metric, data in summary.groupby('metric', sort=False):
        table = data[['algorithm', 'budget', 'median', 'q25', 'q75', 'n_seeds']]
        blocks.append(f"[{metric}]\n" + tabulate(
            table.values.tolist(),
            headers=list(table.columns),
            tablefmt='github',
            floatfmt='.6g',
        ))
    return '\n\n'.join(blocks) + '\n'


def save_chart(fig: go.Figure, base_path: PathLike) -> Dict[str, str]:
    """
    グラフをHTMLとSVGで保存

    SVGの書き出しにはkaleidoが必要です。失敗した場合はHTMLのみ保存し、
    エラー内容を返り値に含めます。

    Args:
        fig: Plotlyのfigure
        base_path: 拡張子なしの出力先

    Returns:
        {"html_path": str, "svg_path": str} または {"html_path": str, "svg_error": str}
    """
    base_path = Path(base_path)
    base_path.parent.mkdir(parents=True, exist_ok=True)
    result_paths = {}

    html_path = base_path.with_suffix('.html')
    fig.write_html(str(html_path), include_plotlyjs='cdn')
    result_paths['html_path'] = str(html_path)

    try:
        svg_path = base_path.with_suffix('.svg')
        fig.write_image(str(svg_path), format='svg')
        result_paths['svg_path'] = str(svg_path)
    except Exception as e:
        # kaleidoが利用できない環境ではスキップ
        logger.warning("SVGを書き出せませんでした: %s (%s)", base_path, e)
        result_paths['svg_error'] = str(e)

    return result_paths


def create_download_filename(stem: str, file_type: str) -> str:
    """
    ダウンロード用ファイル名を生成

    Examples:
        >>> create_download_filename('max_logit_error', 'csv')
        'max_logit_error_集計.csv'
        >>> create_download_filename('summary', 'excel')
        'summary_集計.xlsx'
    """
    extension = 'xlsx' if file_type == 'excel' else 'csv'
    safe_name = stem.replace('/', '_').replace('\\', '_')
    return f"{safe_name}_集計.{extension}"
