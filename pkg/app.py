"""
能動DPO実験ツール - 結果ビューア

`main.py run` が出力した results.csv を読み込み、
手法ごとの指標の予算推移グラフと集計表を表示します。
"""

from pathlib import Path

import streamlit as st

from modules.config import load_env_defaults
from modules.data_loader import find_results_files, load_results_cached
from modules.errors import ActiveDPOError
from modules.exporter import create_download_filename, export_to_csv, export_to_excel
from modules.runner import aggregate, check_ordering
from modules.visualizer import (
    ALGORITHM_LABELS,
    METRIC_LABELS,
    METRICS,
    create_comparison_table,
    create_metric_chart,
)


# ページ設定
st.set_page_config(
    page_title="能動DPO実験ビューア",
    page_icon="📈",
    layout="wide",
    initial_sidebar_state="expanded"
)


def main():
    """ビューアのメイン処理"""

    st.title("📈 能動DPO実験ビューア")
    st.markdown("予算ごとの最大ロジット誤差・平均ロジット誤差・誤順序率を手法間で比較します")
    st.markdown("---")

    env = load_env_defaults()

    # サイドバー: 結果ファイルの選択
    st.sidebar.header("1. 結果ファイル")
    results_dir = st.sidebar.text_input("結果ディレクトリ", value=env.output_dir)
    files = find_results_files(results_dir)
    if not files:
        st.warning(f"⚠️ results.csv が見つかりません: {results_dir}")
        st.info("`python main.py run --dataset ... --out <dir>` で結果を作成してください")
        return

    selected = st.sidebar.selectbox("results.csv", files, format_func=lambda p: str(Path(p).parent))

    try:
        results = load_results_cached(str(selected))
        summary = aggregate(results)
    except ActiveDPOError as e:
        st.error(f"結果を読み込めませんでした: {e}")
        return

    # サイドバー: 手法と指標
    st.sidebar.header("2. 表示設定")
    algorithms = [a for a in ALGORITHM_LABELS if a in set(results['algorithm'])]
    chosen = st.sidebar.multiselect(
        "手法",
        algorithms,
        default=algorithms,
        format_func=lambda a: ALGORITHM_LABELS.get(a, a),
    )
    metric = st.sidebar.radio(
        "指標",
        METRICS,
        format_func=lambda m: METRIC_LABELS.get(m, m),
    )

    col1, col2, col3 = st.columns(3)
    col1.metric("シード数", results['seed'].nunique())
    col2.metric("予算の数", results['budget'].nunique())
    col3.metric("設定", ", ".join(sorted(results['fingerprint'].unique())))

    if not chosen:
        st.info("手法を1つ以上選択してください")
        return

    fig = create_metric_chart(summary, metric, chosen)
    st.plotly_chart(fig, use_container_width=True)

    # 集計表
    st.header("📋 中央値の比較")
    table = create_comparison_table(summary[summary['algorithm'].isin(chosen)], metric)
    st.dataframe(table, use_container_width=True, hide_index=True)

    col1, col2 = st.columns(2)
    with col1:
        st.download_button(
            "CSVでダウンロード",
            data=export_to_csv(table),
            file_name=create_download_filename(metric, 'csv'),
            mime="text/csv",
        )
    with col2:
        st.download_button(
            "Excelでダウンロード",
            data=export_to_excel(table),
            file_name=create_download_filename(metric, 'excel'),
            mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
        )

    # 順序関係
    with st.expander("🔍 手法間の順序関係（最大ロジット誤差）", expanded=False):
        ordering = check_ordering(summary)
        if ordering.passed:
            st.success("✅ ADPO⁺ < Uniform（n ≥ 2^9）、ADPO ≤ Uniform（上位2予算）、予算に対する減少を満たしています")
        else:
            st.warning("⚠️ 成立しない項目があります")
        for message in ordering.messages:
            st.text(f"- {message}")

    st.markdown("---")
    st.caption("📈 能動DPO実験ビューア | Powered by Streamlit & Plotly")


if __name__ == "__main__":
    main()
