"""
能動DPO実験ツール - モジュールパッケージ

このパッケージには以下のモジュールが含まれます:
- model: DPO確率モデル（ロジット、負の対数尤度、勾配、ヘッセ行列）
- solver: 最尤推定（減衰ニュートン法）
- design: 計画行列とSherman–Morrison更新
- selection: データ点選択（ADPO、ADPO⁺、Uniform、APO、PMC）
- datagen: 選好データセットの生成
- metrics: 評価指標
- data_loader: データセット・結果の読み書き
- runner: 実験の実行と集計
- visualizer: グラフ描画
- exporter: データエクスポート
"""

from .config import FitOptions, ModelConfig, SelectionConfig
from .design import DesignState, init_design
from .errors import (
    ActiveDPOError,
    ContractViolationError,
    FeedbackMissingError,
    InvalidInputError,
    NumericalFailureError,
    ResultsParseError,
)
from .metrics import MetricsReport, evaluate
from .model import Policy, PreferenceDataset, PreferencePoint
from .selection import ALGORITHMS, FeedbackOracle, SelectionTrace, run_selection
from .solver import FitReport, fit_dpo

__all__ = [
    'FitOptions',
    'ModelConfig',
    'SelectionConfig',
    'DesignState',
    'init_design',
    'ActiveDPOError',
    'ContractViolationError',
    'FeedbackMissingError',
    'InvalidInputError',
    'NumericalFailureError',
    'ResultsParseError',
    'MetricsReport',
    'evaluate',
    'Policy',
    'PreferenceDataset',
    'PreferencePoint',
    'ALGORITHMS',
    'FeedbackOracle',
    'SelectionTrace',
    'run_selection',
    'FitReport',
    'fit_dpo',
]
