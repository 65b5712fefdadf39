"""
評価指標モジュール

推定ポリシーθ̂を、全データで推定した最適DPOポリシーθ*と比較します。
指標は予算に関係なく常に全N点で評価します。
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .model import Policy, PreferenceDataset


@dataclass(frozen=True)
class MetricsReport:
    """
    評価指標

    Attributes:
        max_logit_error: 最大ロジット誤差
        mean_logit_error: 平均ロジット誤差
        error_rate: 選好の向きが反転した点の割合
        n_used: θ̂の推定に使った点数
    """
    max_logit_error: float
    mean_logit_error: float
    error_rate: float
    n_used: int = 0


def _logit_gaps(dataset: PreferenceDataset, theta_hat: Policy, theta_star: Policy,
                beta: float) -> np.ndarray:
    if len(dataset) == 0:
        raise InvalidInputError("データセットが空です")
    delta = np.asarray(theta_hat.theta, dtype=np.float64) - np.asarray(theta_star.theta, dtype=np.float64)
    if delta.shape != (dataset.dim,):
        raise InvalidInputError(f"θの次元が一致しません: {delta.shape} != ({dataset.dim},)")
    # バイアスは差を取ると打ち消し合う
    return beta * np.abs(dataset.phi @ delta)


def max_logit_error(dataset: PreferenceDataset, theta_hat: Policy, theta_star: Policy,
                    beta: float) -> float:
    """
    最大ロジット誤差 β·maxᵢ |φᵢᵀ(θ̂ − θ*)|

    Raises:
        InvalidInputError: データセットが空、または次元が一致しない場合
    """
    return float(np.max(_logit_gaps(dataset, theta_hat, theta_star, beta)))


def mean_logit_error(dataset: PreferenceDataset, theta_hat: Policy, theta_star: Policy,
                     beta: float) -> float:
    """平均ロジット誤差 β·(1/N)Σ |φᵢᵀ(θ̂ − θ*)|"""
    return float(np.mean(_logit_gaps(dataset, theta_hat, theta_star, beta)))


def error_rate(dataset: PreferenceDataset, theta_hat: Policy, theta_star: Policy,
               beta: float) -> float:
    """
    誤順序率: sgn(φᵢᵀθ̂ − bᵢ) ≠ sgn(φᵢᵀθ* − bᵢ) となる点の割合

    sgn(0)は+として扱います。β > 0 は符号を変えないためβに依存しません。
    """
    if len(dataset) == 0:
        raise InvalidInputError("データセットが空です")
    hat = dataset.phi @ np.asarray(theta_hat.theta, dtype=np.float64) - dataset.bias
    star = dataset.phi @ np.asarray(theta_star.theta, dtype=np.float64) - dataset.bias
    return float(np.mean((hat >= 0) != (star >= 0)))


def evaluate(dataset: PreferenceDataset, theta_hat: Policy, theta_star: Policy,
             beta: float, n_used: int = 0) -> MetricsReport:
    """3つの指標をまとめて計算"""
    gaps = _logit_gaps(dataset, theta_hat, theta_star, beta)
    return MetricsReport(
        max_logit_error=float(np.max(gaps)),
        mean_logit_error=float(np.mean(gaps)),
        error_rate=error_rate(dataset, theta_hat, theta_star, beta),
        n_used=n_used,
    )
