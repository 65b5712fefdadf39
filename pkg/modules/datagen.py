"""
データ生成モジュール

多クラス分類の特徴量（または合成ガウス特徴量）から選好データセットを作ります。

手順:
1. ランダムな正例ラベルを選び、正例と負例の特徴量差φᵢをN個作る
2. 全φᵢにラベル1を付けてロジスティック回帰を学習し、θ̄とその共分散Σ̄を得る
3. フィードバック sᵢ ∼ Ber(μ(φᵢᵀθ̄)) を生成
4. 参照ポリシー θ₀ ∼ N(θ̄, Σ̄) を引き、バイアス bᵢ = φᵢᵀθ₀ とする
5. 全データで最適DPOポリシーθ*を推定

全ての乱数はspec.rng_seedから導出するため、結果は入力とシードだけで決まります。
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from .config import FitOptions, ModelConfig
from .errors import FeedbackMissingError, InvalidInputError
from .model import MISSING_FEEDBACK, Policy, PreferenceDataset
from .solver import fit_dpo, fit_logistic

logger = logging.getLogger(__name__)


MODES = ('class_features', 'gaussian')

# 乱数ストリームの識別子（用途ごとに独立した系列を使う）
_STREAMS = {'pairs': 0, 'feedback': 1, 'reference': 2}

# 合成ガウス特徴量の生成モデル
GAUSSIAN_CLASSES = 10
CENTERS_PER_CLASS = 2
CENTER_SCALE = 1.5
DRAW_NOISE = 1.0


@dataclass(frozen=True)
class GeneratorSpec:
    """
    データ生成の設定

    Attributes:
        mode: 'class_features'（外部特徴量）または 'gaussian'（合成）
        n_points: 生成する点数N
        dim: 特徴量の次元d
        positive_label: 正例ラベル（Noneならランダム）
        feature_ridge: θ̄推定のリッジ係数
        rng_seed: 乱数シード
    """
    mode: str = 'gaussian'
    n_points: int = 8192
    dim: int = 32
    positive_label: Optional[int] = None
    feature_ridge: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"不明な生成モードです: {self.mode}")
        if self.n_points < 1:
            raise InvalidInputError(f"n_pointsは1以上である必要があります: {self.n_points}")
        if self.dim < 1:
            raise InvalidInputError(f"dimは1以上である必要があります: {self.dim}")
        if not self.feature_ridge > 0:
            raise InvalidInputError(f"feature_ridgeは正の値である必要があります: {self.feature_ridge}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    """
    生成時の真値

    Attributes:
        theta_bar: フィードバック生成に使ったθ̄
        sigma_bar: θ̄の共分散Σ̄
        theta_ref: 参照ポリシーθ₀
        theta_star: 全データでの最適DPOポリシーθ*
    """
    theta_bar: np.ndarray
    sigma_bar: np.ndarray
    theta_ref: np.ndarray
    theta_star: Policy


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAMS[name]])


def symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """対称半正定値行列の対称平方根"""
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    root = (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T
    return 0.5 * (root + root.T)


def build_pairs_from_classes(
    features: np.ndarray,
    labels: np.ndarray,
    spec: GeneratorSpec,
    rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """
    正例と負例の特徴量差φᵢをN行作成

    正例・負例はそれぞれ復元抽出でランダムに選びます。

    Args:
        features: (M, d) の特徴量
        labels: 長さMのクラスラベル
        spec: 生成設定（n_points、positive_label、rng_seedを使用）
        rng: 乱数生成器（Noneなら生成設定のシードから作成）

    Returns:
        np.ndarray: (N, d) の特徴量差

    Raises:
        InvalidInputError: 正例または負例が存在しない場合
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise InvalidInputError(
            f"特徴量とラベルの行数が一致しません: {features.shape} / {labels.shape}"
        )
    rng = rng or _stream(spec.rng_seed, 'pairs')

    if spec.positive_label is None:
        positive_label = rng.choice(np.unique(labels))
    else:
        positive_label = spec.positive_label

    positives = np.flatnonzero(labels == positive_label)
    negatives = np.flatnonzero(labels != positive_label)
    if positives.size == 0 or negatives.size == 0:
        raise InvalidInputError(f"正例または負例が存在しないラベルです: {positive_label}")

    pos = rng.choice(positives, size=spec.n_points, replace=True)
    neg = rng.choice(negatives, size=spec.n_points, replace=True)
    return features[pos] - features[neg]


def gaussian_phi(spec: GeneratorSpec) -> np.ndarray:
    """
    合成クラスタから特徴量差φᵢを生成

    各クラスに2つのクラスタ中心を置き、正例クラスの標本と他クラスの標本の差を取ります。
    最後に最大ノルムが1になるよう全行を割ります。

    Returns:
        np.ndarray: (N, d) の特徴量差（max ‖φᵢ‖₂ = 1）
    """
    rng = _stream(spec.rng_seed, 'pairs')
    n, d = spec.n_points, spec.dim
    centers = rng.standard_normal((GAUSSIAN_CLASSES, CENTERS_PER_CLASS, d)) * (CENTER_SCALE / np.sqrt(d))

    if spec.positive_label is None:
        positive_label = int(rng.integers(GAUSSIAN_CLASSES))
    else:
        positive_label = int(spec.positive_label)
    if not 0 <= positive_label < GAUSSIAN_CLASSES:
        raise InvalidInputError(f"正例ラベルが範囲外です: {positive_label}")

    # 負例クラスは正例以外から一様に選ぶ
    negative_labels = rng.integers(GAUSSIAN_CLASSES - 1, size=n)
    negative_labels[negative_labels >= positive_label] += 1

    pos_centers = centers[positive_label, rng.integers(CENTERS_PER_CLASS, size=n)]
    neg_centers = centers[negative_labels, rng.integers(CENTERS_PER_CLASS, size=n)]
    noise = rng.standard_normal((2, n, d)) * (DRAW_NOISE / np.sqrt(d))

    phi = (pos_centers + noise[0]) - (neg_centers + noise[1])
    max_norm = float(np.max(np.linalg.norm(phi, axis=1)))
    return phi / max_norm


def oracle_policy(
    dataset: PreferenceDataset,
    config: ModelConfig,
    options: Optional[FitOptions] = None
) -> Policy:
    """
    全N点のフィードバックで最適DPOポリシーθ*を推定

    Raises:
        FeedbackMissingError: フィードバック未取得の点がある場合
    """
    missing = np.flatnonzero(dataset.feedback == MISSING_FEEDBACK)
    if missing.size:
        raise FeedbackMissingError(missing)
    report = fit_dpo(dataset, None, config, options or FitOptions())
    if not report.converged:
        logger.warning("θ*の推定が収束しませんでした: grad=%.3e", report.final_grad_norm)
    return report.policy


def synthesize_dataset(
    phi_rows: np.ndarray,
    spec: GeneratorSpec,
    config: Optional[ModelConfig] = None,
    options: Optional[FitOptions] = None
) -> Tuple[PreferenceDataset, GroundTruth]:
    """
    特徴量差からフィードバックとバイアスを生成し、θ*を推定

    Args:
        phi_rows: (N, d) の特徴量差
        spec: 生成設定（feature_ridge、rng_seedを使用）
        config: θ*推定に使うモデル設定（βを使用）
        options: θ*推定の最適化設定

    Returns:
        (dataset, truth): 全点フィードバック付きのデータセットと真値

    Raises:
        InvalidInputError: phi_rowsが空の場合
        NumericalFailureError: 推定の失敗
    """
    phi = np.asarray(phi_rows, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] == 0:
        raise InvalidInputError(f"特徴量差が空です: shape={phi.shape}")
    config = config or ModelConfig()
    n, d = phi.shape

    logger.info("θ̄を推定しています: N=%d, d=%d", n, d)
    theta_bar, sigma_bar = fit_logistic(phi, np.ones(n), spec.feature_ridge)

    feedback_rng = _stream(spec.rng_seed, 'feedback')
    feedback = (feedback_rng.random(n) < expit(phi @ theta_bar)).astype(np.int8)

    reference_rng = _stream(spec.rng_seed, 'reference')
    theta_ref = theta_bar + symmetric_sqrt(sigma_bar) @ reference_rng.standard_normal(d)
    bias = phi @ theta_ref

    dataset = PreferenceDataset(phi, bias, feedback)
    logger.info("θ*を推定しています: beta=%s", config.beta)
    theta_star = oracle_policy(dataset, config, options)

    truth = GroundTruth(
        theta_bar=theta_bar,
        sigma_bar=sigma_bar,
        theta_ref=theta_ref,
        theta_star=theta_star,
    )
    return dataset, truth


def generate(
    spec: GeneratorSpec,
    config: Optional[ModelConfig] = None,
    options: Optional[FitOptions] = None,
    features: Optional[np.ndarray] = None,
    labels: Optional[np.ndarray] = None,
    phi_rows: Optional[np.ndarray] = None
) -> Tuple[PreferenceDataset, GroundTruth]:
    """
    生成手順全体を実行

    phi_rowsが与えられた場合はそれを使い（外部埋め込みの取り込み）、
    それ以外はspec.modeに従って特徴量差を作ります。

    Raises:
        InvalidInputError: class_featuresモードで特徴量がない、または次元が一致しない場合
    """
    if phi_rows is None:
        if spec.mode == 'class_features':
            if features is None or labels is None:
                raise InvalidInputError("class_featuresモードには特徴量とラベルが必要です")
            if np.asarray(features).shape[1] != spec.dim:
                raise InvalidInputError(
                    f"特徴量の次元が設定と一致しません: {np.asarray(features).shape[1]} != {spec.dim}"
                )
            phi_rows = build_pairs_from_classes(features, labels, spec)
        else:
            phi_rows = gaussian_phi(spec)
    logger.info("特徴量差を作成しました: %s", np.asarray(phi_rows).shape)
    return synthesize_dataset(phi_rows, spec, config, options)
