"""
DPO確率モデルモジュール

対数線形ポリシー π(y|x;θ) ∝ exp(φ(x,y)ᵀθ) に対するDPOの選好確率、
負の対数尤度、勾配、ヘッセ行列を計算します。

DPOロジットは β(φᵢᵀθ − bᵢ) で、φᵢ は2つの応答の特徴量差、
bᵢ は参照ポリシーの対数確率比です。
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.special import expit, log_expit

from .errors import FeedbackMissingError, InvalidInputError


# フィードバック未取得を表す値
MISSING_FEEDBACK = -1

SubsetLike = Optional[Union[Sequence[int], np.ndarray]]


@dataclass(frozen=True)
class PreferencePoint:
    """
    1プロンプト分の選好データ

    Attributes:
        id: データセット内のインデックス
        phi: 特徴量差ベクトル（長さd）
        bias: 参照ポリシーによるバイアスbᵢ
        feedback: 選好フィードバックsᵢ（0/1、未取得ならNone）
    """
    id: int
    phi: np.ndarray
    bias: float
    feedback: Optional[int] = None

    @property
    def dim(self) -> int:
        return int(self.phi.shape[0])


@dataclass(frozen=True)
class Policy:
    """対数線形ポリシーのパラメータθ"""
    theta: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> 'Policy':
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return int(self.theta.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))


class PreferenceDataset:
    """
    N点の選好データセット

    内部では特徴量差を (N, d) 行列、バイアスとフィードバックを長さNの配列で保持します。
    フィードバック未取得の点は MISSING_FEEDBACK（-1）で表します。
    """

    def __init__(self, phi, bias, feedback=None):
        phi = np.asarray(phi, dtype=np.float64)
        if phi.ndim != 2:
            raise InvalidInputError(f"phiは2次元配列である必要があります: shape={phi.shape}")
        n_points = phi.shape[0]

        bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if bias.shape[0] != n_points:
            raise InvalidInputError(
                f"biasの長さが点数と一致しません: {bias.shape[0]} != {n_points}"
            )

        if feedback is None:
            feedback = np.full(n_points, MISSING_FEEDBACK, dtype=np.int8)
        else:
            feedback = np.asarray(feedback, dtype=np.int8).reshape(-1)
            if feedback.shape[0] != n_points:
                raise InvalidInputError(
                    f"feedbackの長さが点数と一致しません: {feedback.shape[0]} != {n_points}"
                )
            invalid = ~np.isin(feedback, (0, 1, MISSING_FEEDBACK))
            if invalid.any():
                raise InvalidInputError(
                    f"feedbackは0/1のみ指定できます: index={int(np.flatnonzero(invalid)[0])}"
                )

        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(bias))):
            raise InvalidInputError("phiまたはbiasに有限でない値が含まれています")

        self.phi = phi
        self.bias = bias
        self.feedback = feedback

    @classmethod
    def from_points(cls, points: Iterable[PreferencePoint]) -> 'PreferenceDataset':
        """
        PreferencePointの列からデータセットを作成

        Raises:
            InvalidInputError: idが0..N−1の並びでない、または次元が揃っていない場合
        """
        points = list(points)
        if not points:
            raise InvalidInputError("データ点が1つもありません")

        ids = [p.id for p in points]
        if ids != list(range(len(points))):
            raise InvalidInputError("idは0..N−1の順に一意である必要があります")

        dims = {p.dim for p in points}
        if len(dims) != 1:
            raise InvalidInputError(f"phiの次元が揃っていません: {sorted(dims)}")

        phi = np.vstack([p.phi for p in points])
        bias = np.array([p.bias for p in points])
        feedback = np.array(
            [MISSING_FEEDBACK if p.feedback is None else p.feedback for p in points]
        )
        return cls(phi, bias, feedback)

    def __len__(self) -> int:
        return int(self.phi.shape[0])

    @property
    def n_points(self) -> int:
        return len(self)

    @property
    def dim(self) -> int:
        return int(self.phi.shape[1])

    def point(self, index: int) -> PreferencePoint:
        s = int(self.feedback[index])
        return PreferencePoint(
            id=int(index),
            phi=self.phi[index],
            bias=float(self.bias[index]),
            feedback=None if s == MISSING_FEEDBACK else s,
        )

    @property
    def points(self) -> List[PreferencePoint]:
        return [self.point(i) for i in range(len(self))]

    @property
    def has_all_feedback(self) -> bool:
        return bool(np.all(self.feedback != MISSING_FEEDBACK))

    def feedback_for(self, indices: np.ndarray) -> np.ndarray:
        """
        指定点のフィードバックを浮動小数の配列で返す

        Raises:
            FeedbackMissingError: 未取得の点が含まれる場合
        """
        s = self.feedback[indices]
        missing = s == MISSING_FEEDBACK
        if missing.any():
            raise FeedbackMissingError(np.arange(len(self))[indices][missing])
        return s.astype(np.float64)

    def without_feedback(self) -> 'PreferenceDataset':
        """フィードバックを隠したコピー（オンライン設定用）"""
        return PreferenceDataset(self.phi, self.bias, None)

    def with_feedback(self, feedback) -> 'PreferenceDataset':
        return PreferenceDataset(self.phi, self.bias, feedback)

    def satisfies_theory_bounds(self, tol: float = 1e-12) -> bool:
        """‖φᵢ‖₂ ≤ 1 かつ |bᵢ| ≤ 1 を全点が満たすか"""
        norms = np.linalg.norm(self.phi, axis=1)
        return bool(np.all(norms <= 1 + tol) and np.all(np.abs(self.bias) <= 1 + tol))


def _resolve_subset(dataset: PreferenceDataset, subset: SubsetLike) -> np.ndarray:
    if subset is None:
        return np.arange(len(dataset))
    indices = np.asarray(subset, dtype=np.intp).reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= len(dataset)):
        raise InvalidInputError(f"subsetに範囲外のインデックスがあります: N={len(dataset)}")
    return indices


def _select(dataset: PreferenceDataset, subset: SubsetLike, with_feedback: bool):
    """(phi, bias, s) を返す。subset=Noneのときはコピーせず全体を返す"""
    if subset is None:
        phi, bias = dataset.phi, dataset.bias
        s = dataset.feedback_for(slice(None)) if with_feedback else None
        return phi, bias, s
    indices = _resolve_subset(dataset, subset)
    s = dataset.feedback_for(indices) if with_feedback else None
    return dataset.phi[indices], dataset.bias[indices], s


def _check_policy(dim: int, policy: Policy) -> np.ndarray:
    theta = np.asarray(policy.theta, dtype=np.float64)
    if theta.shape != (dim,):
        raise InvalidInputError(f"θの次元が一致しません: {theta.shape} != ({dim},)")
    return theta


def logistic_variance(z):
    """
    μ(z)(1 − μ(z)) を μ(z)·μ(−z) として計算する

    zの符号に対して対称な値をビット単位で返します。
    """
    return expit(z) * expit(-z)


def dpo_logits(
    dataset: PreferenceDataset,
    policy: Policy,
    beta: float,
    subset: SubsetLike = None
) -> np.ndarray:
    """
    DPOロジット β(φᵢᵀθ − bᵢ) を計算

    Args:
        dataset: データセット
        policy: ポリシー
        beta: DPO正則化係数
        subset: 対象インデックス（Noneで全点）

    Returns:
        np.ndarray: 各点のロジット
    """
    theta = _check_policy(dataset.dim, policy)
    phi, bias, _ = _select(dataset, subset, with_feedback=False)
    return beta * (phi @ theta - bias)


def point_logit(point: PreferencePoint, policy: Policy, beta: float) -> float:
    theta = _check_policy(point.dim, policy)
    return float(beta * (point.phi @ theta - point.bias))


def preference_prob(point: PreferencePoint, policy: Policy, beta: float) -> float:
    """
    応答1が応答2より好まれる確率 μ(β(φᵢᵀθ − bᵢ))

    Args:
        point: データ点
        policy: ポリシー
        beta: DPO正則化係数

    Returns:
        float: 確率（0, 1）

    Raises:
        InvalidInputError: 次元が一致しない場合

    Examples:
        >>> preference_prob(PreferencePoint(0, np.array([1.0]), 0.0), Policy(np.array([1.0])), 1.0)
        0.7310585786300049
    """
    return float(expit(point_logit(point, policy, beta)))


def negloglik(
    dataset: PreferenceDataset,
    subset: SubsetLike,
    policy: Policy,
    beta: float
) -> float:
    """
    DPO負の対数尤度 −Σ [sᵢ log μᵢ(θ) + (1−sᵢ) log(1−μᵢ(θ))]

    log μ は log_expit で計算するため、ロジットが大きくても桁落ちしません。

    Args:
        dataset: データセット
        subset: 対象インデックス（Noneで全点）
        policy: ポリシー
        beta: DPO正則化係数

    Returns:
        float: 負の対数尤度（≥ 0）

    Raises:
        FeedbackMissingError: subset内にフィードバック未取得の点がある場合
    """
    theta = _check_policy(dataset.dim, policy)
    phi, bias, s = _select(dataset, subset, with_feedback=True)
    z = beta * (phi @ theta - bias)
    return float(-np.sum(s * log_expit(z) + (1.0 - s) * log_expit(-z)))


def gradient(
    dataset: PreferenceDataset,
    subset: SubsetLike,
    policy: Policy,
    beta: float
) -> np.ndarray:
    """
    負の対数尤度の勾配 β Σ (μᵢ(θ) − sᵢ) φᵢ

    Raises:
        FeedbackMissingError: subset内にフィードバック未取得の点がある場合
    """
    theta = _check_policy(dataset.dim, policy)
    phi, bias, s = _select(dataset, subset, with_feedback=True)
    z = beta * (phi @ theta - bias)
    return beta * (phi.T @ (expit(z) - s))


def hessian(
    dataset: PreferenceDataset,
    subset: SubsetLike,
    policy: Policy,
    beta: float
) -> np.ndarray:
    """
    負の対数尤度のヘッセ行列 β² Σ μᵢ(θ)(1−μᵢ(θ)) φᵢφᵢᵀ

    フィードバックに依存しないため、未取得の点でも計算できます。

    Returns:
        np.ndarray: (d, d) の対称半正定値行列
    """
    theta = _check_policy(dataset.dim, policy)
    phi, bias, _ = _select(dataset, subset, with_feedback=False)
    weights = beta ** 2 * logistic_variance(beta * (phi @ theta - bias))
    h = (phi.T * weights) @ phi
    return 0.5 * (h + h.T)


def logit_weight(point: PreferencePoint, policy: Policy, beta: float) -> float:
    """
    ヘッセ行列への点の重み β²μᵢ(θ)(1−μᵢ(θ))

    Returns:
        float: 重み（0 ≤ 値 ≤ 0.25β²）

    Examples:
        >>> logit_weight(PreferencePoint(0, np.zeros(2), 0.0), Policy.zeros(2), 2.0)
        1.0
    """
    z = point_logit(point, policy, beta)
    return float(beta ** 2 * logistic_variance(z))


def normalize_dataset(dataset: PreferenceDataset) -> PreferenceDataset:
    """
    理論モードの有界性（‖φᵢ‖₂ ≤ 1, |bᵢ| ≤ 1）を満たすよう変換

    全φᵢを最大ノルムで割り、バイアスを[−1, 1]に切り詰めます。
    フィードバックはそのまま引き継ぎます。
    """
    max_norm = float(np.max(np.linalg.norm(dataset.phi, axis=1)))
    phi = dataset.phi / max_norm if max_norm > 0 else dataset.phi.copy()
    bias = np.clip(dataset.bias, -1.0, 1.0)
    return PreferenceDataset(phi, bias, dataset.feedback.copy())
