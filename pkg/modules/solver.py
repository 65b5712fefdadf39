"""
最尤推定モジュール

DPOポリシー θ̂ = argmin L_DPO(θ) と、データ生成で使うロジスティック回帰を
減衰ニュートン法（アルミホ条件付きバックトラッキング）で解きます。
ヘッセ行列が悪条件の場合は勾配方向に切り替えます。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from .config import FitOptions, ModelConfig
from .errors import InvalidInputError, NumericalFailureError
from .model import (
    Policy,
    PreferenceDataset,
    SubsetLike,
    _resolve_subset,
    gradient,
    hessian,
    negloglik,
)

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 50
# ヘッセ行列の最小/最大固有値比がこれ未満ならニュートン方向を使わない
MIN_EIGEN_RATIO = 1e-12


@dataclass(frozen=True)
class FitReport:
    """
    最尤推定の結果

    Attributes:
        policy: 推定されたポリシー
        iterations: 受理されたステップ数
        final_grad_norm: 最終勾配ノルム（制約付きでは射影勾配ノルム）
        final_negloglik: 最終的な負の対数尤度（リッジ項を含まない）
        converged: final_grad_norm ≤ grad_tol に到達したか
        projected: 制約球への射影が一度でも働いたか
        final_objective: リッジ項込みの目的関数値
    """
    policy: Policy
    iterations: int
    final_grad_norm: float
    final_negloglik: float
    converged: bool
    projected: bool
    final_objective: float


def project_unit_ball(theta: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """
    θを半径Rの球 ‖θ‖₂ ≤ R に射影

    Args:
        theta: パラメータベクトル
        radius: 半径R（> 0）

    Returns:
        np.ndarray: 射影後のベクトル（球内ならそのまま）

    Raises:
        InvalidInputError: radius ≤ 0 の場合

    Examples:
        >>> project_unit_ball(np.array([3.0, 4.0]))
        array([0.6, 0.8])
    """
    if not radius > 0:
        raise InvalidInputError(f"radiusは正の値である必要があります: {radius}")
    theta = np.asarray(theta, dtype=np.float64)
    norm = float(np.linalg.norm(theta))
    if norm <= radius:
        return theta
    return theta * (radius / norm)


class _Objective:
    """部分集合上の L_DPO(θ) + (ridge/2)‖θ‖²"""

    def __init__(self, data: PreferenceDataset, beta: float, ridge: float):
        self.data = data
        self.beta = beta
        self.ridge = ridge

    def value(self, theta: np.ndarray) -> Tuple[float, float]:
        nll = negloglik(self.data, None, Policy(theta), self.beta)
        return nll + 0.5 * self.ridge * float(theta @ theta), nll

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return gradient(self.data, None, Policy(theta), self.beta) + self.ridge * theta

    def hess(self, theta: np.ndarray) -> np.ndarray:
        h = hessian(self.data, None, Policy(theta), self.beta)
        h[np.diag_indices_from(h)] += self.ridge
        return h


def _newton_direction(h: np.ndarray, g: np.ndarray) -> Optional[np.ndarray]:
    eigenvalues = linalg.eigvalsh(h)
    if eigenvalues[-1] <= 0 or eigenvalues[0] <= eigenvalues[-1] * MIN_EIGEN_RATIO:
        return None
    try:
        factor = linalg.cho_factor(h)
    except linalg.LinAlgError:
        return None
    return -linalg.cho_solve(factor, g)


def fit_dpo(
    dataset: PreferenceDataset,
    subset: SubsetLike,
    config: ModelConfig,
    options: Optional[FitOptions] = None,
    init: Optional[Policy] = None
) -> FitReport:
    """
    部分集合上でDPO負の対数尤度を最小化

    Args:
        dataset: データセット
        subset: 学習に使うインデックス（Noneで全点、空は不可）
        config: モデル設定（βを使用）
        options: 最適化設定（Noneで既定値）
        init: 初期値（Noneでゼロベクトル、再推定時は前回のθ̂）

    Returns:
        FitReport: 推定結果

    Raises:
        InvalidInputError: subsetが空の場合
        FeedbackMissingError: フィードバック未取得の点がある場合
        NumericalFailureError: 目的関数が有限でなくなった場合
    """
    options = options or FitOptions()
    indices = _resolve_subset(dataset, subset)
    if indices.size == 0:
        raise InvalidInputError("学習に使うデータ点が空です")

    # 部分集合だけを取り出して以降の計算を軽くする
    s = dataset.feedback_for(indices)
    data = PreferenceDataset(dataset.phi[indices], dataset.bias[indices], s)
    objective = _Objective(data, config.beta, options.ridge)
    radius = options.constraint_radius

    if init is None:
        theta = np.zeros(dataset.dim)
    else:
        theta = np.array(init.theta, dtype=np.float64)
        if theta.shape != (dataset.dim,):
            raise InvalidInputError(f"初期値の次元が一致しません: {theta.shape}")

    projected = False
    if radius is not None:
        clipped = project_unit_ball(theta, radius)
        projected = not np.array_equal(clipped, theta)
        theta = clipped

    def stationarity(th: np.ndarray, g: np.ndarray) -> float:
        if radius is None:
            return float(np.linalg.norm(g))
        return float(np.linalg.norm(th - project_unit_ball(th - g, radius)))

    f, nll = objective.value(theta)
    if not np.isfinite(f):
        raise NumericalFailureError("目的関数が有限ではありません", iterations=0)

    iterations = 0
    converged = False
    g = objective.grad(theta)

    for it in range(1, options.max_iters + 1):
        if stationarity(theta, g) <= options.grad_tol:
            converged = True
            break

        directions = []
        newton = _newton_direction(objective.hess(theta), g)
        if newton is not None:
            directions.append(newton)
        directions.append(-g)

        accepted = None
        # 丸め誤差程度の増加は許容する（最適点近傍で停滞しないため）
        slack = 4.0 * np.finfo(np.float64).eps * abs(f)
        for direction in directions:
            step = 1.0
            for _ in range(MAX_HALVINGS):
                candidate = theta + step * direction
                if radius is not None:
                    clipped = project_unit_ball(candidate, radius)
                    hit = not np.array_equal(clipped, candidate)
                    candidate = clipped
                else:
                    hit = False
                decrease = float(g @ (candidate - theta))
                if decrease < 0:
                    f_new, nll_new = objective.value(candidate)
                    if not np.isfinite(f_new):
                        raise NumericalFailureError("目的関数が有限でなくなりました", iterations=it)
                    if f_new <= f + ARMIJO_C1 * decrease + slack:
                        accepted = (candidate, f_new, nll_new, hit)
                        break
                step *= 0.5
            if accepted is not None:
                break

        if accepted is None:
            logger.debug("直線探索が進まないため反復を終了します: iter=%d", it)
            break

        theta, f, nll, hit = accepted
        projected = projected or hit
        iterations += 1
        g = objective.grad(theta)
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError("勾配が有限でなくなりました", iterations=it)
    else:
        converged = stationarity(theta, g) <= options.grad_tol

    final_grad_norm = stationarity(theta, g)
    logger.debug(
        "fit_dpo: n=%d iters=%d grad=%.3e converged=%s",
        indices.size, iterations, final_grad_norm, converged
    )

    return FitReport(
        policy=Policy(theta),
        iterations=iterations,
        final_grad_norm=final_grad_norm,
        final_negloglik=float(nll),
        converged=converged,
        projected=projected,
        final_objective=float(f),
    )


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    ridge: float,
    options: Optional[FitOptions] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    リッジ付きロジスティック回帰（切片なし）とその漸近共分散

    β=1、全バイアス0のDPO推定と同じ問題として解きます。

    Args:
        features: (N, d) 特徴量行列
        labels: 長さNの0/1ラベル
        ridge: リッジ係数（> 0）
        options: 最適化設定（ridgeは引数の値で上書き）

    Returns:
        (theta_bar, sigma_bar): 推定値と共分散 (∇²L(θ̄) + ridge·I)⁻¹

    Raises:
        InvalidInputError: N = 0 または ridge ≤ 0 の場合
        NumericalFailureError: ヘッセ行列が正定値でない場合
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if features.ndim != 2 or features.shape[0] < 1:
        raise InvalidInputError(f"特徴量が空です: shape={features.shape}")
    if not ridge > 0:
        raise InvalidInputError(f"ridgeは正の値である必要があります: {ridge}")

    data = PreferenceDataset(features, np.zeros(features.shape[0]), labels)
    base = options or FitOptions()
    fit_options = FitOptions(
        max_iters=base.max_iters,
        grad_tol=base.grad_tol,
        ridge=ridge,
        constraint_radius=base.constraint_radius,
    )
    config = ModelConfig(beta=1.0)
    report = fit_dpo(data, None, config, fit_options)
    if not report.converged:
        logger.warning("ロジスティック回帰が収束しませんでした: grad=%.3e", report.final_grad_norm)

    theta_bar = report.policy.theta
    h = hessian(data, None, report.policy, 1.0)
    h[np.diag_indices_from(h)] += ridge
    try:
        factor = linalg.cho_factor(h)
    except linalg.LinAlgError:
        raise NumericalFailureError("ヘッセ行列が正定値ではありません", iterations=report.iterations)
    sigma_bar = linalg.cho_solve(factor, np.eye(h.shape[0]))
    sigma_bar = 0.5 * (sigma_bar + sigma_bar.T)
    return theta_bar, sigma_bar
