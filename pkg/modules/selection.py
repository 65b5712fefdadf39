"""
データ点選択モジュール

DPO向けD最適計画による能動学習（オンラインのADPO、オフラインのADPO⁺）と、
比較手法（Uniform、APO、PMC）、UCBによる重みの安定化、
経験的κの再計算を提供します。

全ての選択は重複なし（選択済みの点は候補から除外）で、
スコアが同点の場合はインデックスの小さい点を選びます。
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .config import ModelConfig, SelectionConfig
from .design import DesignState, init_design
from .errors import ContractViolationError, FeedbackMissingError, InvalidInputError
from .model import (
    MISSING_FEEDBACK,
    Policy,
    PreferenceDataset,
    PreferencePoint,
    logistic_variance,
)
from .solver import fit_dpo

logger = logging.getLogger(__name__)


ALGORITHMS = ('adpo', 'adpo_plus', 'uniform', 'apo', 'pmc')

# フィードバックをオラクル経由で取得する手法
ONLINE_ALGORITHMS = ('adpo', 'pmc')

# 計画行列を使う手法と、その獲得ベクトルの種類
VECTOR_KINDS = {'adpo': 'dpo', 'adpo_plus': 'dpo', 'apo': 'raw'}


class FeedbackOracle:
    """
    隠されたフィードバックを1点ずつ返すオラクル

    同じ点への問い合わせは1回まで（プロンプトごとに1回だけ選好を得る）。
    """

    def __init__(self, feedback):
        self._feedback = np.asarray(feedback, dtype=np.int8).reshape(-1)
        self.query_log: List[int] = []
        self._queried = set()

    @classmethod
    def from_dataset(cls, dataset: PreferenceDataset) -> 'FeedbackOracle':
        """
        全点のフィードバックを持つデータセットからオラクルを作成

        Raises:
            FeedbackMissingError: 未取得の点がある場合
        """
        missing = np.flatnonzero(dataset.feedback == MISSING_FEEDBACK)
        if missing.size:
            raise FeedbackMissingError(missing)
        return cls(dataset.feedback.copy())

    def __len__(self) -> int:
        return int(self._feedback.shape[0])

    def query(self, index: int) -> int:
        """
        点indexのフィードバックを返す

        Raises:
            ContractViolationError: 同じ点を2回問い合わせた場合
            InvalidInputError: indexが範囲外の場合
        """
        index = int(index)
        if not 0 <= index < len(self):
            raise InvalidInputError(f"範囲外のインデックスです: {index}")
        if index in self._queried:
            raise ContractViolationError(f"同じ点に2回問い合わせました: {index}")
        self._queried.add(index)
        self.query_log.append(index)
        return int(self._feedback[index])


@dataclass
class SelectionTrace:
    """
    選択の記録

    Attributes:
        algorithm: 手法名
        chosen: 選択順のインデックス列Sₙ
        per_round_score: 各ラウンドで選ばれた点のスコア（Uniformは空）
        refit_rounds: θ̂を再推定したラウンド（そのラウンドの選択前に推定）
        kappa_estimate: 経験的κ（計算した場合のみ）
        design_final: 最終の計画行列（計画行列を使う手法のみ）
        policy_schedule: (適用開始ラウンド, θ̂) の列。κの再計算に使う
        model: 選択時のモデル設定
    """
    algorithm: str
    chosen: List[int]
    per_round_score: List[float]
    refit_rounds: List[int]
    kappa_estimate: Optional[float] = None
    design_final: Optional[DesignState] = None
    policy_schedule: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def budget(self) -> int:
        return len(self.chosen)

    def prefix(self, n: int) -> List[int]:
        return self.chosen[:n]

    def policy_at(self, round_index: int) -> np.ndarray:
        """ラウンドround_index（1始まり）で使われたθ̂"""
        theta = None
        for start, value in self.policy_schedule:
            if start > round_index:
                break
            theta = value
        if theta is None:
            raise InvalidInputError(f"ラウンド{round_index}のθ̂が記録されていません")
        return theta


def _point_logit_and_width(point: PreferencePoint, policy_hat: Policy, beta: float,
                           cov: Optional[np.ndarray]) -> Tuple[float, float]:
    phi = np.asarray(point.phi, dtype=np.float64)
    theta = np.asarray(policy_hat.theta, dtype=np.float64)
    if phi.shape != theta.shape:
        raise InvalidInputError(f"次元が一致しません: {phi.shape} != {theta.shape}")
    z = float(beta * (phi @ theta - point.bias))
    width = 0.0
    if cov is not None:
        width = float(np.sqrt(max(float(phi @ cov @ phi), 0.0)))
    return z, width


def ucb_weight(
    point: PreferencePoint,
    policy_hat: Policy,
    cov: np.ndarray,
    alpha: float,
    beta: float
) -> float:
    """
    μ(1−μ) の上側信頼限界 μ(zᵢ)(1−μ(zᵢ))

    zᵢ = max{|β(φᵢᵀθ̂ − bᵢ)| − α√(φᵢᵀΣφᵢ), 0}。
    ロジットを0に向けて縮めるため、値は常にプラグイン推定以上になります。

    Args:
        point: データ点
        policy_hat: 推定ポリシー
        cov: 共分散Σ（対称半正定値）
        alpha: 信頼幅の係数
        beta: DPO正則化係数

    Returns:
        float: 重み（0, 0.25]
    """
    z, width = _point_logit_and_width(point, policy_hat, beta, cov)
    shrunk = max(abs(z) - alpha * width, 0.0)
    return float(logistic_variance(shrunk))


def acquisition_vector(
    point: PreferencePoint,
    policy_hat: Policy,
    config: ModelConfig,
    cov: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    獲得ベクトル v = β√w·φᵢ

    wはプラグイン推定 μᵢ(θ̂)(1−μᵢ(θ̂))。covが与えられ α > 0 のときはUCB重み。

    Examples:
        >>> acquisition_vector(PreferencePoint(0, np.array([2.0]), 0.0), Policy.zeros(1), ModelConfig(beta=1.0))
        array([1.])
    """
    z, _ = _point_logit_and_width(point, policy_hat, config.beta, None)
    if cov is not None and config.alpha > 0:
        weight = ucb_weight(point, policy_hat, cov, config.alpha, config.beta)
    else:
        weight = float(logistic_variance(z))
    return config.beta * np.sqrt(weight) * np.asarray(point.phi, dtype=np.float64)


def acquisition_weights(
    phi: np.ndarray,
    bias: np.ndarray,
    theta: np.ndarray,
    config: ModelConfig,
    cov: Optional[np.ndarray] = None
) -> np.ndarray:
    """複数点の重み w（acquisition_vectorのベクトル化版、covがあれば信頼上限で計算）"""
    z = config.beta * (phi @ theta - bias)
    if cov is None:
        return logistic_variance(z)
    quad = np.maximum(np.einsum('ij,ij->i', phi @ cov, phi), 0.0)
    shrunk = np.maximum(np.abs(z) - config.alpha * np.sqrt(quad), 0.0)
    return logistic_variance(shrunk)


def acquisition_vectors(
    phi: np.ndarray,
    bias: np.ndarray,
    theta: np.ndarray,
    config: ModelConfig,
    cov: Optional[np.ndarray] = None
) -> np.ndarray:
    """複数点の獲得ベクトルを (m, d) 行列で返す"""
    weights = acquisition_weights(phi, bias, theta, config, cov)
    return (config.beta * np.sqrt(weights))[:, None] * phi


def _check_budget(dataset: PreferenceDataset, sel: SelectionConfig) -> None:
    if sel.budget > len(dataset):
        raise InvalidInputError(f"予算がデータ点数を超えています: {sel.budget} > {len(dataset)}")


def _initial_theta(dataset: PreferenceDataset, sel: SelectionConfig) -> np.ndarray:
    if sel.initial_theta is None:
        return np.zeros(dataset.dim)
    theta = np.asarray(sel.initial_theta, dtype=np.float64)
    if theta.shape != (dataset.dim,):
        raise InvalidInputError(f"initial_thetaの次元が一致しません: {theta.shape}")
    return theta


def is_refit_round(round_index: int, schedule: str) -> bool:
    """
    ラウンドround_indexの選択前にθ̂を再推定するか

    ラウンド1ではフィードバックがないため再推定しません（θ̂₀を使用）。
    """
    if round_index < 2:
        return False
    if schedule == 'every':
        return True
    if schedule == 'doubling':
        return round_index & (round_index - 1) == 0
    return False


def _candidate_pool(rng: np.random.Generator, available: np.ndarray,
                    pool_size: Optional[int]) -> np.ndarray:
    remaining = np.flatnonzero(available)
    if pool_size is None or pool_size >= remaining.size:
        return remaining
    return np.sort(rng.choice(remaining, size=pool_size, replace=False))


class _OnlineLearner:
    """オラクルから得たフィードバックでθ̂を再推定する"""

    def __init__(self, dataset: PreferenceDataset, oracle: FeedbackOracle,
                 sel: SelectionConfig):
        if len(oracle) != len(dataset):
            raise InvalidInputError(
                f"オラクルとデータセットの点数が一致しません: {len(oracle)} != {len(dataset)}"
            )
        self.dataset = dataset
        self.oracle = oracle
        self.sel = sel
        self.revealed = np.full(len(dataset), MISSING_FEEDBACK, dtype=np.int8)

    def observe(self, index: int) -> None:
        self.revealed[index] = self.oracle.query(index)

    def refit(self, chosen: List[int], theta: np.ndarray) -> np.ndarray:
        observed = PreferenceDataset(self.dataset.phi, self.dataset.bias, self.revealed)
        report = fit_dpo(observed, chosen, self.sel.model, self.sel.fit, init=Policy(theta))
        logger.debug(
            "θ̂を再推定しました: n=%d converged=%s norm=%.3f",
            len(chosen), report.converged, report.policy.norm
        )
        return report.policy.theta


def _greedy_design(
    dataset: PreferenceDataset,
    sel: SelectionConfig,
    algorithm: str,
    theta: np.ndarray,
    learner: Optional[_OnlineLearner] = None
) -> SelectionTrace:
    """
    分散 vᵀH⁻¹v を最大化する点を貪欲に選ぶ共通ループ

    learnerが与えられた場合は選んだ点のフィードバックを取得し、
    スケジュールに従ってθ̂を再推定します。
    """
    _check_budget(dataset, sel)
    config = sel.model
    weighted = VECTOR_KINDS[algorithm] == 'dpo'
    rng = np.random.default_rng(sel.rng_seed)
    state = init_design(dataset.dim, config.gamma)
    available = np.ones(len(dataset), dtype=bool)

    chosen: List[int] = []
    scores: List[float] = []
    refit_rounds: List[int] = []
    schedule = [(1, theta.copy())]

    for t in range(1, sel.budget + 1):
        if learner is not None and is_refit_round(t, sel.refit):
            theta = learner.refit(chosen, theta)
            refit_rounds.append(t)
            schedule.append((t, theta.copy()))

        pool = _candidate_pool(rng, available, sel.pool_size)
        phi = dataset.phi[pool]
        if weighted:
            vectors = acquisition_vectors(phi, dataset.bias[pool], theta, config, state.h_inv)
        else:
            vectors = phi
        pool_scores = state.variances(vectors)
        best = int(np.argmax(pool_scores))
        index = int(pool[best])

        if learner is not None:
            learner.observe(index)
        state.update(vectors[best])
        available[index] = False
        chosen.append(index)
        scores.append(float(pool_scores[best]))

    return SelectionTrace(
        algorithm=algorithm,
        chosen=chosen,
        per_round_score=scores,
        refit_rounds=refit_rounds,
        design_final=state,
        policy_schedule=schedule,
        model=config,
    )


def select_adpo(
    dataset: PreferenceDataset,
    oracle: FeedbackOracle,
    sel: SelectionConfig
) -> SelectionTrace:
    """
    ADPO: オンラインでフィードバックを得ながら点を選ぶ

    各ラウンドで候補プールの獲得ベクトルの分散を最大化する点を選び、
    オラクルに問い合わせ、計画行列をランク1更新します。
    θ̂はラウンド t = 2, 4, 8, ... の選択前に、それまでのフィードバックで再推定します。

    Args:
        dataset: データセット（フィードバックは参照しない）
        oracle: フィードバックのオラクル
        sel: 選択設定

    Returns:
        SelectionTrace: 選択の記録

    Raises:
        InvalidInputError: 予算がデータ点数を超える場合
        ContractViolationError: オラクルへの二重問い合わせ
    """
    learner = _OnlineLearner(dataset, oracle, sel)
    return _greedy_design(dataset, sel, 'adpo', _initial_theta(dataset, sel), learner)


def select_adpo_plus(
    dataset: PreferenceDataset,
    sel: SelectionConfig,
    policy: Optional[Policy] = None
) -> SelectionTrace:
    """
    ADPO⁺: 記録済みの全フィードバックでθ̂を1度だけ推定してから点を選ぶ

    Args:
        dataset: 全点のフィードバックを持つデータセット
        sel: 選択設定
        policy: θ̂を外部から固定する場合に指定（推定を省略）

    Returns:
        SelectionTrace: 選択の記録

    Raises:
        FeedbackMissingError: フィードバック未取得の点がある場合
    """
    _check_budget(dataset, sel)
    if policy is None:
        report = fit_dpo(dataset, None, sel.model, sel.fit)
        if not report.converged:
            logger.warning("ADPO⁺のθ̂推定が収束しませんでした: grad=%.3e", report.final_grad_norm)
        theta = report.policy.theta
    else:
        theta = np.asarray(policy.theta, dtype=np.float64)
    return _greedy_design(dataset, sel, 'adpo_plus', theta)


def select_apo(dataset: PreferenceDataset, sel: SelectionConfig) -> SelectionTrace:
    """
    APO: ロジスティックの重みとβを使わず、φᵢそのもので計画行列を作る比較手法
    """
    return _greedy_design(dataset, sel, 'apo', np.zeros(dataset.dim))


def select_uniform(dataset: PreferenceDataset, sel: SelectionConfig) -> SelectionTrace:
    """
    Uniform: 一様ランダムに重複なしで選ぶ比較手法

    乱数順列の先頭を使うため、小さい予算の選択は大きい予算の選択の先頭部分になります。
    """
    _check_budget(dataset, sel)
    rng = np.random.default_rng(sel.rng_seed)
    chosen = [int(i) for i in rng.permutation(len(dataset))[:sel.budget]]
    return SelectionTrace(
        algorithm='uniform',
        chosen=chosen,
        per_round_score=[],
        refit_rounds=[],
        model=sel.model,
    )


def select_pmc(
    dataset: PreferenceDataset,
    oracle: FeedbackOracle,
    sel: SelectionConfig
) -> SelectionTrace:
    """
    PMC: 推定報酬差 |β(φᵢᵀθ̂ − bᵢ)| が最大の点を選ぶ比較手法

    θ̂はADPOと同じスケジュールで、オラクルから得たフィードバックで再推定します。
    """
    _check_budget(dataset, sel)
    learner = _OnlineLearner(dataset, oracle, sel)
    rng = np.random.default_rng(sel.rng_seed)
    available = np.ones(len(dataset), dtype=bool)
    theta = _initial_theta(dataset, sel)
    beta = sel.model.beta

    chosen: List[int] = []
    scores: List[float] = []
    refit_rounds: List[int] = []
    schedule = [(1, theta.copy())]

    for t in range(1, sel.budget + 1):
        if is_refit_round(t, sel.refit):
            theta = learner.refit(chosen, theta)
            refit_rounds.append(t)
            schedule.append((t, theta.copy()))

        pool = _candidate_pool(rng, available, sel.pool_size)
        pool_scores = np.abs(beta * (dataset.phi[pool] @ theta - dataset.bias[pool]))
        best = int(np.argmax(pool_scores))
        index = int(pool[best])

        learner.observe(index)
        available[index] = False
        chosen.append(index)
        scores.append(float(pool_scores[best]))

    return SelectionTrace(
        algorithm='pmc',
        chosen=chosen,
        per_round_score=scores,
        refit_rounds=refit_rounds,
        policy_schedule=schedule,
        model=sel.model,
    )


def empirical_kappa(dataset: PreferenceDataset, trace: SelectionTrace) -> float:
    """
    選択を再生して経験的κを計算

    各ラウンドtで全N点の分散と選ばれた点の分散の比を取り、その最大値を返します。
    選ばれた点の分散が0の場合は +∞ を返します。結果は `trace.kappa_estimate` にも記録します。

    Args:
        dataset: 選択に使ったデータセット
        trace: 計画行列を使う手法（adpo / adpo_plus / apo）の記録

    Returns:
        float: κ̂（≥ 1）

    Raises:
        InvalidInputError: 計画行列を使わない手法の記録が渡された場合
    """
    if trace.algorithm not in VECTOR_KINDS:
        raise InvalidInputError(f"κを計算できない手法です: {trace.algorithm}")
    weighted = VECTOR_KINDS[trace.algorithm] == 'dpo'
    config = trace.model
    state = init_design(dataset.dim, config.gamma)
    kappa = 1.0

    for t, index in enumerate(trace.chosen, start=1):
        if weighted:
            vectors = acquisition_vectors(
                dataset.phi, dataset.bias, trace.policy_at(t), config, state.h_inv
            )
        else:
            vectors = dataset.phi
        values = state.variances(vectors)
        denominator = values[index]
        if denominator <= 0:
            kappa = float('inf')
            break
        kappa = max(kappa, float(values.max() / denominator))
        state.update(vectors[index])

    trace.kappa_estimate = kappa
    return kappa


def run_selection(
    algorithm: str,
    dataset: PreferenceDataset,
    sel: SelectionConfig,
    oracle: Optional[FeedbackOracle] = None
) -> SelectionTrace:
    """
    手法名で選択を実行

    オンライン手法（adpo, pmc）にはoracleが必要です。datasetのフィードバックは参照しません。

    Raises:
        InvalidInputError: 不明な手法名、またはオンライン手法でoracleがない場合
    """
    selectors: dict = {
        'adpo_plus': select_adpo_plus,
        'uniform': select_uniform,
        'apo': select_apo,
    }
    online: dict = {
        'adpo': select_adpo,
        'pmc': select_pmc,
    }
    if algorithm in online:
        if oracle is None:
            raise InvalidInputError(f"オンライン手法にはオラクルが必要です: {algorithm}")
        return online[algorithm](dataset, oracle, sel)
    if algorithm in selectors:
        return selectors[algorithm](dataset, sel)
    raise InvalidInputError(f"不明な手法です: {algorithm}")
