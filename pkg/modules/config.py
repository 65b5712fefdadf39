"""
設定モジュール

モデル・最適化・選択アルゴリズムの設定値をdataclassで定義します。
実行環境ごとの既定値（出力先、ログレベル、並列数）は `.env` から読み込みます。
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple

from dotenv import load_dotenv

from .errors import InvalidInputError


REFIT_SCHEDULES = ('doubling', 'every', 'never')

DEFAULT_POOL_SIZE = 256


@dataclass(frozen=True)
class ModelConfig:
    """
    DPOモデルの設定

    Attributes:
        beta: DPO正則化係数β（> 0）
        gamma: 計画行列のリッジγ（> 0）
        alpha: UCB幅α（≥ 0、0でUCB無効）
    """
    beta: float = 1.0
    gamma: float = 1.0
    alpha: float = 3.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidInputError(f"betaは正の値である必要があります: {self.beta}")
        if not self.gamma > 0:
            raise InvalidInputError(f"gammaは正の値である必要があります: {self.gamma}")
        if not self.alpha >= 0:
            raise InvalidInputError(f"alphaは0以上である必要があります: {self.alpha}")


@dataclass(frozen=True)
class FitOptions:
    """
    最尤推定の設定

    Attributes:
        max_iters: 最大反復回数
        grad_tol: 収束判定の勾配ノルム閾値
        ridge: 微小なℓ2正則化（数値安定化用）
        constraint_radius: 指定時は ‖θ‖₂ ≤ R に射影（R=1で理論モード）
    """
    max_iters: int = 500
    grad_tol: float = 1e-8
    ridge: float = 1e-6
    constraint_radius: Optional[float] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError(f"max_itersは1以上である必要があります: {self.max_iters}")
        if not self.grad_tol > 0:
            raise InvalidInputError(f"grad_tolは正の値である必要があります: {self.grad_tol}")
        if not self.ridge >= 0:
            raise InvalidInputError(f"ridgeは0以上である必要があります: {self.ridge}")
        if self.constraint_radius is not None and not self.constraint_radius > 0:
            raise InvalidInputError(
                f"constraint_radiusは正の値である必要があります: {self.constraint_radius}"
            )

    @property
    def constrained(self) -> bool:
        return self.constraint_radius is not None


@dataclass(frozen=True)
class SelectionConfig:
    """
    データ点選択の設定

    Attributes:
        budget: 選択する点数n
        pool_size: 各ラウンドで評価する候補数（Noneで全候補）
        refit: θ̂の再推定スケジュール（'doubling' / 'every' / 'never'）
        model: モデル設定
        fit: 最尤推定の設定
        rng_seed: 乱数シード
        initial_theta: ラウンド1で使うθ̂₀（Noneならゼロベクトル）
    """
    budget: int
    pool_size: Optional[int] = DEFAULT_POOL_SIZE
    refit: str = 'doubling'
    model: ModelConfig = field(default_factory=ModelConfig)
    fit: FitOptions = field(default_factory=FitOptions)
    rng_seed: int = 0
    initial_theta: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.budget < 1:
            raise InvalidInputError(f"budgetは1以上である必要があります: {self.budget}")
        if self.pool_size is not None and self.pool_size < 1:
            raise InvalidInputError(f"pool_sizeは1以上である必要があります: {self.pool_size}")
        if self.refit not in REFIT_SCHEDULES:
            raise InvalidInputError(f"不明な再推定スケジュールです: {self.refit}")

    @property
    def refit_doubling(self) -> bool:
        return self.refit == 'doubling'

    def with_budget(self, budget: int) -> 'SelectionConfig':
        return replace(self, budget=budget)

    def with_seed(self, rng_seed: int) -> 'SelectionConfig':
        return replace(self, rng_seed=rng_seed)

    def fingerprint(self) -> str:
        """
        シードと予算を除いた設定のハッシュ（12桁）を返す

        Returns:
            str: 16進文字列
        """
        payload = asdict(self)
        payload.pop('budget')
        payload.pop('rng_seed')
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]


@dataclass(frozen=True)
class EnvDefaults:
    """環境変数から読み込む実行時の既定値"""
    output_dir: str = 'results'
    log_level: str = 'INFO'
    jobs: int = 1


def load_env_defaults(dotenv_path: Optional[str] = None) -> EnvDefaults:
    """
    `.env` と環境変数から既定値を読み込む

    Args:
        dotenv_path: .envファイルのパス（Noneならカレントから探索）

    Returns:
        EnvDefaults: 既定値

    Raises:
        InvalidInputError: ADPO_JOBSが整数でない場合
    """
    load_dotenv(dotenv_path)

    jobs_text = os.getenv('ADPO_JOBS', '1')
    try:
        jobs = int(jobs_text)
    except ValueError:
        raise InvalidInputError(f"ADPO_JOBSは整数である必要があります: {jobs_text}")

    return EnvDefaults(
        output_dir=os.getenv('ADPO_OUTPUT_DIR', 'results'),
        log_level=os.getenv('ADPO_LOG_LEVEL', 'INFO').upper(),
        jobs=max(jobs, 1),
    )
