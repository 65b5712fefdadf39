"""
計画行列モジュール

正則化された計画行列 Hₜ = γI + Σ v vᵀ と、その逆行列を
Sherman–Morrison公式で逐次更新しながら保持します。
獲得スコアは分散 vᵀHₜ⁻¹v で評価し、行列式は計算しません。
"""

import logging

import numpy as np
from scipy import linalg

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

# 逆行列の誤差蓄積を抑えるため、この回数ごとに直接逆行列を取り直す
REINVERT_EVERY = 1000


class DesignState:
    """
    計画行列 h とその逆行列 h_inv

    Attributes:
        dim: 次元d
        gamma: 初期リッジγ
        h: 計画行列
        h_inv: 逐次更新された逆行列
        count: 適用したランク1更新の回数
        logdet: log det(h)（更新ごとに log(1 + vᵀH⁻¹v) を加算）
    """

    def __init__(self, dim: int, gamma: float):
        self.dim = dim
        self.gamma = gamma
        self.h = gamma * np.eye(dim)
        self.h_inv = np.eye(dim) / gamma
        self.count = 0
        self.logdet = dim * float(np.log(gamma))

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.dim:
            raise InvalidInputError(f"ベクトルの次元が一致しません: {v.shape[-1]} != {self.dim}")
        return v

    def variance(self, v) -> float:
        v = self._check(v)
        return max(float(v @ self.h_inv @ v), 0.0)

    def variances(self, vectors) -> np.ndarray:
        """(m, d) 行列の各行について vᵀH⁻¹v をまとめて計算"""
        vectors = self._check(vectors)
        if vectors.ndim != 2:
            raise InvalidInputError(f"2次元配列である必要があります: shape={vectors.shape}")
        values = np.einsum('ij,ij->i', vectors @ self.h_inv, vectors)
        return np.maximum(values, 0.0)

    def logdet_gain(self, v) -> float:
        return float(np.log1p(self.variance(v)))

    def update(self, v) -> 'DesignState':
        """
        h += vvᵀ とし、h_inv をSherman–Morrison公式で更新

        Returns:
            DesignState: 更新後の自分自身
        """
        v = self._check(v)
        u = self.h_inv @ v
        denominator = 1.0 + float(v @ u)
        self.h += np.outer(v, v)
        self.h_inv -= np.outer(u, u) / denominator
        self.logdet += float(np.log(denominator))
        self.count += 1

        if self.count % REINVERT_EVERY == 0:
            self.reinvert()
        return self

    def reinvert(self) -> None:
        """h を直接逆行列化して h_inv の数値誤差をリセット"""
        factor = linalg.cho_factor(self.h)
        h_inv = linalg.cho_solve(factor, np.eye(self.dim))
        self.h_inv = 0.5 * (h_inv + h_inv.T)
        logger.debug("計画行列の逆行列を再計算しました: count=%d", self.count)

    def copy(self) -> 'DesignState':
        other = DesignState.__new__(DesignState)
        other.dim = self.dim
        other.gamma = self.gamma
        other.h = self.h.copy()
        other.h_inv = self.h_inv.copy()
        other.count = self.count
        other.logdet = self.logdet
        return other


def init_design(d: int, gamma: float = 1.0) -> DesignState:
    """
    H₀ = γI_d の計画行列を作成

    Args:
        d: 次元（≥ 1）
        gamma: リッジγ（> 0）

    Returns:
        DesignState: 初期状態（h_inv = I/γ, count = 0）

    Raises:
        InvalidInputError: d < 1 または gamma ≤ 0 の場合

    Examples:
        >>> init_design(3, 2.0).h_inv[0, 0]
        0.5
    """
    if d < 1:
        raise InvalidInputError(f"次元は1以上である必要があります: {d}")
    if not gamma > 0:
        raise InvalidInputError(f"gammaは正の値である必要があります: {gamma}")
    return DesignState(int(d), float(gamma))


def variance(state: DesignState, v) -> float:
    """vᵀH⁻¹v（≥ 0）"""
    return state.variance(v)


def logdet_gain(state: DesignState, v) -> float:
    """log det(H + vvᵀ) − log det(H) = log(1 + vᵀH⁻¹v)"""
    return state.logdet_gain(v)


def update(state: DesignState, v) -> DesignState:
    """ランク1更新（stateをその場で更新して返す）"""
    return state.update(v)
