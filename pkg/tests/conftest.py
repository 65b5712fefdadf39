"""
テスト共通のフィクスチャ
"""

import numpy as np
import pytest
from scipy.special import expit

from modules.model import PreferenceDataset


def make_dataset(n_points=64, dim=4, beta=1.0, seed=0, theta=None, with_feedback=True):
    """
    テスト用の選好データセットを作成

    φᵢ ∼ N(0, I/d)、bᵢ ∼ U(−1, 1)、sᵢ ∼ Ber(μ(β(φᵢᵀθ − bᵢ)))
    """
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((n_points, dim)) / np.sqrt(dim)
    bias = rng.uniform(-1.0, 1.0, size=n_points)
    if theta is None:
        theta = rng.standard_normal(dim)
    feedback = None
    if with_feedback:
        feedback = (rng.random(n_points) < expit(beta * (phi @ theta - bias))).astype(np.int8)
    return PreferenceDataset(phi, bias, feedback)


@pytest.fixture
def small_dataset():
    return make_dataset(n_points=64, dim=4, seed=1)


@pytest.fixture
def medium_dataset():
    return make_dataset(n_points=512, dim=6, seed=2)
