import numpy as np
import pytest
from numpy.testing import assert_allclose

from modules.design import REINVERT_EVERY, init_design, logdet_gain, update, variance
from modules.errors import InvalidInputError


class TestInitDesign:

    def test_initial_state(self):
        state = init_design(3, 2.0)
        assert_allclose(state.h, 2.0 * np.eye(3))
        assert_allclose(state.h_inv, 0.5 * np.eye(3))
        assert state.count == 0
        assert state.logdet == pytest.approx(3 * np.log(2.0))

    @pytest.mark.parametrize("dim, gamma", [(0, 1.0), (2, 0.0), (2, -1.0)])
    def test_rejects_invalid_arguments(self, dim, gamma):
        with pytest.raises(InvalidInputError):
            init_design(dim, gamma)

    def test_rejects_wrong_dimension(self):
        with pytest.raises(InvalidInputError):
            variance(init_design(3), np.ones(2))


class TestRankOneUpdates:

    def test_inverse_tracks_direct_inversion(self):
        rng = np.random.default_rng(0)
        dim = 32
        state = init_design(dim, 1.0)
        directions = rng.standard_normal((10, dim))
        previous = np.array([variance(state, p) for p in directions])

        for _ in range(500):
            update(state, rng.standard_normal(dim) / np.sqrt(dim))
            current = np.array([variance(state, p) for p in directions])
            # 分散は更新で増えない
            assert np.all(current <= previous * (1 + 1e-12) + 1e-15)
            previous = current

        direct = np.linalg.inv(state.h)
        error = np.linalg.norm(state.h_inv - direct) / np.linalg.norm(direct)
        assert error <= 1e-8
        assert state.count == 500

    def test_logdet_is_tracked(self):
        rng = np.random.default_rng(1)
        state = init_design(5, 0.5)
        for _ in range(40):
            update(state, rng.standard_normal(5))
        sign, logdet = np.linalg.slogdet(state.h)
        assert sign > 0
        assert state.logdet == pytest.approx(logdet, rel=1e-9)

    def test_periodic_reinversion(self):
        rng = np.random.default_rng(2)
        state = init_design(4, 1.0)
        for _ in range(REINVERT_EVERY):
            update(state, rng.standard_normal(4) * 0.1)
        assert_allclose(state.h_inv, np.linalg.inv(state.h), rtol=1e-10, atol=1e-12)
        assert_allclose(state.h_inv, state.h_inv.T, atol=0)

    def test_copy_is_independent(self):
        state = init_design(2)
        clone = state.copy()
        update(clone, np.array([1.0, 0.0]))
        assert state.count == 0
        assert_allclose(state.h, np.eye(2))


class TestAcquisitionEquivalence:

    def test_variance_argmax_equals_logdet_argmax(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            dim = int(rng.integers(2, 7))
            state = init_design(dim, float(rng.uniform(0.5, 2.0)))
            for _ in range(int(rng.integers(0, 10))):
                update(state, rng.standard_normal(dim))
            candidates = rng.standard_normal((int(rng.integers(2, 17)), dim))

            dense = [np.linalg.slogdet(state.h + np.outer(v, v))[1] for v in candidates]
            assert int(np.argmax(dense)) == int(np.argmax(state.variances(candidates)))

    def test_ties_break_to_lowest_index(self):
        state = init_design(3)
        update(state, np.array([1.0, 0.0, 0.0]))
        candidates = np.array([[0.0, 1.0, 0.0], [0.5, 0.0, 0.0], [0.0, 1.0, 0.0]])
        dense = [np.linalg.slogdet(state.h + np.outer(v, v))[1] for v in candidates]
        assert int(np.argmax(dense)) == 0
        assert int(np.argmax(state.variances(candidates))) == 0

    def test_logdet_gain_matches_dense_difference(self):
        rng = np.random.default_rng(4)
        state = init_design(4, 1.0)
        update(state, rng.standard_normal(4))
        v = rng.standard_normal(4)
        before = np.linalg.slogdet(state.h)[1]
        after = np.linalg.slogdet(state.h + np.outer(v, v))[1]
        assert logdet_gain(state, v) == pytest.approx(after - before, rel=1e-10)
