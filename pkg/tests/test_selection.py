import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from modules import selection
from modules.config import ModelConfig, SelectionConfig
from modules.design import init_design
from modules.errors import ContractViolationError, FeedbackMissingError, InvalidInputError
from modules.model import Policy, PreferenceDataset, PreferencePoint, logit_weight
from modules.selection import (
    FeedbackOracle,
    _candidate_pool,
    acquisition_vector,
    acquisition_vectors,
    acquisition_weights,
    empirical_kappa,
    is_refit_round,
    run_selection,
    select_adpo,
    select_adpo_plus,
    select_apo,
    select_pmc,
    select_uniform,
    ucb_weight,
)

from tests.conftest import make_dataset


def _online(dataset, algorithm, sel):
    oracle = FeedbackOracle.from_dataset(dataset)
    trace = run_selection(algorithm, dataset.without_feedback(), sel, oracle)
    return trace, oracle


class TestFeedbackOracle:

    def test_double_query_is_a_contract_violation(self):
        oracle = FeedbackOracle([1, 0, 1])
        assert oracle.query(1) == 0
        with pytest.raises(ContractViolationError):
            oracle.query(1)
        assert oracle.query_log == [1]

    def test_requires_complete_feedback(self):
        dataset = PreferenceDataset(np.eye(2), np.zeros(2), [1, -1])
        with pytest.raises(FeedbackMissingError):
            FeedbackOracle.from_dataset(dataset)

    def test_rejects_out_of_range_index(self):
        with pytest.raises(InvalidInputError):
            FeedbackOracle([1, 0]).query(2)


class TestWeights:

    def test_ucb_weight_with_zero_alpha_equals_plugin(self):
        point = PreferencePoint(0, np.array([0.4, -0.2]), 0.3)
        policy = Policy(np.array([2.0, 1.0]))
        plugin = logit_weight(point, policy, 1.5) / 1.5 ** 2
        assert ucb_weight(point, policy, np.eye(2), 0.0, 1.5) == pytest.approx(plugin)

    def test_ucb_weight_is_optimistic(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            point = PreferencePoint(0, rng.standard_normal(3), float(rng.normal()))
            policy = Policy(rng.standard_normal(3) * 3)
            plugin = logit_weight(point, policy, 1.0)
            assert ucb_weight(point, policy, np.eye(3) * 0.1, 3.0, 1.0) >= plugin

    def test_ucb_weight_saturates_inside_confidence_width(self):
        point = PreferencePoint(0, np.array([1.0]), 0.0)
        weight = ucb_weight(point, Policy(np.array([0.5])), np.eye(1), 1.0, 1.0)
        assert weight == 0.25

    def test_vectorized_weights_match_single_point(self):
        dataset = make_dataset(n_points=20, dim=3, seed=3)
        theta = np.array([1.0, -2.0, 0.5])
        config = ModelConfig(beta=2.0, alpha=1.0)
        cov = np.eye(3) * 0.3
        weights = acquisition_weights(dataset.phi, dataset.bias, theta, config, cov)
        for i in range(len(dataset)):
            expected = ucb_weight(dataset.point(i), Policy(theta), cov, 1.0, 2.0)
            assert weights[i] == pytest.approx(expected)

    def test_zero_alpha_is_bitwise_plugin(self):
        dataset = make_dataset(n_points=30, dim=3, seed=4)
        theta = np.array([0.5, 1.0, -1.0])
        config = ModelConfig(alpha=0.0)
        with_cov = acquisition_weights(dataset.phi, dataset.bias, theta, config, np.eye(3))
        without = acquisition_weights(dataset.phi, dataset.bias, theta, config, None)
        assert_array_equal(with_cov, without)

    def test_zero_alpha_traces_match_plugin_path(self, medium_dataset, monkeypatch):
        sel = SelectionConfig(budget=40, pool_size=32, rng_seed=6, model=ModelConfig(alpha=0.0))
        ucb, _ = _online(medium_dataset, 'adpo', sel)

        original = selection.acquisition_vectors

        def _plugin(phi, bias, theta, config, cov=None):
            return original(phi, bias, theta, config, None)

        monkeypatch.setattr(selection, 'acquisition_vectors', _plugin)
        plugin, _ = _online(medium_dataset, 'adpo', sel)
        assert plugin.chosen == ucb.chosen
        assert plugin.per_round_score == ucb.per_round_score
        assert plugin.refit_rounds == ucb.refit_rounds

    def test_acquisition_vector_scales_phi(self):
        point = PreferencePoint(0, np.array([3.0, 4.0]), 0.0)
        vector = acquisition_vector(point, Policy.zeros(2), ModelConfig(beta=2.0))
        # θ = 0, b = 0 のとき w = 1/4 なので v = β·(1/2)·φ
        assert_allclose(vector, [3.0, 4.0])


class TestRefitSchedule:

    @pytest.mark.parametrize("schedule, expected", [
        ('doubling', [2, 4, 8, 16]),
        ('every', list(range(2, 17))),
        ('never', []),
    ])
    def test_rounds(self, schedule, expected):
        assert [t for t in range(1, 17) if is_refit_round(t, schedule)] == expected

    def test_adpo_refits_on_doubling_rounds(self, medium_dataset):
        sel = SelectionConfig(budget=20, pool_size=None)
        trace, _ = _online(medium_dataset, 'adpo', sel)
        assert trace.refit_rounds == [2, 4, 8, 16]
        assert [start for start, _ in trace.policy_schedule] == [1, 2, 4, 8, 16]

    def test_initial_theta_is_used_in_round_one(self, medium_dataset):
        theta0 = tuple(np.linspace(-1, 1, medium_dataset.dim))
        sel = SelectionConfig(budget=3, pool_size=None, initial_theta=theta0)
        trace, _ = _online(medium_dataset, 'adpo', sel)
        assert_allclose(trace.policy_at(1), theta0)


class TestGreedySelection:

    def test_no_duplicates_and_budget_respected(self, medium_dataset):
        for algorithm in ('adpo_plus', 'apo', 'uniform'):
            trace = run_selection(algorithm, medium_dataset, SelectionConfig(budget=100, pool_size=32))
            assert len(trace.chosen) == 100
            assert len(set(trace.chosen)) == 100

    def test_budget_larger_than_dataset(self, small_dataset):
        with pytest.raises(InvalidInputError):
            select_apo(small_dataset, SelectionConfig(budget=len(small_dataset) + 1))

    def test_budget_equal_to_dataset_selects_everything(self, small_dataset):
        trace = select_adpo_plus(small_dataset, SelectionConfig(budget=len(small_dataset)))
        assert sorted(trace.chosen) == list(range(len(small_dataset)))

    def test_apo_first_pick_is_largest_norm(self, medium_dataset):
        trace = select_apo(medium_dataset, SelectionConfig(budget=1, pool_size=None))
        assert trace.chosen[0] == int(np.argmax(np.linalg.norm(medium_dataset.phi, axis=1)))

    def test_adpo_plus_first_pick_maximizes_weighted_norm(self, medium_dataset):
        theta = np.ones(medium_dataset.dim)
        config = ModelConfig(alpha=0.0)
        sel = SelectionConfig(budget=1, pool_size=None, model=config)
        trace = select_adpo_plus(medium_dataset, sel, policy=Policy(theta))
        weights = acquisition_weights(medium_dataset.phi, medium_dataset.bias, theta, config)
        scores = weights * np.sum(medium_dataset.phi ** 2, axis=1)
        assert trace.chosen[0] == int(np.argmax(scores))

    def test_identical_points_break_ties_to_lowest_index(self):
        dataset = PreferenceDataset(np.ones((5, 2)), np.zeros(5), [1, 0, 1, 0, 1])
        trace = select_apo(dataset, SelectionConfig(budget=3, pool_size=None))
        assert trace.chosen == [0, 1, 2]

    def test_selection_is_nested_across_budgets(self, medium_dataset):
        small = select_apo(medium_dataset, SelectionConfig(budget=16, pool_size=64, rng_seed=5))
        large = select_apo(medium_dataset, SelectionConfig(budget=64, pool_size=64, rng_seed=5))
        assert large.prefix(16) == small.chosen

    def test_same_seed_is_deterministic(self, medium_dataset):
        sel = SelectionConfig(budget=50, pool_size=32, rng_seed=9)
        first, _ = _online(medium_dataset, 'adpo', sel)
        second, _ = _online(medium_dataset, 'adpo', sel)
        assert first.chosen == second.chosen
        assert first.per_round_score == second.per_round_score

    def test_scores_are_non_increasing_with_full_pool(self, medium_dataset):
        trace = select_apo(medium_dataset, SelectionConfig(budget=40, pool_size=None))
        scores = np.array(trace.per_round_score)
        assert np.all(np.diff(scores) <= 1e-12)

    def test_design_final_counts_updates(self, medium_dataset):
        trace = select_adpo_plus(medium_dataset, SelectionConfig(budget=25))
        assert trace.design_final.count == 25

    def test_adpo_plus_scores_are_non_increasing_with_full_pool(self, medium_dataset):
        trace = select_adpo_plus(medium_dataset, SelectionConfig(budget=40, pool_size=None))
        scores = np.array(trace.per_round_score)
        assert np.all(np.diff(scores) <= 1e-12)

    def test_adpo_order_matches_greedy_log_determinant(self):
        dataset = make_dataset(n_points=40, dim=4, seed=12)
        config = ModelConfig(alpha=0.0)
        sel = SelectionConfig(budget=12, pool_size=None, refit='never', model=config)
        trace, _ = _online(dataset, 'adpo', sel)

        vectors = acquisition_vectors(dataset.phi, dataset.bias, np.zeros(4), config)
        h = config.gamma * np.eye(4)
        remaining = list(range(len(dataset)))
        expected = []
        for _ in range(sel.budget):
            logdets = [np.linalg.slogdet(h + np.outer(vectors[i], vectors[i]))[1] for i in remaining]
            best = remaining.pop(int(np.argmax(logdets)))
            h = h + np.outer(vectors[best], vectors[best])
            expected.append(best)
        assert trace.chosen == expected

    def test_apo_matches_adpo_plus_at_zero_policy(self):
        base = make_dataset(n_points=60, dim=4, seed=13)
        dataset = PreferenceDataset(base.phi, np.zeros(60), base.feedback)
        # θ̂ = 0、b = 0、β = 2 では獲得ベクトルが φ そのものになる
        sel = SelectionConfig(budget=20, pool_size=None, model=ModelConfig(beta=2.0, alpha=0.0))
        apo = select_apo(dataset, sel)
        plus = select_adpo_plus(dataset, sel, policy=Policy.zeros(4))
        assert plus.chosen == apo.chosen
        assert_allclose(plus.per_round_score, apo.per_round_score, rtol=1e-12)

    def test_adpo_plus_at_zero_policy_picks_like_adpo_first(self, medium_dataset):
        sel = SelectionConfig(budget=5, pool_size=None)
        plus = select_adpo_plus(medium_dataset, sel, policy=Policy.zeros(medium_dataset.dim))
        online, _ = _online(medium_dataset, 'adpo', sel)
        assert plus.chosen[0] == online.chosen[0]

    def test_adpo_plus_ignores_point_order(self):
        dataset = make_dataset(n_points=80, dim=4, seed=14)
        perm = np.random.default_rng(3).permutation(80)
        shuffled = PreferenceDataset(dataset.phi[perm], dataset.bias[perm], dataset.feedback[perm])
        policy = Policy(np.array([1.0, -0.5, 2.0, 0.0]))
        sel = SelectionConfig(budget=20, pool_size=None)

        original = select_adpo_plus(dataset, sel, policy=policy)
        permuted = select_adpo_plus(shuffled, sel, policy=policy)
        assert [int(perm[j]) for j in permuted.chosen] == original.chosen

    def test_each_choice_maximizes_variance_in_its_pool(self, medium_dataset):
        config = ModelConfig()
        sel = SelectionConfig(budget=30, pool_size=16, rng_seed=8, model=config)
        theta = np.linspace(-1.0, 1.0, medium_dataset.dim)
        trace = select_adpo_plus(medium_dataset, sel, policy=Policy(theta))

        # 同じ乱数列で候補プールを再現して確認する
        rng = np.random.default_rng(sel.rng_seed)
        state = init_design(medium_dataset.dim, config.gamma)
        available = np.ones(len(medium_dataset), dtype=bool)
        for t, index in enumerate(trace.chosen):
            pool = _candidate_pool(rng, available, sel.pool_size)
            vectors = acquisition_vectors(
                medium_dataset.phi[pool], medium_dataset.bias[pool], theta, config, state.h_inv
            )
            scores = state.variances(vectors)
            position = int(np.flatnonzero(pool == index)[0])
            assert scores[position] == scores.max()
            assert trace.per_round_score[t] == scores[position]
            state.update(vectors[position])
            available[index] = False


class TestOnlineSelection:

    def test_adpo_queries_exactly_the_chosen_points(self, medium_dataset):
        trace, oracle = _online(medium_dataset, 'adpo', SelectionConfig(budget=64, pool_size=32))
        assert oracle.query_log == trace.chosen
        assert len(set(oracle.query_log)) == 64

    def test_pmc_queries_exactly_the_chosen_points(self, medium_dataset):
        trace, oracle = _online(medium_dataset, 'pmc', SelectionConfig(budget=64, pool_size=32))
        assert oracle.query_log == trace.chosen
        assert trace.design_final is None

    def test_pmc_first_pick_is_largest_bias_magnitude(self, medium_dataset):
        trace, _ = _online(medium_dataset, 'pmc', SelectionConfig(budget=1, pool_size=None))
        assert trace.chosen[0] == int(np.argmax(np.abs(medium_dataset.bias)))

    def test_online_selector_requires_oracle(self, medium_dataset):
        with pytest.raises(InvalidInputError):
            run_selection('adpo', medium_dataset, SelectionConfig(budget=4))

    def test_online_selector_never_reads_stored_feedback(self, medium_dataset):
        # フィードバックを隠したデータセットでも動作する
        oracle = FeedbackOracle.from_dataset(medium_dataset)
        trace = select_adpo(medium_dataset.without_feedback(), oracle, SelectionConfig(budget=10))
        assert len(trace.chosen) == 10


class TestUniform:

    def test_prefix_of_larger_budget(self, medium_dataset):
        small = select_uniform(medium_dataset, SelectionConfig(budget=10, rng_seed=3))
        large = select_uniform(medium_dataset, SelectionConfig(budget=40, rng_seed=3))
        assert large.prefix(10) == small.chosen
        assert small.per_round_score == []

    def test_different_seeds_differ(self, medium_dataset):
        a = select_uniform(medium_dataset, SelectionConfig(budget=20, rng_seed=0))
        b = select_uniform(medium_dataset, SelectionConfig(budget=20, rng_seed=1))
        assert a.chosen != b.chosen

    def test_inclusion_frequency_is_half_at_half_budget(self):
        dataset = make_dataset(n_points=20, dim=2, seed=0)
        counts = np.zeros(20)
        n_seeds = 10_000
        for seed in range(n_seeds):
            trace = select_uniform(dataset, SelectionConfig(budget=10, rng_seed=seed))
            counts[trace.chosen] += 1
        assert np.all(np.abs(counts / n_seeds - 0.5) <= 0.02)


class TestEmpiricalKappa:

    def test_orthonormal_full_pool_gives_one(self):
        dim = 6
        dataset = PreferenceDataset(np.eye(dim), np.zeros(dim), np.ones(dim))
        trace = select_apo(dataset, SelectionConfig(budget=dim, pool_size=None))
        assert empirical_kappa(dataset, trace) == 1.0

    def test_at_least_one_for_pooled_selection(self, medium_dataset):
        trace = select_adpo_plus(medium_dataset, SelectionConfig(budget=30, pool_size=16))
        assert empirical_kappa(medium_dataset, trace) >= 1.0

    def test_zero_score_choice_is_infinite(self):
        phi = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        dataset = PreferenceDataset(phi, np.zeros(3), [1, 0, 1])
        trace = select_apo(dataset, SelectionConfig(budget=2, pool_size=None))
        # 2点目は分散0の点しか残っていないが、選択済みの点の分散は正
        assert empirical_kappa(dataset, trace) == float('inf')
        assert trace.kappa_estimate == float('inf')

    def test_estimate_is_stored_on_trace(self, medium_dataset):
        trace = select_adpo_plus(medium_dataset, SelectionConfig(budget=20, pool_size=16))
        assert trace.kappa_estimate is None
        kappa = empirical_kappa(medium_dataset, trace)
        assert trace.kappa_estimate == kappa

    def test_not_defined_for_uniform(self, medium_dataset):
        trace = select_uniform(medium_dataset, SelectionConfig(budget=5))
        with pytest.raises(InvalidInputError):
            empirical_kappa(medium_dataset, trace)


def test_unknown_algorithm(small_dataset):
    with pytest.raises(InvalidInputError):
        run_selection('random', small_dataset, SelectionConfig(budget=2))
