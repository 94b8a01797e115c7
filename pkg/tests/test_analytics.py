"""
解析模型与冲突概率基准测试
"""
from types import SimpleNamespace

import pytest
from pydantic import ValidationError

from src.analytics import (
    BlockSpec,
    SystemParams,
    access_set_sizes,
    alpha,
    beta,
    block_conflict_probability,
    conda_expected_block_time,
    conda_expected_block_time_retry,
    conda_time_no_conflict,
    conflict_probability,
    exact_conflict_probability,
    expected_block_time,
    fine_grained_block_time,
    monte_carlo_conflict_frequency,
    mrcn_expected_block_time,
    mrcn_expected_block_time_retry,
    mrcn_reexec_conflict_prob,
    mrcn_segment_conflict_prob,
    resolve_theta_cpu,
    round_count,
    segment_bounds,
    total_expected_time,
)
from src.analytics.monte_carlo import OracleEstimate
from src.config.config import AnalyticModel, AppConfig, Strategy
from src.utils.exceptions import AnalyticsDomainError, PlanError, SegmentIndexError
from src.workload.trace_generator import OffloadPlan


class TestConflictProbability:

    def test_empty_sides_never_conflict(self):
        assert conflict_probability(100, 0, 5) == 0.0
        assert conflict_probability(100, 5, 0) == 0.0

    def test_single_address_always_conflicts(self):
        assert conflict_probability(1, 3, 2) == 1.0

    def test_domain_errors(self):
        with pytest.raises(AnalyticsDomainError):
            conflict_probability(0, 1, 1)
        with pytest.raises(AnalyticsDomainError):
            conflict_probability(16, -1, 1)
        # 同时也是 ValueError
        with pytest.raises(ValueError):
            conflict_probability(16, 1, -2)

    def test_matches_direct_formula(self):
        K, n, c = 256, 10, 20
        miss = 1 - 1 / K
        direct = 1 - (1 - (1 - miss ** n) * (1 - miss ** c)) ** K
        assert conflict_probability(K, n, c) == pytest.approx(direct, rel=1e-12)

    def test_monotone_in_access_counts(self):
        assert conflict_probability(1024, 10, 10) < conflict_probability(1024, 20, 10)
        assert conflict_probability(1024, 10, 10) < conflict_probability(1024, 10, 20)

    @pytest.mark.parametrize("n, c", [(1, 1), (10, 20), (50, 113), (500, 750)])
    def test_non_increasing_in_address_space(self, n, c):
        values = [conflict_probability(K, n, c) for K in (1, 2, 16, 256, 4096, 1 << 16, 1 << 20, 1 << 32)]
        assert all(later <= earlier for earlier, later in zip(values, values[1:]))

    def test_stable_for_huge_address_space(self):
        K = 1 << 40
        probability = conflict_probability(K, 1, 1)
        assert probability > 0.0
        assert probability == pytest.approx(1 / K, rel=1e-6)


class TestBlockQuantities:

    def test_theta_cpu_defaults_to_epoch_length(self, default_params):
        block = BlockSpec(theta_nmp=100)
        # α = 150，T_cpu = 2/3
        assert alpha(default_params, block) == 150.0
        assert resolve_theta_cpu(default_params, block) == 225
        assert access_set_sizes(default_params, block) == pytest.approx((50.0, 112.5))

    def test_explicit_theta_cpu_wins(self, default_params):
        block = BlockSpec(theta_nmp=100, theta_cpu=40)
        assert resolve_theta_cpu(default_params, block) == 40

    def test_round_count_is_half_up(self):
        assert round_count(2.5) == 3
        assert round_count(0.5) == 1
        assert round_count(1.49) == 1

    def test_segment_bounds(self):
        assert segment_bounds(100, 5) == [0, 20, 40, 60, 80, 100]
        # 余数并入最后一段
        assert segment_bounds(103, 5) == [0, 20, 40, 60, 80, 103]
        assert segment_bounds(3, 5) == [0, 0, 0, 0, 0, 3]
        with pytest.raises(SegmentIndexError):
            segment_bounds(100, 0)

    def test_no_conflict_time(self, default_params):
        assert conda_time_no_conflict(default_params, BlockSpec(theta_nmp=100)) == 158.0


class TestClosedForms:

    def test_conda_without_shared_accesses(self):
        params = SystemParams(K=1024, f_nmp=0.0)
        assert conda_expected_block_time(params, BlockSpec(theta_nmp=100)) == 158.0

    def test_conda_certain_conflict(self):
        params = SystemParams(K=1, f_cpu=0.5, f_nmp=0.5)
        assert conda_expected_block_time(params, BlockSpec(theta_nmp=100)) == pytest.approx(308.0)

    def test_mrcn_certain_conflict_pays_every_beta(self):
        params = SystemParams(K=1, f_cpu=0.5, f_nmp=0.5)
        block = BlockSpec(theta_nmp=100, breakpoints_b=5)
        # Σ β_k = (100+80+60+40+20) + 5·50
        assert mrcn_expected_block_time(params, block) == pytest.approx(150 + 8 + 550)

    @pytest.mark.parametrize("K, f_nmp, theta", [(1 << 20, 0.9, 500), (4096, 0.5, 100), (64, 0.1, 1000)])
    def test_single_segment_mrcn_equals_conda(self, K, f_nmp, theta):
        params = SystemParams(K=K, f_nmp=f_nmp)
        block = BlockSpec(theta_nmp=theta, breakpoints_b=1)
        conda = conda_expected_block_time(params, block)
        assert mrcn_expected_block_time(params, block) == pytest.approx(conda, rel=1e-12)

    def test_mrcn_not_slower_than_conda(self, default_params):
        for f_nmp in (0.1, 0.5, 0.9):
            params = default_params.model_copy(update={"f_nmp": f_nmp})
            conda = conda_expected_block_time(params, BlockSpec(theta_nmp=500))
            mrcn = mrcn_expected_block_time(params, BlockSpec(theta_nmp=500, breakpoints_b=5))
            assert mrcn <= conda

    def test_segment_probability_independent_of_index(self, default_params):
        block = BlockSpec(theta_nmp=500, breakpoints_b=5)
        values = {mrcn_segment_conflict_prob(default_params, block, j) for j in range(1, 6)}
        assert len(values) == 1

    def test_beta_values(self, default_params):
        block = BlockSpec(theta_nmp=100, breakpoints_b=5)
        assert beta(default_params, block, 0) == pytest.approx(150.0)
        assert beta(default_params, block, 4) == pytest.approx(70.0)

    def test_index_errors(self, default_params):
        block = BlockSpec(theta_nmp=100, breakpoints_b=5)
        with pytest.raises(SegmentIndexError):
            mrcn_segment_conflict_prob(default_params, block, 0)
        with pytest.raises(SegmentIndexError):
            mrcn_segment_conflict_prob(default_params, block, 6)
        with pytest.raises(IndexError):
            beta(default_params, block, 5)
        with pytest.raises(SegmentIndexError):
            mrcn_reexec_conflict_prob(default_params, block, 3, 2)

    def test_reexec_probability_shrinks_with_later_rollback(self, default_params):
        block = BlockSpec(theta_nmp=500, breakpoints_b=5)
        early = mrcn_reexec_conflict_prob(default_params, block, 0, 0)
        late = mrcn_reexec_conflict_prob(default_params, block, 4, 4)
        assert late < early

    def test_fine_grained(self, default_params):
        block = BlockSpec(theta_nmp=100)
        assert fine_grained_block_time(default_params, block) == 100 + 50 * 50
        assert fine_grained_block_time(default_params, block, access_cost=2.0) == 200.0


class TestRetryAware:

    def test_no_sharing_matches_closed_form(self):
        params = SystemParams(K=4096, f_nmp=0.0)
        block = BlockSpec(theta_nmp=100)
        assert conda_expected_block_time_retry(params, block) == pytest.approx(158.0)

    def test_conda_geometric_fixed_point(self):
        params = SystemParams(K=4096, f_cpu=0.5, f_nmp=0.5)
        block = BlockSpec(theta_nmp=100)
        p = block_conflict_probability(params, block)
        expected = alpha(params, block) / (1 - p) + params.t_commit
        assert conda_expected_block_time_retry(params, block) == pytest.approx(expected, rel=1e-9)

    def test_retry_aware_not_below_closed_form(self):
        params = SystemParams(K=4096, f_cpu=0.5, f_nmp=0.5)
        block = BlockSpec(theta_nmp=100)
        assert conda_expected_block_time_retry(params, block) >= conda_expected_block_time(params, block)

    def test_zero_retries_stops_after_first_pass(self):
        params = SystemParams(K=4096, f_cpu=0.5, f_nmp=0.5)
        block = BlockSpec(theta_nmp=100)
        p = block_conflict_probability(params, block)
        expected = alpha(params, block) + (1 - p) * params.t_commit
        assert conda_expected_block_time_retry(params, block, max_retries=0) == pytest.approx(expected)

    def test_slot_gap_adds_cost(self):
        params = SystemParams(K=4096, f_cpu=0.5, f_nmp=0.5)
        block = BlockSpec(theta_nmp=100, breakpoints_b=5)
        plain = mrcn_expected_block_time_retry(params, block)
        gapped = mrcn_expected_block_time_retry(params, block, slot_gap=10.0)
        assert gapped > plain

    def test_single_segment_retry_models_coincide(self):
        params = SystemParams(K=4096, f_cpu=0.5, f_nmp=0.5)
        block = BlockSpec(theta_nmp=100, breakpoints_b=1)
        assert mrcn_expected_block_time_retry(params, block) == pytest.approx(
            conda_expected_block_time_retry(params, block), rel=1e-12
        )


class TestTotalExpectedTime:

    def test_sums_blocks(self, default_params):
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=3, K=default_params.K)
        total = total_expected_time(default_params, plan, Strategy.MRCN)
        single = mrcn_expected_block_time(default_params, BlockSpec(theta_nmp=100, breakpoints_b=5))
        assert len(total.per_block) == 3
        assert total.cycles == pytest.approx(3 * single)

    def test_dispatch(self, default_params):
        block = BlockSpec(theta_nmp=100, breakpoints_b=5)
        assert expected_block_time(default_params, block, Strategy.FINE_GRAINED) == \
            fine_grained_block_time(default_params, block)
        assert expected_block_time(default_params, block, Strategy.CONDA, AnalyticModel.RETRY_AWARE) == \
            conda_expected_block_time_retry(default_params, block)

    def test_empty_plan_rejected(self, default_params):
        with pytest.raises(PlanError):
            total_expected_time(default_params, SimpleNamespace(blocks=()), Strategy.CONDA)


class TestParameters:

    def test_invalid_timing_rejected(self):
        with pytest.raises(ValidationError):
            SystemParams(K=16, t_tran=0.0)
        with pytest.raises(ValidationError):
            SystemParams(K=16, f_nmp=1.5)
        with pytest.raises(ValidationError):
            BlockSpec(theta_nmp=0)

    def test_from_config(self):
        params = SystemParams.from_config(AppConfig(), f_nmp=0.3)
        assert params.K == 1 << 20
        assert params.f_nmp == 0.3
        assert params.t_tran == 50.0


class TestOracle:

    def test_exact_small_cases(self):
        assert exact_conflict_probability(16, 1, 1) == pytest.approx(1 / 16)
        assert exact_conflict_probability(16, 2, 1) == pytest.approx(1 / 256 + (15 / 16) * (2 / 16))
        assert exact_conflict_probability(16, 0, 4) == 0.0

    def test_closed_form_close_when_sparse(self):
        assert conflict_probability(4096, 20, 20) == pytest.approx(
            exact_conflict_probability(4096, 20, 20), abs=5e-3
        )

    def test_monte_carlo_agrees_with_exact(self):
        estimate = monte_carlo_conflict_frequency(256, 10, 10, trials=20000, seed=3)
        assert estimate.within(exact_conflict_probability(256, 10, 10), sigma=4.0)

    def test_monte_carlo_is_reproducible(self):
        first = monte_carlo_conflict_frequency(64, 4, 4, trials=500, seed=9)
        second = monte_carlo_conflict_frequency(64, 4, 4, trials=500, seed=9)
        assert first == second

    def test_monte_carlo_edge_cases(self):
        assert monte_carlo_conflict_frequency(64, 0, 4, trials=10).frequency == 0.0
        with pytest.raises(AnalyticsDomainError):
            monte_carlo_conflict_frequency(64, 1, 1, trials=0)

    def test_within_tolerance(self):
        estimate = OracleEstimate(frequency=0.5, stderr=0.01, trials=2500)
        assert estimate.within(0.52, sigma=3.0)
        assert not estimate.within(0.6, sigma=3.0)
        # 频率为 0 时按单次试验分辨率放宽
        assert OracleEstimate(0.0, 0.0, 100).within(0.02, sigma=3.0)
