"""
执行策略与仿真协调器测试
"""
import math

import numpy as np
import pytest
from scipy import stats

from src.analytics.analytical_model import (
    BlockSpec,
    SystemParams,
    block_conflict_probability,
    conda_expected_block_time,
    conda_expected_block_time_retry,
    mrcn_expected_block_time,
)
from src.config.config import AppConfig, ConflictMode, SignatureMode, Strategy
from src.engine.simulation_coordinator import SimulationCoordinator, confidence_halfwidth, run_plan
from src.engine.strategies import (
    StrategyConfig,
    run_block,
    run_block_conda,
    run_block_fine_grained,
    run_block_mrcn,
)
from src.utils.exceptions import PlanError
from src.utils.logger import get_run_tracker
from src.workload.trace_generator import OffloadPlan, generate_epoch


# 地址 2 在NMP第 90 条指令（第 5 段）与CPU访问重叠
CONFLICT_NMP = [(1, 10, False), (2, 90, True)]
CONFLICT_CPU = [(2, 3, True)]


class TestForcedConflict:

    def test_conda_reexecutes_whole_block(self, quiet_params, trace_factory):
        trace = trace_factory(100, 1, CONFLICT_NMP, CONFLICT_CPU)
        report = run_block_conda(trace, quiet_params, StrategyConfig(strategy=Strategy.CONDA), seed=0)
        # 2α + T_commit
        assert report.cycles == pytest.approx(308.0)
        assert report.attempts == 2
        assert report.conflicts == 1
        assert report.commits == 1
        assert report.instructions_executed == 200
        assert report.instructions_reexecuted == 100
        assert report.coherence_transactions == 2
        assert report.first_attempt_conflict
        assert not report.retries_exhausted

    def test_mrcn_rolls_back_to_conflicting_segment(self, quiet_params, trace_factory):
        trace = trace_factory(100, 5, CONFLICT_NMP, CONFLICT_CPU)
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5)
        report = run_block_mrcn(trace, quiet_params, cfg, seed=0)
        # α + (20·T_inst + T_tran) + T_commit
        assert report.cycles == pytest.approx(228.0)
        assert report.rollback_segments == [5]
        assert report.instructions_reexecuted == 20
        assert report.segment_executions == [1, 1, 1, 1, 2]

    def test_mrcn_uses_trace_segments_when_unset(self, quiet_params, trace_factory):
        trace = trace_factory(100, 5, CONFLICT_NMP, CONFLICT_CPU)
        report = run_block_mrcn(trace, quiet_params, StrategyConfig(strategy=Strategy.MRCN), seed=0)
        assert report.cycles == pytest.approx(228.0)

    def test_earliest_conflicting_segment_wins(self, quiet_params, trace_factory):
        trace = trace_factory(100, 5, [(1, 10, False), (2, 90, False)], [(2, 0, True), (1, 1, True)])
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5)
        report = run_block_mrcn(trace, quiet_params, cfg, seed=0)
        assert report.rollback_segments == [1]
        assert report.cycles == pytest.approx(308.0)

    def test_retry_cap(self, quiet_params, trace_factory):
        trace = trace_factory(100, 1, CONFLICT_NMP, CONFLICT_CPU)
        cfg = StrategyConfig(strategy=Strategy.CONDA, max_retries=0)
        report = run_block_conda(trace, quiet_params, cfg, seed=0)
        assert report.retries_exhausted
        assert report.commits == 0
        assert report.cycles == pytest.approx(150.0)

    def test_slot_gap_charged_per_retry(self, quiet_params, trace_factory):
        trace = trace_factory(100, 1, CONFLICT_NMP, CONFLICT_CPU)
        cfg = StrategyConfig(strategy=Strategy.CONDA, slot_gap_cycles=12.0)
        assert run_block_conda(trace, quiet_params, cfg, seed=0).cycles == pytest.approx(320.0)

    def test_rw_aware_ignores_mixed_pair(self, quiet_params, trace_factory):
        # CPU 写、NMP 读同一地址
        trace = trace_factory(100, 1, [(2, 50, False)], [(2, 0, True)])
        overlap = StrategyConfig(strategy=Strategy.CONDA)
        aware = StrategyConfig(strategy=Strategy.CONDA, conflict_mode=ConflictMode.RW_AWARE)
        assert run_block_conda(trace, quiet_params, overlap, seed=0).conflicts == 1
        assert run_block_conda(trace, quiet_params, aware, seed=0).conflicts == 0

    def test_bloom_signature_still_detects(self, quiet_params, trace_factory):
        trace = trace_factory(100, 5, CONFLICT_NMP, CONFLICT_CPU)
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5, sig_mode=SignatureMode.BLOOM)
        report = run_block_mrcn(trace, quiet_params, cfg, seed=0)
        assert report.conflicts >= 1
        assert report.rollback_segments[0] <= 5

    def test_fine_grained(self, quiet_params, trace_factory):
        trace = trace_factory(100, 1, CONFLICT_NMP, CONFLICT_CPU)
        report = run_block_fine_grained(trace, quiet_params, StrategyConfig(strategy=Strategy.FINE_GRAINED))
        assert report.cycles == pytest.approx(200.0)
        assert report.coherence_transactions == 2
        cheap = StrategyConfig(strategy=Strategy.FINE_GRAINED, fine_grained_access_cost=5.0)
        assert run_block(trace, quiet_params, cheap, seed=0).cycles == pytest.approx(110.0)


class TestStrategyConfig:

    def test_from_config(self):
        cfg = StrategyConfig.from_config(AppConfig(), Strategy.MRCN, 5)
        assert cfg.breakpoints_b == 5
        assert cfg.max_retries == 1000
        assert cfg.sig_mode == SignatureMode.EXACT_SET

    def test_access_cost_defaults_to_round_trip(self, default_params):
        assert StrategyConfig().access_cost(default_params) == default_params.t_tran
        assert StrategyConfig(fine_grained_access_cost=3.0).access_cost(default_params) == 3.0


class TestGeneratedTraces:

    def test_single_segment_mrcn_matches_conda(self):
        params = SystemParams(K=4096, f_nmp=0.5)
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=1, blocks=1, K=4096)
        conda = StrategyConfig(strategy=Strategy.CONDA)
        mrcn = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=1)
        for seed in range(30):
            trace = generate_epoch(plan, 0, params, seed)
            assert run_block(trace, params, mrcn, seed).cycles == run_block(trace, params, conda, seed).cycles

    @pytest.mark.parametrize("sig_mode", [SignatureMode.EXACT_SET, SignatureMode.BLOOM])
    def test_mrcn_never_slower_per_seed(self, sig_mode):
        params = SystemParams(K=4096, f_nmp=0.5)
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=1, K=4096)
        conda = StrategyConfig(strategy=Strategy.CONDA, sig_mode=sig_mode)
        mrcn = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5, sig_mode=sig_mode)
        for seed in range(60):
            trace = generate_epoch(plan, 0, params, seed)
            conda_report = run_block(trace, params, conda, seed)
            mrcn_report = run_block(trace, params, mrcn, seed)
            assert not conda_report.retries_exhausted
            assert mrcn_report.cycles <= conda_report.cycles
            assert mrcn_report.attempts <= conda_report.attempts

    def test_bloom_rollback_never_moves_backwards(self):
        params = SystemParams(K=4096, f_nmp=0.9)
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=1, K=4096)
        cfg = StrategyConfig(
            strategy=Strategy.MRCN, breakpoints_b=5, sig_mode=SignatureMode.BLOOM, bits_per_elem=2.0, max_retries=200
        )
        rollbacks = 0
        for seed in range(40):
            report = run_block(generate_epoch(plan, 0, params, seed), params, cfg, seed)
            # 每次重执行从上次的冲突段开始，之后的冲突段不会更早
            assert report.rollback_segments == sorted(report.rollback_segments)
            rollbacks += len(report.rollback_segments) > 1
        assert rollbacks > 0

    def test_conda_mean_close_to_closed_form(self, default_params):
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=1, blocks=1, K=default_params.K)
        report = run_plan(plan, default_params, StrategyConfig(strategy=Strategy.CONDA), range(2000))
        expected = conda_expected_block_time(default_params, BlockSpec(theta_nmp=100))
        assert abs(report.total_cycles - expected) / report.total_cycles < 0.02

    def test_mrcn_mean_close_to_closed_form(self, default_params):
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=1, K=default_params.K)
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5)
        report = run_plan(plan, default_params, cfg, range(2000))
        expected = mrcn_expected_block_time(default_params, BlockSpec(theta_nmp=100, breakpoints_b=5))
        assert abs(report.total_cycles - expected) / report.total_cycles < 0.02

    def test_first_attempt_conflicts_match_block_probability(self):
        params = SystemParams(K=1 << 16, f_nmp=0.5)
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=1, blocks=1, K=params.K)
        seeds = 4000
        report = run_plan(plan, params, StrategyConfig(strategy=Strategy.CONDA), range(seeds))
        probability = block_conflict_probability(params, BlockSpec(theta_nmp=100))
        sigma = math.sqrt(probability * (1 - probability) / seeds)
        assert abs(report.first_attempt_conflict_rate - probability) <= 3 * sigma

    def test_conflicts_grow_with_nmp_sharing(self):
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=1, K=1 << 14)
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5)
        conflicts = [
            run_plan(plan, SystemParams(K=1 << 14, f_nmp=f_nmp), cfg, range(1000)).conflicts_detected
            for f_nmp in (0.1, 0.3, 0.5, 0.7, 0.9)
        ]
        assert conflicts == sorted(conflicts)
        assert conflicts[0] < conflicts[-1]

    def test_retry_aware_model_tracks_heavy_sharing(self):
        params = SystemParams(K=1 << 20, f_nmp=0.9)
        plan = OffloadPlan.uniform(theta_nmp=500, breakpoints_b=1, blocks=1, K=params.K)
        report = run_plan(plan, params, StrategyConfig(strategy=Strategy.CONDA), range(4000))
        expected = conda_expected_block_time_retry(params, BlockSpec(theta_nmp=500))
        assert abs(report.total_cycles - expected) / report.total_cycles < 0.03


class TestCoordinator:

    def test_report_aggregates(self):
        params = SystemParams(K=4096, f_nmp=0.5)
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=3, K=4096, seed=2)
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5)
        report = SimulationCoordinator(params, cfg).run_plan(plan, range(40))
        assert report.seeds == 40
        assert len(report.per_block_cycles) == 3
        assert report.total_cycles == pytest.approx(sum(report.per_block_cycles))
        assert report.total_cycles == pytest.approx(float(np.mean(report.seed_totals)))
        assert report.commits == pytest.approx(3.0)
        assert 0.0 < report.first_attempt_conflict_rate < 1.0
        assert report.ci95 > 0.0

    def test_reproducible(self):
        params = SystemParams(K=4096, f_nmp=0.5)
        plan = OffloadPlan.uniform(theta_nmp=100, breakpoints_b=5, blocks=2, K=4096)
        cfg = StrategyConfig(strategy=Strategy.MRCN, breakpoints_b=5)
        first = run_plan(plan, params, cfg, range(25))
        second = run_plan(plan, params, cfg, range(25))
        assert first.seed_totals == second.seed_totals

    def test_exhaustion_reported(self):
        params = SystemParams(K=1, f_nmp=0.5)
        plan = OffloadPlan.uniform(theta_nmp=20, breakpoints_b=1, blocks=2, K=1)
        cfg = StrategyConfig(strategy=Strategy.CONDA, max_retries=2)
        report = run_plan(plan, params, cfg, [0, 1])
        assert report.retries_exhausted
        assert report.exhausted_blocks == 4
        assert report.commits == 0.0
        # 首次执行 + 2 次重执行，每次都冲突
        assert report.conflicts_detected == pytest.approx(6.0)

    def test_external_traces(self, quiet_params, trace_factory):
        trace = trace_factory(100, 5, CONFLICT_NMP, CONFLICT_CPU)
        plan = OffloadPlan(blocks=(trace.block,), K=quiet_params.K)
        cfg = StrategyConfig(strategy=Strategy.MRCN)
        report = run_plan(plan, quiet_params, cfg, [0, 1, 2], traces=[trace])
        assert report.seed_totals == [228.0, 228.0, 228.0]
        assert report.std_cycles == 0.0

    def test_run_tracker_counts(self, quiet_params, trace_factory):
        tracker = get_run_tracker()
        tracker.reset()
        trace = trace_factory(100, 5, CONFLICT_NMP, CONFLICT_CPU)
        plan = OffloadPlan(blocks=(trace.block,), K=quiet_params.K)
        run_plan(plan, quiet_params, StrategyConfig(strategy=Strategy.MRCN), [0, 1, 2], traces=[trace])
        metrics = tracker.get_metrics()
        assert metrics["jobs"] == 1
        assert metrics["trials"] == 3
        assert metrics["conflicts"] == pytest.approx(3.0)
        assert metrics["conflicts_per_block"] == pytest.approx(1.0)
        tracker.log_metrics()

    def test_plan_errors(self, default_params):
        plan = OffloadPlan.uniform(theta_nmp=10, breakpoints_b=1, blocks=1, K=default_params.K)
        cfg = StrategyConfig()
        with pytest.raises(PlanError):
            run_plan(plan, default_params, cfg, [])
        with pytest.raises(PlanError):
            run_plan(OffloadPlan.uniform(10, 1, 1, K=64), default_params, cfg, [0])
        with pytest.raises(PlanError):
            run_plan(plan, default_params, cfg, [0], traces=[])

    def test_confidence_halfwidth(self):
        assert confidence_halfwidth([5.0]) == 0.0
        values = [1.0, 2.0, 3.0]
        expected = stats.t.ppf(0.975, 2) * 1.0 / math.sqrt(3)
        assert confidence_halfwidth(values) == pytest.approx(expected)
