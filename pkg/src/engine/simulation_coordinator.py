"""
仿真协调器 - 按种子逐块执行卸载计划并汇总
"""
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy import stats

from ..analytics.analytical_model import SystemParams
from ..utils.exceptions import PlanError
from ..utils.logger import get_logger, get_run_tracker
from ..workload.trace_generator import EpochTrace, OffloadPlan, generate_epoch
from .strategies import BlockReport, StrategyConfig, run_block


@dataclass
class RunReport:
    """
    多种子汇总结果

    计数类字段均为每个种子（整个计划）的平均值；
    total_cycles 为各块平均周期之和。
    """
    strategy: str
    seeds: int
    total_cycles: float
    per_block_cycles: List[float]
    std_cycles: float
    ci95: float
    conflicts_detected: float
    instructions_executed: float
    instructions_reexecuted: float
    coherence_transactions: float
    commits: float
    retries_exhausted: bool
    exhausted_blocks: int = 0
    first_attempt_conflict_rate: float = 0.0
    seed_totals: List[float] = field(default_factory=list)


def confidence_halfwidth(values: Sequence[float], confidence: float = 0.95) -> float:
    """均值的 t 分布置信区间半宽"""
    n = len(values)
    if n < 2:
        return 0.0
    std = float(np.std(values, ddof=1))
    return float(stats.t.ppf((1 + confidence) / 2, n - 1) * std / math.sqrt(n))


class SimulationCoordinator:
    """仿真协调器"""

    def __init__(self, params: SystemParams, cfg: StrategyConfig):
        self.params = params
        self.cfg = cfg
        self.logger = get_logger()
        self.run_tracker = get_run_tracker()

    def _traces_for_seed(
        self,
        plan: OffloadPlan,
        seed: int,
        traces: Optional[Sequence[EpochTrace]]
    ) -> Iterable[EpochTrace]:
        if traces is not None:
            return traces
        return (generate_epoch(plan, index, self.params, seed) for index in range(len(plan.blocks)))

    def run_plan(
        self,
        plan: OffloadPlan,
        seeds: Sequence[int],
        traces: Optional[Sequence[EpochTrace]] = None
    ) -> RunReport:
        """
        对每个种子逐块执行并汇总

        Args:
            plan: 卸载计划
            seeds: 种子列表（至少一个）
            traces: 外部载入的轨迹；给出时每个种子都复用其首次CPU访问，重执行窗口仍按种子抽取

        Returns:
            RunReport: 汇总结果
        """
        seeds = list(seeds)
        if not seeds:
            raise PlanError("种子列表为空")
        if plan.K != self.params.K:
            raise PlanError(f"计划的 K={plan.K} 与系统参数 K={self.params.K} 不一致", plan_K=plan.K, K=self.params.K)
        if traces is not None and len(traces) != len(plan.blocks):
            raise PlanError("轨迹数与计划块数不一致", traces=len(traces), blocks=len(plan.blocks))

        self.run_tracker.start_job()
        block_count = len(plan.blocks)
        block_cycles = np.zeros((len(seeds), block_count), dtype=np.float64)
        counters = np.zeros(5, dtype=np.float64)
        exhausted = 0
        first_conflicts = 0

        for row, seed in enumerate(seeds):
            for trace in self._traces_for_seed(plan, seed, traces):
                report: BlockReport = run_block(trace, self.params, self.cfg, seed)
                block_cycles[row, trace.block_id] = report.cycles
                counters += (
                    report.conflicts,
                    report.instructions_executed,
                    report.instructions_reexecuted,
                    report.coherence_transactions,
                    report.commits
                )
                first_conflicts += report.first_attempt_conflict
                if report.retries_exhausted:
                    exhausted += 1
                    self.logger.log_retries_exhausted(
                        self.cfg.strategy.value, trace.block_id, seed, report.attempts
                    )

        seed_totals = block_cycles.sum(axis=1)
        per_block = block_cycles.mean(axis=0)
        means = counters / len(seeds)
        self.run_tracker.end_job(len(seeds), len(seeds) * block_count, float(counters[0]), exhausted)

        return RunReport(
            strategy=self.cfg.strategy.value,
            seeds=len(seeds),
            total_cycles=float(per_block.sum()),
            per_block_cycles=per_block.tolist(),
            std_cycles=float(np.std(seed_totals, ddof=1)) if len(seeds) > 1 else 0.0,
            ci95=confidence_halfwidth(seed_totals),
            conflicts_detected=float(means[0]),
            instructions_executed=float(means[1]),
            instructions_reexecuted=float(means[2]),
            coherence_transactions=float(means[3]),
            commits=float(means[4]),
            retries_exhausted=exhausted > 0,
            exhausted_blocks=exhausted,
            first_attempt_conflict_rate=first_conflicts / (len(seeds) * block_count),
            seed_totals=seed_totals.tolist()
        )


def run_plan(
    plan: OffloadPlan,
    params: SystemParams,
    cfg: StrategyConfig,
    seeds: Sequence[int],
    traces: Optional[Sequence[EpochTrace]] = None
) -> RunReport:
    """执行卸载计划（便捷函数）"""
    start = time.time()
    report = SimulationCoordinator(params, cfg).run_plan(plan, seeds, traces)
    get_logger().debug(
        f"{cfg.strategy.value}: {len(plan.blocks)} 块 × {report.seeds} 种子, 平均 {report.total_cycles:.2f} 周期",
        duration_ms=round((time.time() - start) * 1000, 2)
    )
    return report
