"""
单块执行策略：细粒度一致性、CONDA 整块回滚、MRCN 断点回滚

时间统一为NMP周期。NMP重执行时重放相同的地址；CPU窗口每次尝试重新抽取，
时长等于该次尝试的跨度。
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..analytics.analytical_model import SystemParams, segment_bounds
from ..config.config import AppConfig, ConflictMode, SignatureMode, Strategy
from ..protocol.signature import Signature
from ..protocol.validation import CpuWriteLog, validate
from ..workload.trace_generator import EpochTrace, fresh_cpu_stream


class StrategyConfig(BaseModel):
    """策略配置"""
    model_config = ConfigDict(frozen=True)

    strategy: Strategy = Strategy.CONDA
    # 为空时使用轨迹自带的段划分
    breakpoints_b: Optional[int] = Field(default=None, ge=1)
    conflict_mode: ConflictMode = ConflictMode.ADDRESS_OVERLAP
    sig_mode: SignatureMode = SignatureMode.EXACT_SET
    bits_per_elem: float = Field(default=9.6, gt=0.0)
    hashes: int = Field(default=7, ge=1)
    fine_grained_access_cost: Optional[float] = Field(default=None, ge=0.0)
    max_retries: int = Field(default=1000, ge=0)
    slot_gap_cycles: float = Field(default=0.0, ge=0.0)

    @classmethod
    def from_config(
        cls,
        config: AppConfig,
        strategy: Strategy,
        breakpoints_b: Optional[int] = None
    ) -> "StrategyConfig":
        return cls(
            strategy=strategy,
            breakpoints_b=breakpoints_b,
            conflict_mode=config.engine.conflict_mode,
            sig_mode=config.sig.mode,
            bits_per_elem=config.sig.bits_per_elem,
            hashes=config.sig.hashes,
            fine_grained_access_cost=config.engine.fine_grained_access_cost,
            max_retries=config.engine.max_retries,
            slot_gap_cycles=config.engine.slot_gap_cycles
        )

    def access_cost(self, params: SystemParams) -> float:
        """细粒度每次共享访问的代价，默认等于 T_tran"""
        return params.t_tran if self.fine_grained_access_cost is None else self.fine_grained_access_cost


@dataclass
class BlockReport:
    """单块单种子的执行结果"""
    block_id: int
    strategy: Strategy
    cycles: float = 0.0
    attempts: int = 0
    conflicts: int = 0
    instructions_executed: int = 0
    instructions_reexecuted: int = 0
    coherence_transactions: int = 0
    commits: int = 0
    retries_exhausted: bool = False
    first_attempt_conflict: bool = False
    segment_executions: List[int] = field(default_factory=list)
    rollback_segments: List[int] = field(default_factory=list)


def _pass_signature(
    trace: EpochTrace,
    tags: np.ndarray,
    start_segment: int,
    segments: int,
    cfg: StrategyConfig,
    K: int
) -> Signature:
    """从第 start_segment 段（1 起）开始的一次执行所发送的签名"""
    mask = tags >= start_segment
    # 签名容量固定为整块访问数，各次重执行的布隆参数一致
    sig = Signature(
        mode=cfg.sig_mode,
        segments=segments,
        capacity=len(trace.nmp),
        bits_per_elem=cfg.bits_per_elem,
        hashes=cfg.hashes,
        kind_aware=cfg.conflict_mode == ConflictMode.RW_AWARE,
        K=K,
        start_segment=start_segment
    )
    return sig.insert_many(trace.nmp.addresses[mask], tags[mask], trace.nmp.writes[mask])


def _run_rollback(
    trace: EpochTrace,
    params: SystemParams,
    cfg: StrategyConfig,
    seed: int,
    bounds: List[int],
    strategy: Strategy
) -> BlockReport:
    """
    推测执行 -> 发送签名 -> 校验；冲突时从首个冲突段重执行，直到干净或超过重试上限

    bounds 只有一段时即为 CONDA 的整块重执行。
    """
    theta = trace.block.theta_nmp
    b = len(bounds) - 1
    tags = np.searchsorted(np.asarray(bounds), trace.nmp.slots, side="right").astype(np.int64)
    report = BlockReport(block_id=trace.block_id, strategy=strategy, segment_executions=[0] * b)

    signatures: Dict[int, Signature] = {}
    log = CpuWriteLog().record_stream(trace.cpu)
    rollback = 0
    while True:
        span = (theta - bounds[rollback]) * params.t_inst + params.t_tran
        if report.attempts > 0:
            report.cycles += cfg.slot_gap_cycles
            report.instructions_reexecuted += theta - bounds[rollback]
        report.cycles += span
        report.instructions_executed += theta - bounds[rollback]
        report.coherence_transactions += 1
        for segment in range(rollback, b):
            report.segment_executions[segment] += 1
        report.attempts += 1

        if rollback not in signatures:
            signatures[rollback] = _pass_signature(trace, tags, rollback + 1, b, cfg, params.K)
        outcome = validate(signatures[rollback], log, cfg.conflict_mode)
        if not outcome.has_conflict:
            report.cycles += params.t_commit
            report.commits = 1
            return report

        report.conflicts += 1
        if report.attempts == 1:
            report.first_attempt_conflict = True
        report.rollback_segments.append(outcome.first_conflict_segment)
        if report.attempts > cfg.max_retries:
            report.retries_exhausted = True
            return report

        rollback = outcome.first_conflict_segment - 1
        retry_span = (theta - bounds[rollback]) * params.t_inst + params.t_tran
        log.record_stream(fresh_cpu_stream(
            params, retry_span, seed, trace.block_id, report.attempts, trace.plan_seed
        ))


def run_block_conda(trace: EpochTrace, params: SystemParams, cfg: StrategyConfig, seed: int) -> BlockReport:
    """CONDA：冲突则整块重执行"""
    return _run_rollback(trace, params, cfg, seed, [0, trace.block.theta_nmp], Strategy.CONDA)


def run_block_mrcn(trace: EpochTrace, params: SystemParams, cfg: StrategyConfig, seed: int) -> BlockReport:
    """MRCN：从优先编码器选出的首个冲突段重执行，之前的段不再执行"""
    if cfg.breakpoints_b is not None:
        bounds = segment_bounds(trace.block.theta_nmp, cfg.breakpoints_b)
    else:
        bounds = list(trace.segment_bounds)
    return _run_rollback(trace, params, cfg, seed, bounds, Strategy.MRCN)


def run_block_fine_grained(trace: EpochTrace, params: SystemParams, cfg: StrategyConfig) -> BlockReport:
    """细粒度：每次共享访问付一次一致性往返，无回滚、无签名、无提交延迟"""
    theta = trace.block.theta_nmp
    shared = len(trace.nmp)
    return BlockReport(
        block_id=trace.block_id,
        strategy=Strategy.FINE_GRAINED,
        cycles=theta * params.t_inst + shared * cfg.access_cost(params),
        attempts=1,
        instructions_executed=theta,
        coherence_transactions=shared,
        commits=1,
        segment_executions=[1]
    )


def run_block(trace: EpochTrace, params: SystemParams, cfg: StrategyConfig, seed: int) -> BlockReport:
    """按策略分派"""
    if cfg.strategy == Strategy.FINE_GRAINED:
        return run_block_fine_grained(trace, params, cfg)
    if cfg.strategy == Strategy.MRCN:
        return run_block_mrcn(trace, params, cfg, seed)
    return run_block_conda(trace, params, cfg, seed)
