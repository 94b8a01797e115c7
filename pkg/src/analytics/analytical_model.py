"""
CONDA / MRCN 期望执行时间解析模型

所有函数都是值输入的纯函数，可在任意线程中并发调用。
时间单位统一为NMP周期。
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, TYPE_CHECKING

from pydantic import BaseModel, ConfigDict, Field

from ..config.config import AnalyticModel, AppConfig, Strategy
from ..utils.exceptions import AnalyticsDomainError, PlanError, SegmentIndexError

if TYPE_CHECKING:
    from ..workload.trace_generator import OffloadPlan


class SystemParams(BaseModel):
    """系统参数：共享空间大小、访问比例与时序常数"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    K: int = Field(ge=1)
    f_cpu: float = Field(default=0.5, ge=0.0, le=1.0)
    f_nmp: float = Field(default=0.5, ge=0.0, le=1.0)
    t_inst: float = Field(default=1.0, gt=0.0)
    t_tran: float = Field(default=50.0, gt=0.0)
    t_commit: float = Field(default=8.0, ge=0.0)
    t_cpu: float = Field(default=2.0 / 3.0, gt=0.0)
    # 仅供读写感知的冲突判定使用，解析模型不区分读写
    write_ratio: float = Field(default=0.5, ge=0.0, le=1.0)

    @classmethod
    def from_config(cls, config: AppConfig, f_nmp: float, K: Optional[int] = None) -> "SystemParams":
        """由应用配置构造"""
        return cls(
            K=K if K is not None else config.workload.k,
            f_cpu=config.workload.f_cpu,
            f_nmp=f_nmp,
            t_inst=config.timing.t_inst,
            t_tran=config.timing.t_tran,
            t_commit=config.timing.t_commit,
            t_cpu=config.timing.t_cpu,
            write_ratio=config.workload.write_ratio
        )


class BlockSpec(BaseModel):
    """卸载块：NMP指令数、同期CPU指令数、回滚段数"""
    model_config = ConfigDict(frozen=True)

    theta_nmp: int = Field(ge=1)
    # None 表示取一个NMP epoch内CPU能执行的指令数 round(α / T_cpu)
    theta_cpu: Optional[int] = Field(default=None, ge=0)
    breakpoints_b: int = Field(default=1, ge=1)


@dataclass
class ExpectedTime:
    """期望执行时间（总和与逐块）"""
    per_block: List[float] = field(default_factory=list)
    cycles: float = 0.0

    def __post_init__(self):
        self.cycles = float(sum(self.per_block))


def round_count(value: float) -> int:
    """四舍五入（half-up），与平台无关"""
    return int(math.floor(value + 0.5))


def segment_bounds(theta: int, b: int) -> List[int]:
    """b 段切分点，最后一段吸收余数"""
    if b < 1:
        raise SegmentIndexError(f"段数必须 ≥ 1: {b}", index=b, lower=1, upper=max(theta, 1))
    step = theta // b
    return [s * step for s in range(b)] + [theta]


def alpha(params: SystemParams, block: BlockSpec) -> float:
    """α = θ·T_inst + T_tran"""
    return block.theta_nmp * params.t_inst + params.t_tran


def resolve_theta_cpu(params: SystemParams, block: BlockSpec) -> int:
    """CPU在一个NMP epoch内执行的指令数"""
    if block.theta_cpu is not None:
        return block.theta_cpu
    return round_count(alpha(params, block) / params.t_cpu)


def access_set_sizes(params: SystemParams, block: BlockSpec) -> Tuple[float, float]:
    """(|N_i|, |C_i|) = (f_nmp·θ_nmp, f_cpu·θ_cpu)，不取整"""
    return (
        params.f_nmp * block.theta_nmp,
        params.f_cpu * resolve_theta_cpu(params, block)
    )


def conflict_probability(K: int, n_size: float, c_size: float) -> float:
    """
    两侧各做 n_size / c_size 次均匀访问时至少一个地址重叠的概率（逐地址独立近似）

    在对数空间计算 (1-1/K)^n 及外层 K 次幂，避免大 K 下的精度损失。
    """
    if K < 1:
        raise AnalyticsDomainError(f"K 必须 ≥ 1: {K}", K=K)
    if n_size < 0 or c_size < 0:
        raise AnalyticsDomainError("访问集合大小不能为负", n_size=n_size, c_size=c_size)
    if n_size == 0 or c_size == 0:
        return 0.0
    if K == 1:
        return 1.0
    log_miss = math.log1p(-1.0 / K)
    hit_nmp = -math.expm1(n_size * log_miss)
    hit_cpu = -math.expm1(c_size * log_miss)
    both = hit_nmp * hit_cpu
    if both >= 1.0:
        return 1.0
    probability = -math.expm1(K * math.log1p(-both))
    return min(1.0, max(0.0, probability))


def block_conflict_probability(params: SystemParams, block: BlockSpec) -> float:
    """整块冲突概率 P^i"""
    n_size, c_size = access_set_sizes(params, block)
    return conflict_probability(params.K, n_size, c_size)


def conda_time_no_conflict(params: SystemParams, block: BlockSpec) -> float:
    """无冲突时的块执行时间 θ·T_inst + T_tran + T_commit"""
    return alpha(params, block) + params.t_commit


def conda_expected_block_time(params: SystemParams, block: BlockSpec) -> float:
    """CONDA 期望块时间 α(1+P^i) + T_commit"""
    return alpha(params, block) * (1.0 + block_conflict_probability(params, block)) + params.t_commit


def _check_segment(index: int, lower: int, upper: int, name: str):
    if not lower <= index <= upper:
        raise SegmentIndexError(
            f"{name} 越界: {index} 不在 [{lower}, {upper}] 内",
            index=index, lower=lower, upper=upper
        )


def mrcn_segment_conflict_prob(params: SystemParams, block: BlockSpec, j: int) -> float:
    """相邻断点间（第 j 段，1..b）的冲突概率 P^i_j；与 j 无关"""
    b = block.breakpoints_b
    _check_segment(j, 1, b, "段索引 j")
    n_size, c_size = access_set_sizes(params, block)
    return conflict_probability(params.K, n_size / b, c_size)


def beta(params: SystemParams, block: BlockSpec, k: int) -> float:
    """β_k = (b-k)·θ·T_inst/b + T_tran，即从第 k 个回滚点重执行并校验一次的代价"""
    b = block.breakpoints_b
    _check_segment(k, 0, b - 1, "回滚点索引 k")
    return (b - k) * block.theta_nmp * params.t_inst / b + params.t_tran


def mrcn_reexec_conflict_prob(params: SystemParams, block: BlockSpec, j: int, k: int) -> float:
    """
    从回滚点 j 重执行后再次冲突并回滚到 k 的概率 P^i_{j,k}

    CPU侧访问集大小取 |C_k| = β_j·f_cpu / T_cpu。
    """
    b = block.breakpoints_b
    _check_segment(j, 0, b - 1, "回滚点索引 j")
    _check_segment(k, j, b - 1, "回滚点索引 k")
    n_size, _ = access_set_sizes(params, block)
    c_size = beta(params, block, j) * params.f_cpu / params.t_cpu
    return conflict_probability(params.K, n_size / b, c_size)


def mrcn_expected_block_time(params: SystemParams, block: BlockSpec) -> float:
    """MRCN 期望块时间 α + T_commit + Σ_j P^i_j·β_{j-1}（一阶闭式）"""
    total = alpha(params, block) + params.t_commit
    for j in range(1, block.breakpoints_b + 1):
        total += mrcn_segment_conflict_prob(params, block, j) * beta(params, block, j - 1)
    return total


def fine_grained_block_time(params: SystemParams, block: BlockSpec, access_cost: Optional[float] = None) -> float:
    """细粒度一致性：每次共享访问都付一次一致性往返"""
    cost = params.t_tran if access_cost is None else access_cost
    return block.theta_nmp * params.t_inst + round_count(params.f_nmp * block.theta_nmp) * cost


def _rollback_chain_time(
    params: SystemParams,
    block: BlockSpec,
    max_retries: int,
    slot_gap: float
) -> float:
    """
    仿真语义下的期望块时间：冲突后从首个冲突段回滚、每次尝试使用新的CPU窗口、
    直到校验干净或重试次数耗尽。

    V_a(r) 表示在回滚点 r 处、还剩 a 次重执行机会时的剩余期望周期，V_0 = 0。
    各段冲突按独立事件处理，段内访问数取 |N_i|/b。
    """
    b = block.breakpoints_b
    n_size, c_first = access_set_sizes(params, block)
    n_segment = n_size / b
    betas = [beta(params, block, r) for r in range(b)]
    p_first = conflict_probability(params.K, n_segment, c_first)
    p_retry = [
        conflict_probability(params.K, n_segment, betas[r] * params.f_cpu / params.t_cpu)
        for r in range(b)
    ]

    value = [0.0] * b
    for _ in range(max_retries):
        updated = []
        for r in range(b):
            p = p_retry[r]
            expected = slot_gap + betas[r] + (1.0 - p) ** (b - r) * params.t_commit
            survive = 1.0
            for s in range(r, b):
                expected += survive * p * value[s]
                survive *= 1.0 - p
            updated.append(expected)
        delta = max(abs(new - old) for new, old in zip(updated, value))
        value = updated
        if delta <= 1e-12 * max(1.0, max(value)):
            break

    total = alpha(params, block) + (1.0 - p_first) ** b * params.t_commit
    survive = 1.0
    for s in range(b):
        total += survive * p_first * value[s]
        survive *= 1.0 - p_first
    return total


def conda_expected_block_time_retry(
    params: SystemParams,
    block: BlockSpec,
    max_retries: int = 1000,
    slot_gap: float = 0.0
) -> float:
    """CONDA 的重试感知期望块时间（整块重执行直到干净）"""
    return _rollback_chain_time(params, block.model_copy(update={"breakpoints_b": 1}), max_retries, slot_gap)


def mrcn_expected_block_time_retry(
    params: SystemParams,
    block: BlockSpec,
    max_retries: int = 1000,
    slot_gap: float = 0.0
) -> float:
    """MRCN 的重试感知期望块时间（按首个冲突段回滚直到干净）"""
    return _rollback_chain_time(params, block, max_retries, slot_gap)


def expected_block_time(
    params: SystemParams,
    block: BlockSpec,
    strategy: Strategy,
    model: AnalyticModel = AnalyticModel.CLOSED_FORM,
    access_cost: Optional[float] = None,
    max_retries: int = 1000,
    slot_gap: float = 0.0
) -> float:
    """按策略与模型分派单块期望时间"""
    if strategy == Strategy.FINE_GRAINED:
        return fine_grained_block_time(params, block, access_cost)
    if model == AnalyticModel.RETRY_AWARE:
        if strategy == Strategy.CONDA:
            return conda_expected_block_time_retry(params, block, max_retries, slot_gap)
        return mrcn_expected_block_time_retry(params, block, max_retries, slot_gap)
    if strategy == Strategy.CONDA:
        return conda_expected_block_time(params, block)
    return mrcn_expected_block_time(params, block)


def total_expected_time(
    params: SystemParams,
    plan: "OffloadPlan",
    strategy: Strategy,
    model: AnalyticModel = AnalyticModel.CLOSED_FORM,
    access_cost: Optional[float] = None,
    max_retries: int = 1000,
    slot_gap: float = 0.0
) -> ExpectedTime:
    """整个卸载计划的期望总时间 E = Σ_i E[T_i]"""
    blocks: Sequence[BlockSpec] = getattr(plan, "blocks", None) or []
    if not blocks:
        raise PlanError("卸载计划为空")
    return ExpectedTime(per_block=[
        expected_block_time(params, block, strategy, model, access_cost, max_retries, slot_gap)
        for block in blocks
    ])
