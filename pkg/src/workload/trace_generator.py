"""
合成访问轨迹生成器

共享空间访问按 1/K 的均匀概率有放回抽样。每个 (计划种子, 运行种子, 块, 侧)
使用独立的 PCG64 随机流，保证结果可复现且各侧互不相关。
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..analytics.analytical_model import BlockSpec, SystemParams, resolve_theta_cpu, round_count, segment_bounds
from ..utils.exceptions import PlanError


# 随机流键的第一个元素区分用途
EPOCH_DOMAIN = 0
RETRY_DOMAIN = 1

NMP_STREAM = 0
CPU_STREAM = 1


class Side(str, Enum):
    """访问发起方"""
    CPU = "CPU"
    NMP = "NMP"


class AccessKind(str, Enum):
    """读/写"""
    READ = "R"
    WRITE = "W"


class Access(NamedTuple):
    """一次共享空间访问"""
    address: int
    side: Side
    kind: AccessKind
    seq: int


@dataclass
class AccessStream:
    """单侧访问序列（列式存储，seq 严格递增）"""
    side: Side
    addresses: np.ndarray
    writes: np.ndarray
    slots: np.ndarray

    def __post_init__(self):
        self.addresses = np.asarray(self.addresses, dtype=np.int64)
        self.writes = np.asarray(self.writes, dtype=bool)
        self.slots = np.asarray(self.slots, dtype=np.int64)
        if not (len(self.addresses) == len(self.writes) == len(self.slots)):
            raise PlanError("访问序列各列长度不一致", side=self.side.value)
        if len(self.slots) > 1 and not bool(np.all(np.diff(self.slots) > 0)):
            raise PlanError("访问序号必须严格递增", side=self.side.value)

    def __len__(self) -> int:
        return len(self.addresses)

    @classmethod
    def empty(cls, side: Side) -> "AccessStream":
        return cls(side, np.zeros(0, np.int64), np.zeros(0, bool), np.zeros(0, np.int64))

    @classmethod
    def from_accesses(cls, side: Side, accesses: Sequence[Access]) -> "AccessStream":
        """由 Access 列表构造"""
        return cls(
            side,
            np.fromiter((a.address for a in accesses), dtype=np.int64, count=len(accesses)),
            np.fromiter((a.kind == AccessKind.WRITE for a in accesses), dtype=bool, count=len(accesses)),
            np.fromiter((a.seq for a in accesses), dtype=np.int64, count=len(accesses))
        )

    def to_accesses(self) -> List[Access]:
        """展开为 Access 列表"""
        return [
            Access(int(address), self.side, AccessKind.WRITE if write else AccessKind.READ, int(slot))
            for address, write, slot in zip(self.addresses, self.writes, self.slots)
        ]

    def prefix(self, count: int) -> "AccessStream":
        """前 count 个访问"""
        return AccessStream(self.side, self.addresses[:count], self.writes[:count], self.slots[:count])


@dataclass
class EpochTrace:
    """一个卸载块在一个 epoch 内的两侧访问"""
    block_id: int
    block: BlockSpec
    nmp: AccessStream
    cpu: AccessStream
    segment_bounds: List[int] = field(default_factory=list)
    # 所属计划的主种子，决定重执行窗口的随机流
    plan_seed: int = 0

    def __post_init__(self):
        theta = self.block.theta_nmp
        b = self.block.breakpoints_b
        if not self.segment_bounds:
            self.segment_bounds = segment_bounds(theta, b)
        bounds = self.segment_bounds
        if len(bounds) != b + 1 or bounds[0] != 0 or bounds[-1] != theta:
            raise PlanError("段切分点必须为 b+1 个且首尾为 0 与 θ", block_id=self.block_id, bounds=bounds)
        if any(later < earlier for earlier, later in zip(bounds, bounds[1:])):
            raise PlanError("段切分点必须非递减", block_id=self.block_id, bounds=bounds)
        if len(self.nmp) and int(self.nmp.slots[-1]) >= theta:
            raise PlanError("NMP访问序号超出块指令数", block_id=self.block_id)

    @property
    def nmp_accesses(self) -> List[Access]:
        return self.nmp.to_accesses()

    @property
    def cpu_accesses(self) -> List[Access]:
        return self.cpu.to_accesses()

    def nmp_segment_tags(self) -> np.ndarray:
        """每个NMP访问所在的段号（1..b）"""
        return np.searchsorted(np.asarray(self.segment_bounds), self.nmp.slots, side="right").astype(np.int64)


@dataclass(frozen=True)
class OffloadPlan:
    """卸载计划：有序的块列表，所有块共享同一个 K"""
    blocks: Tuple[BlockSpec, ...]
    K: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise PlanError("卸载计划为空")
        if self.K < 1:
            raise PlanError(f"K 必须 ≥ 1: {self.K}", K=self.K)
        if self.seed < 0:
            raise PlanError(f"种子必须非负: {self.seed}", seed=self.seed)

    @classmethod
    def uniform(
        cls,
        theta_nmp: int,
        breakpoints_b: int,
        blocks: int,
        K: int,
        seed: int = 0,
        theta_cpu: Optional[int] = None
    ) -> "OffloadPlan":
        """N 个相同粒度的块"""
        spec = BlockSpec(theta_nmp=theta_nmp, theta_cpu=theta_cpu, breakpoints_b=breakpoints_b)
        return cls(blocks=tuple(spec for _ in range(blocks)), K=K, seed=seed)

    def __len__(self) -> int:
        return len(self.blocks)


def make_stream(*key: int) -> np.random.Generator:
    """由整数键派生独立的 PCG64 随机流"""
    return np.random.default_rng(np.random.SeedSequence([int(part) for part in key]))


def _draw_stream(
    rng: np.random.Generator,
    side: Side,
    count: int,
    K: int,
    write_ratio: float,
    slot_range: Optional[int]
) -> AccessStream:
    # 地址与读写类型成对抽取，较短的窗口恰为较长窗口的前缀
    draws = rng.random((count, 2))
    addresses = np.floor(draws[:, 0] * K).astype(np.int64)
    writes = draws[:, 1] < write_ratio
    if slot_range is None:
        slots = np.arange(count, dtype=np.int64)
    else:
        slots = np.sort(rng.choice(slot_range, size=count, replace=False)).astype(np.int64)
    return AccessStream(side, addresses, writes, slots)


def generate_epoch(plan: OffloadPlan, block_index: int, params: SystemParams, seed: int) -> EpochTrace:
    """
    生成第 block_index 个块的一次 epoch 轨迹

    NMP访问数 round(f_nmp·θ_nmp)，随机落在 θ_nmp 个指令槽中；
    CPU访问数 round(f_cpu·θ_cpu)，随机落在 θ_cpu 个指令槽中。
    """
    if not 0 <= block_index < len(plan.blocks):
        raise PlanError(f"块索引越界: {block_index}", block_index=block_index, blocks=len(plan.blocks))
    if seed < 0:
        raise PlanError(f"种子必须非负: {seed}", seed=seed)

    block = plan.blocks[block_index]
    theta_cpu = resolve_theta_cpu(params, block)
    nmp_count = round_count(params.f_nmp * block.theta_nmp)
    cpu_count = round_count(params.f_cpu * theta_cpu)

    nmp = _draw_stream(
        make_stream(EPOCH_DOMAIN, plan.seed, seed, block_index, NMP_STREAM),
        Side.NMP, nmp_count, plan.K, params.write_ratio, block.theta_nmp
    )
    cpu = _draw_stream(
        make_stream(EPOCH_DOMAIN, plan.seed, seed, block_index, CPU_STREAM),
        Side.CPU, cpu_count, plan.K, params.write_ratio, theta_cpu
    )
    return EpochTrace(
        block_id=block_index,
        block=block.model_copy(update={"theta_cpu": theta_cpu}),
        nmp=nmp,
        cpu=cpu,
        plan_seed=plan.seed
    )


def cpu_window_size(params: SystemParams, duration_cycles: float) -> int:
    """时长 duration_cycles 内CPU的共享访问数 round(f_cpu·duration/T_cpu)"""
    if duration_cycles < 0:
        raise PlanError(f"窗口时长不能为负: {duration_cycles}", duration_cycles=duration_cycles)
    return round_count(params.f_cpu * duration_cycles / params.t_cpu)


def fresh_cpu_stream(
    params: SystemParams,
    duration_cycles: float,
    seed: int,
    block_id: int = 0,
    attempt: int = 1,
    plan_seed: int = 0
) -> AccessStream:
    """重执行期间的CPU访问窗口（列式）"""
    count = cpu_window_size(params, duration_cycles)
    rng = make_stream(RETRY_DOMAIN, plan_seed, seed, block_id, attempt)
    return _draw_stream(rng, Side.CPU, count, params.K, params.write_ratio, None)


def fresh_cpu_window(
    params: SystemParams,
    duration_cycles: float,
    seed: int,
    block_id: int = 0,
    attempt: int = 1,
    plan_seed: int = 0
) -> List[Access]:
    """重执行期间的CPU访问窗口，同一 (plan_seed, seed, block_id, attempt) 下较短窗口是较长窗口的前缀"""
    return fresh_cpu_stream(params, duration_cycles, seed, block_id, attempt, plan_seed).to_accesses()


def access_histogram(streams: Iterable[AccessStream], K: int) -> np.ndarray:
    """各地址被访问次数"""
    counts = np.zeros(K, dtype=np.int64)
    for stream in streams:
        if len(stream):
            counts += np.bincount(stream.addresses, minlength=K)[:K]
    return counts
