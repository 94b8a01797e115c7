"""
CPU侧校验

CPU在两次校验之间记录自己的共享访问；收到NMP签名后逐一比对，
用优先编码器选出最早的冲突段，然后清空记录。
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config.config import ConflictMode
from ..utils.exceptions import ProtocolError
from ..workload.trace_generator import AccessKind, AccessStream
from .signature import Signature


class CpuWriteLog:
    """自上次校验以来CPU访问过的地址及读写类型"""

    def __init__(self):
        self.clear()

    def clear(self):
        """清空记录"""
        self.addresses = np.zeros(0, dtype=np.int64)
        self.writes = np.zeros(0, dtype=bool)

    def record(self, address: int, kind: AccessKind = AccessKind.WRITE) -> "CpuWriteLog":
        self.addresses = np.append(self.addresses, np.int64(address))
        self.writes = np.append(self.writes, kind == AccessKind.WRITE)
        return self

    def record_stream(self, stream: AccessStream) -> "CpuWriteLog":
        """追加一段CPU访问窗口"""
        self.addresses = np.concatenate([self.addresses, stream.addresses])
        self.writes = np.concatenate([self.writes, stream.writes])
        return self

    @property
    def entries(self) -> List[Tuple[int, AccessKind]]:
        return [
            (int(address), AccessKind.WRITE if write else AccessKind.READ)
            for address, write in zip(self.addresses, self.writes)
        ]

    def __len__(self) -> int:
        return len(self.addresses)


@dataclass
class ConflictReport:
    """校验结果"""
    has_conflict: bool
    conflicting_addresses: List[int] = field(default_factory=list)
    first_conflict_segment: Optional[int] = None
    segment_flags: List[bool] = field(default_factory=list)


def priority_encode(segment_flags: Sequence[bool]) -> Optional[int]:
    """最小的置位段号（1 起），全零返回 None"""
    hits = np.flatnonzero(np.asarray(segment_flags, dtype=bool))
    return int(hits[0]) + 1 if len(hits) else None


def validate(
    sig: Signature,
    log: CpuWriteLog,
    mode: ConflictMode = ConflictMode.ADDRESS_OVERLAP
) -> ConflictReport:
    """
    比对签名与CPU访问记录

    ADDRESS_OVERLAP: 任意地址重叠即冲突。
    RW_AWARE: (CPU读, NMP写) 与 (CPU写, NMP读) 不需要重执行，只有同类访问重叠才算冲突。
    """
    addresses = log.addresses
    if ConflictMode(mode) == ConflictMode.RW_AWARE:
        if not sig.kind_aware:
            raise ProtocolError("读写感知校验需要区分读写的签名")
        tags = np.where(
            log.writes,
            sig.lookup(addresses, AccessKind.WRITE),
            sig.lookup(addresses, AccessKind.READ)
        )
    else:
        tags = sig.lookup(addresses)

    hit = tags > 0
    flags = np.zeros(sig.segments, dtype=bool)
    flags[tags[hit] - 1] = True
    conflicting = np.unique(addresses[hit]).tolist()
    log.clear()

    first = priority_encode(flags)
    return ConflictReport(
        has_conflict=first is not None,
        conflicting_addresses=conflicting,
        first_conflict_segment=first,
        segment_flags=flags.tolist()
    )
