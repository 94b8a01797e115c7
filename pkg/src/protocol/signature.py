"""
NMP地址签名

EXACT_SET 精确记录地址及其最小段号；BLOOM 用位数组 + k 个不同种子的 murmur3 哈希，
段号存放在以第一个哈希位置为下标的并行数组中，碰撞时取较小段号。
"""
import math
from functools import lru_cache
from typing import Dict, List, Optional, Tuple, Union

import mmh3
import numpy as np

from ..config.config import SignatureMode
from ..utils.exceptions import ProtocolError, SegmentIndexError
from ..workload.trace_generator import AccessKind


HASH_SEED = 0x5EED
# 段号数组中的“未设置”标记
UNSET_TAG = np.iinfo(np.int32).max


def next_prime(value: int) -> int:
    """不小于 value 的最小素数"""
    candidate = max(2, int(value))
    while True:
        if candidate < 4 or all(candidate % d for d in range(2, math.isqrt(candidate) + 1)):
            return candidate
        candidate += 1


@lru_cache(maxsize=1 << 16)
def _address_hashes(address: int, hash_count: int) -> Tuple[int, ...]:
    key = int(address).to_bytes(8, "little", signed=True)
    return tuple(mmh3.hash(key, HASH_SEED + i, signed=False) for i in range(hash_count))


def bloom_positions(addresses: np.ndarray, m: int, hash_count: int) -> np.ndarray:
    """每个地址的 k 个位下标，形状 (n, k)，各哈希相互独立"""
    addresses = np.asarray(addresses, dtype=np.int64)
    if len(addresses) == 0:
        return np.zeros((0, hash_count), dtype=np.int64)
    hashes = np.array([_address_hashes(a, hash_count) for a in addresses.tolist()], dtype=np.int64)
    return hashes % m


def estimated_false_positive_rate(elements: int, m: int, hash_count: int) -> float:
    """(1 - e^{-kn/m})^k"""
    if elements <= 0:
        return 0.0
    return (-math.expm1(-hash_count * elements / m)) ** hash_count


class ExactPlane:
    """精确地址集合，地址 -> 最小段号"""

    def __init__(self):
        self._addresses: List[np.ndarray] = []
        self._tags: List[np.ndarray] = []
        self._keys: Optional[np.ndarray] = None
        self._key_tags: Optional[np.ndarray] = None

    def insert(self, addresses: np.ndarray, tags: np.ndarray):
        self._addresses.append(np.asarray(addresses, dtype=np.int64))
        self._tags.append(np.asarray(tags, dtype=np.int64))
        self._keys = None

    def _compact(self):
        if self._keys is not None:
            return
        if self._addresses:
            addresses = np.concatenate(self._addresses)
            tags = np.concatenate(self._tags)
        else:
            addresses = np.zeros(0, dtype=np.int64)
            tags = np.zeros(0, dtype=np.int64)
        order = np.lexsort((tags, addresses))
        addresses, tags = addresses[order], tags[order]
        first = np.ones(len(addresses), dtype=bool)
        first[1:] = addresses[1:] != addresses[:-1]
        self._keys, self._key_tags = addresses[first], tags[first]
        self._addresses, self._tags = [self._keys], [self._key_tags]

    def lookup(self, addresses: np.ndarray) -> np.ndarray:
        self._compact()
        addresses = np.asarray(addresses, dtype=np.int64)
        if len(self._keys) == 0:
            return np.zeros(len(addresses), dtype=np.int64)
        index = np.minimum(np.searchsorted(self._keys, addresses), len(self._keys) - 1)
        hit = self._keys[index] == addresses
        return np.where(hit, self._key_tags[index], 0)

    @property
    def members(self) -> Dict[int, int]:
        self._compact()
        return dict(zip(self._keys.tolist(), self._key_tags.tolist()))


class BloomPlane:
    """布隆过滤器 + 段号数组"""

    def __init__(self, m: int, hash_count: int, floor_tag: int = 1):
        self.m = m
        self.hash_count = hash_count
        self.floor_tag = floor_tag
        self.bits = np.zeros(m, dtype=bool)
        self.tags = np.full(m, UNSET_TAG, dtype=np.int32)

    def insert(self, addresses: np.ndarray, tags: np.ndarray):
        positions = bloom_positions(addresses, self.m, self.hash_count)
        if len(positions) == 0:
            return
        self.bits[positions.ravel()] = True
        np.minimum.at(self.tags, positions[:, 0], np.asarray(tags, dtype=np.int32))

    def lookup(self, addresses: np.ndarray) -> np.ndarray:
        positions = bloom_positions(addresses, self.m, self.hash_count)
        if len(positions) == 0:
            return np.zeros(0, dtype=np.int64)
        member = self.bits[positions].all(axis=1)
        tags = self.tags[positions[:, 0]].astype(np.int64)
        # 假阳性命中的段号槽可能未设置，按本次执行的起始段回滚
        tags = np.where(tags == UNSET_TAG, self.floor_tag, tags)
        return np.where(member, tags, 0)


Plane = Union[ExactPlane, BloomPlane]


class Signature:
    """
    一个 epoch 内NMP访问地址的签名

    kind_aware=True 时读、写分别记录在两个平面中，供读写感知校验使用。
    start_segment 为本次执行的起始段，插入的段号不得小于它，查询结果也不会小于它。
    """

    def __init__(
        self,
        mode: SignatureMode = SignatureMode.EXACT_SET,
        segments: int = 1,
        capacity: int = 0,
        bits_per_elem: float = 9.6,
        hashes: int = 7,
        kind_aware: bool = False,
        K: Optional[int] = None,
        start_segment: int = 1
    ):
        if segments < 1:
            raise ProtocolError(f"段数必须 ≥ 1: {segments}", segments=segments)
        if not 1 <= start_segment <= segments:
            raise SegmentIndexError(f"起始段越界: {start_segment}", index=start_segment, lower=1, upper=segments)
        self.start_segment = start_segment
        self.mode = SignatureMode(mode)
        self.segments = segments
        self.kind_aware = kind_aware
        self.K = K
        self.hash_count = hashes if self.mode == SignatureMode.BLOOM else 0
        self.m = 0
        if self.mode == SignatureMode.BLOOM:
            if hashes < 1 or bits_per_elem <= 0:
                raise ProtocolError("布隆签名需要 hashes ≥ 1 且 bits_per_elem > 0", hashes=hashes)
            self.m = next_prime(max(math.ceil(bits_per_elem * max(capacity, 1)), hashes, 2))
        plane_kinds = (AccessKind.READ, AccessKind.WRITE) if kind_aware else (None,)
        self._planes: Dict[Optional[AccessKind], Plane] = {kind: self._new_plane() for kind in plane_kinds}
        self._inserted: List[np.ndarray] = []

    def _new_plane(self) -> Plane:
        if self.mode == SignatureMode.BLOOM:
            return BloomPlane(self.m, self.hash_count, self.start_segment)
        return ExactPlane()

    def _check(self, addresses: np.ndarray, tags: np.ndarray):
        if len(tags) and (int(tags.min()) < self.start_segment or int(tags.max()) > self.segments):
            bad = int(tags.min()) if int(tags.min()) < self.start_segment else int(tags.max())
            raise SegmentIndexError(
                f"段号越界: {bad}", index=bad, lower=self.start_segment, upper=self.segments
            )
        if len(addresses) and int(addresses.min()) < 0:
            raise ProtocolError("地址不能为负", address=int(addresses.min()))
        if self.K is not None and len(addresses) and int(addresses.max()) >= self.K:
            raise ProtocolError(f"地址超出共享空间: {int(addresses.max())}", K=self.K)

    def insert_many(
        self,
        addresses: np.ndarray,
        segment_tags: np.ndarray,
        writes: Optional[np.ndarray] = None
    ) -> "Signature":
        """批量插入"""
        addresses = np.asarray(addresses, dtype=np.int64)
        segment_tags = np.asarray(segment_tags, dtype=np.int64)
        if addresses.shape != segment_tags.shape:
            raise ProtocolError("地址与段号长度不一致")
        self._check(addresses, segment_tags)
        if self.kind_aware:
            writes = np.zeros(len(addresses), dtype=bool) if writes is None else np.asarray(writes, dtype=bool)
            self._planes[AccessKind.READ].insert(addresses[~writes], segment_tags[~writes])
            self._planes[AccessKind.WRITE].insert(addresses[writes], segment_tags[writes])
        else:
            self._planes[None].insert(addresses, segment_tags)
        self._inserted.append(addresses)
        return self

    def insert(self, address: int, segment_index: int, kind: AccessKind = AccessKind.READ) -> "Signature":
        """插入单个地址"""
        return self.insert_many(
            np.array([address], dtype=np.int64),
            np.array([segment_index], dtype=np.int64),
            np.array([kind == AccessKind.WRITE])
        )

    def lookup(self, addresses: np.ndarray, kind: Optional[AccessKind] = None) -> np.ndarray:
        """查询段号，0 表示不在签名中；kind 为空时合并所有平面取最小段号"""
        addresses = np.asarray(addresses, dtype=np.int64)
        if kind is not None and self.kind_aware:
            return self._planes[kind].lookup(addresses)
        if kind is not None:
            raise ProtocolError("该签名不区分读写")
        result: Optional[np.ndarray] = None
        for plane in self._planes.values():
            tags = plane.lookup(addresses)
            if result is None:
                result = tags
            else:
                result = np.where(result == 0, tags, np.where(tags == 0, result, np.minimum(result, tags)))
        return result

    def contains(self, address: int, kind: Optional[AccessKind] = None) -> bool:
        """成员查询"""
        return bool(self.lookup(np.array([address], dtype=np.int64), kind)[0] > 0)

    def segment_tag(self, address: int) -> Optional[int]:
        """地址对应的段号（不在签名中返回 None）"""
        tag = int(self.lookup(np.array([address], dtype=np.int64))[0])
        return tag or None

    @property
    def members(self) -> Dict[int, int]:
        """EXACT_SET 模式下的地址 -> 段号"""
        if self.mode != SignatureMode.EXACT_SET:
            raise ProtocolError("布隆签名不保存成员列表")
        merged: Dict[int, int] = {}
        for plane in self._planes.values():
            for address, tag in plane.members.items():
                merged[address] = min(tag, merged.get(address, tag))
        return merged

    @property
    def bits(self) -> np.ndarray:
        """BLOOM 模式下各平面位数组的拼接"""
        if self.mode != SignatureMode.BLOOM:
            return np.zeros(0, dtype=bool)
        return np.concatenate([plane.bits for plane in self._planes.values()])

    @property
    def element_count(self) -> int:
        """已插入的不同地址数"""
        if not self._inserted:
            return 0
        return int(len(np.unique(np.concatenate(self._inserted))))

    def estimated_fpr(self) -> float:
        """按已插入元素数估算的假阳性率"""
        if self.mode != SignatureMode.BLOOM:
            return 0.0
        return estimated_false_positive_rate(self.element_count, self.m, self.hash_count)


def signature_insert(
    sig: Signature,
    address: int,
    segment_index: int,
    kind: AccessKind = AccessKind.READ
) -> Signature:
    """向签名插入一个地址及其段号"""
    return sig.insert(address, segment_index, kind)
