"""
冲突概率的精确值与蒙特卡洛估计

闭式冲突概率把每个地址的命中当作独立事件；这里给出有放回均匀抽样下的
精确概率（占用数分布）以及向量化的双侧抽样估计，用作校验基准。
"""
import math
from dataclasses import dataclass

import numpy as np

from ..utils.exceptions import AnalyticsDomainError
from .analytical_model import round_count


# 单批次布尔矩阵的元素上限（约 16 MB）
MAX_BATCH_CELLS = 1 << 24


@dataclass
class OracleEstimate:
    """蒙特卡洛估计结果"""
    frequency: float
    stderr: float
    trials: int

    def within(self, reference: float, sigma: float) -> bool:
        """估计值是否落在参考值的 sigma 倍标准误之内"""
        # 频率为 0 或 1 时标准误退化，用单次试验的分辨率兜底
        tolerance = sigma * max(self.stderr, 1.0 / self.trials)
        return abs(self.frequency - reference) <= tolerance


def _check_domain(K: int, n: int, c: int):
    if K < 1:
        raise AnalyticsDomainError(f"K 必须 ≥ 1: {K}", K=K)
    if n < 0 or c < 0:
        raise AnalyticsDomainError("访问次数不能为负", n=n, c=c)


def exact_conflict_probability(K: int, n_size: float, c_size: float) -> float:
    """
    n 次NMP抽样与 c 次CPU抽样（均匀、有放回）至少命中一个公共地址的精确概率

    D_n 为NMP侧不同地址数，P = 1 - Σ_d P(D_n = d)·(1 - d/K)^c。
    非整数访问次数按四舍五入取整。
    """
    n = round_count(n_size)
    c = round_count(c_size)
    _check_domain(K, n, c)
    if n == 0 or c == 0:
        return 0.0

    top = min(n, K)
    occupied = np.arange(top + 1, dtype=np.float64)
    stay = occupied / K
    grow = (K - occupied) / K
    distribution = np.zeros(top + 1, dtype=np.float64)
    distribution[0] = 1.0
    for _ in range(n):
        following = distribution * stay
        following[1:] += distribution[:-1] * grow[:-1]
        distribution = following

    miss = np.power(1.0 - occupied / K, c)
    probability = 1.0 - float(np.dot(distribution, miss))
    return min(1.0, max(0.0, probability))


def monte_carlo_conflict_frequency(
    K: int,
    n_size: float,
    c_size: float,
    trials: int,
    seed: int = 0
) -> OracleEstimate:
    """双侧独立均匀抽样，统计至少一个公共地址的试验占比"""
    n = round_count(n_size)
    c = round_count(c_size)
    _check_domain(K, n, c)
    if trials < 1:
        raise AnalyticsDomainError(f"试验次数必须 ≥ 1: {trials}", trials=trials)
    if n == 0 or c == 0:
        return OracleEstimate(frequency=0.0, stderr=0.0, trials=trials)

    rng = np.random.default_rng(seed)
    batch = max(1, min(trials, MAX_BATCH_CELLS // K))
    hits = 0
    done = 0
    while done < trials:
        rows = min(batch, trials - done)
        row_index = np.arange(rows)[:, None]
        marks = np.zeros((rows, K), dtype=bool)
        marks[row_index, rng.integers(0, K, size=(rows, n))] = True
        cpu = rng.integers(0, K, size=(rows, c))
        hits += int(marks[row_index, cpu].any(axis=1).sum())
        done += rows

    frequency = hits / trials
    stderr = math.sqrt(frequency * (1.0 - frequency) / trials)
    return OracleEstimate(frequency=frequency, stderr=stderr, trials=trials)
