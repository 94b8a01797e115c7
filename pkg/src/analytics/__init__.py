"""
解析模型模块
"""
from .analytical_model import (
    SystemParams,
    BlockSpec,
    ExpectedTime,
    round_count,
    segment_bounds,
    alpha,
    resolve_theta_cpu,
    access_set_sizes,
    conflict_probability,
    block_conflict_probability,
    conda_time_no_conflict,
    conda_expected_block_time,
    mrcn_segment_conflict_prob,
    beta,
    mrcn_reexec_conflict_prob,
    mrcn_expected_block_time,
    fine_grained_block_time,
    conda_expected_block_time_retry,
    mrcn_expected_block_time_retry,
    expected_block_time,
    total_expected_time,
)
from .monte_carlo import OracleEstimate, exact_conflict_probability, monte_carlo_conflict_frequency

__all__ = [
    'SystemParams', 'BlockSpec', 'ExpectedTime', 'round_count', 'segment_bounds', 'alpha',
    'resolve_theta_cpu', 'access_set_sizes', 'conflict_probability', 'block_conflict_probability',
    'conda_time_no_conflict', 'conda_expected_block_time', 'mrcn_segment_conflict_prob', 'beta',
    'mrcn_reexec_conflict_prob', 'mrcn_expected_block_time', 'fine_grained_block_time',
    'conda_expected_block_time_retry', 'mrcn_expected_block_time_retry', 'expected_block_time',
    'total_expected_time', 'OracleEstimate', 'exact_conflict_probability',
    'monte_carlo_conflict_frequency',
]
