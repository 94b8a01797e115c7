"""
测试公共夹具
"""
import os

# 测试期间不写日志文件
os.environ.setdefault("NMP_SIM_LOG_DIR", "")

import numpy as np
import pytest

from src.analytics.analytical_model import BlockSpec, SystemParams
from src.workload.trace_generator import AccessStream, EpochTrace, Side


@pytest.fixture
def default_params() -> SystemParams:
    """默认时序、K=2^20、双侧共享比例 0.5"""
    return SystemParams(K=1 << 20, f_cpu=0.5, f_nmp=0.5)


@pytest.fixture
def quiet_params() -> SystemParams:
    """f_cpu=0：重执行期间CPU不产生共享访问"""
    return SystemParams(K=100, f_cpu=0.0, f_nmp=0.5)


def make_trace(
    theta: int,
    b: int,
    nmp: list,
    cpu: list,
    block_id: int = 0,
    theta_cpu: int = 200
) -> EpochTrace:
    """
    手工构造轨迹

    nmp: [(address, slot, is_write), ...]
    cpu: [(address, slot, is_write), ...]
    """
    def stream(side, items):
        if not items:
            return AccessStream.empty(side)
        addresses, slots, writes = zip(*items)
        return AccessStream(side, np.array(addresses), np.array(writes), np.array(slots))

    return EpochTrace(
        block_id=block_id,
        block=BlockSpec(theta_nmp=theta, theta_cpu=theta_cpu, breakpoints_b=b),
        nmp=stream(Side.NMP, nmp),
        cpu=stream(Side.CPU, cpu)
    )


@pytest.fixture
def trace_factory():
    return make_trace
