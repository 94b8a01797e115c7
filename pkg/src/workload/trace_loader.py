"""
轨迹文件读写

格式（按行）:
    K=<int> N=<int>
    BLOCK <i> THETA_NMP=<int> THETA_CPU=<int> B=<int>
    <SIDE>,<R|W>,<address>[,<slot>]
空行忽略，'#' 之后为注释。省略 slot 时取同侧上一访问的 slot + 1。
"""
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..analytics.analytical_model import BlockSpec
from ..utils.exceptions import ErrorHandler, PlanError, TraceDomainError, TraceParseError, TraceStructureError
from ..utils.logger import get_logger
from .trace_generator import Access, AccessKind, AccessStream, EpochTrace, OffloadPlan, Side


HEADER_PATTERN = re.compile(r"^K=(\d+)\s+N=(\d+)$")
BLOCK_PATTERN = re.compile(r"^BLOCK\s+(\d+)\s+THETA_NMP=(\d+)\s+THETA_CPU=(\d+)\s+B=(\d+)$")


class _BlockBuilder:
    """收集一个块的访问行"""

    def __init__(self, block_id: int, spec: BlockSpec, line_no: int):
        self.block_id = block_id
        self.spec = spec
        self.line_no = line_no
        self.accesses: Dict[Side, List[Access]] = {Side.NMP: [], Side.CPU: []}

    def slot_limit(self, side: Side) -> int:
        return self.spec.theta_nmp if side == Side.NMP else self.spec.theta_cpu

    def next_slot(self, side: Side) -> int:
        existing = self.accesses[side]
        return existing[-1].seq + 1 if existing else 0

    def build(self) -> EpochTrace:
        return EpochTrace(
            block_id=self.block_id,
            block=self.spec,
            nmp=AccessStream.from_accesses(Side.NMP, self.accesses[Side.NMP]),
            cpu=AccessStream.from_accesses(Side.CPU, self.accesses[Side.CPU])
        )


def _parse_int(token: str, what: str, path: str, line_no: int, line: str) -> int:
    """整数字段；允许 1e9 这类整值浮点写法"""
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        value = float(token)
    except ValueError:
        raise TraceParseError(f"{what} 不是整数: {token!r}", path, line_no, line)
    if not value.is_integer():
        raise TraceParseError(f"{what} 不是整数: {token!r}", path, line_no, line)
    return int(value)


def _parse_access(
    fields: List[str],
    current: _BlockBuilder,
    K: int,
    path: str,
    line_no: int,
    line: str
) -> Access:
    if len(fields) not in (3, 4):
        raise TraceParseError("访问行应为 <SIDE>,<R|W>,<address>[,<slot>]", path, line_no, line)
    side_token, kind_token = fields[0].strip().upper(), fields[1].strip().upper()
    try:
        side = Side(side_token)
    except ValueError:
        raise TraceParseError(f"未知访问方: {side_token!r}", path, line_no, line)
    try:
        kind = AccessKind(kind_token)
    except ValueError:
        raise TraceParseError(f"未知访问类型: {kind_token!r}", path, line_no, line)

    address = _parse_int(fields[2], "地址", path, line_no, line)
    if not 0 <= address < K:
        raise TraceDomainError(f"地址 {address} 不在 [0, {K}) 内", path, line_no, line)

    expected = current.next_slot(side)
    slot = _parse_int(fields[3], "slot", path, line_no, line) if len(fields) == 4 else expected
    if slot < 0 or slot >= current.slot_limit(side):
        raise TraceDomainError(
            f"slot {slot} 不在 [0, {current.slot_limit(side)}) 内", path, line_no, line
        )
    if slot < expected:
        raise TraceStructureError(f"{side.value} 访问顺序错乱: slot {slot} < {expected}", path, line_no, line)
    return Access(address, side, kind, slot)


def parse_trace_text(text: str, path: str = "<trace>") -> Tuple[OffloadPlan, List[EpochTrace]]:
    """解析轨迹文本"""
    K: Optional[int] = None
    declared_blocks = 0
    builders: List[_BlockBuilder] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        if K is None:
            match = HEADER_PATTERN.match(line)
            if not match:
                raise TraceParseError("首行必须是 K=<int> N=<int>", path, line_no, raw)
            K, declared_blocks = int(match.group(1)), int(match.group(2))
            if K < 1:
                raise TraceDomainError("K 必须 ≥ 1", path, line_no, raw)
            continue

        if line.upper().startswith("BLOCK"):
            match = BLOCK_PATTERN.match(line)
            if not match:
                raise TraceParseError("块头应为 BLOCK <i> THETA_NMP=<int> THETA_CPU=<int> B=<int>", path, line_no, raw)
            block_id, theta_nmp, theta_cpu, b = (int(group) for group in match.groups())
            if block_id != len(builders):
                raise TraceStructureError(f"块编号应为 {len(builders)}，实际为 {block_id}", path, line_no, raw)
            if theta_nmp < 1 or b < 1:
                raise TraceDomainError("THETA_NMP 与 B 必须 ≥ 1", path, line_no, raw)
            spec = BlockSpec(theta_nmp=theta_nmp, theta_cpu=theta_cpu, breakpoints_b=b)
            builders.append(_BlockBuilder(block_id, spec, line_no))
            continue

        if not builders:
            raise TraceStructureError("访问行出现在任何 BLOCK 之前", path, line_no, raw)
        current = builders[-1]
        access = _parse_access(line.split(","), current, K, path, line_no, raw)
        current.accesses[access.side].append(access)

    if not builders:
        raise TraceStructureError("no blocks: 轨迹文件中没有任何块", path)
    if declared_blocks != len(builders):
        raise TraceStructureError(f"头部声明 N={declared_blocks}，实际 {len(builders)} 个块", path)

    traces: List[EpochTrace] = []
    for builder in builders:
        try:
            traces.append(builder.build())
        except PlanError as e:
            raise TraceStructureError(e.message, path, builder.line_no)
    plan = OffloadPlan(blocks=tuple(builder.spec for builder in builders), K=K)
    return plan, traces


def load_trace_file(path: Union[str, Path]) -> Tuple[OffloadPlan, List[EpochTrace]]:
    """读取轨迹文件，返回卸载计划与逐块轨迹"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ErrorHandler.handle_io_error(e, str(path), "轨迹文件读取失败")
    plan, traces = parse_trace_text(text, str(path))
    get_logger().info(
        f"已载入轨迹: {path} ({len(traces)} 个块, K={plan.K})",
        path=str(path), blocks=len(traces), K=plan.K
    )
    return plan, traces


def format_trace(plan: OffloadPlan, traces: List[EpochTrace]) -> str:
    """序列化为轨迹文本（显式写出 slot）"""
    lines = [f"K={plan.K} N={len(traces)}"]
    for trace in traces:
        block = trace.block
        theta_cpu = block.theta_cpu if block.theta_cpu is not None else 0
        lines.append(
            f"BLOCK {trace.block_id} THETA_NMP={block.theta_nmp} THETA_CPU={theta_cpu} B={block.breakpoints_b}"
        )
        for access in trace.nmp_accesses + trace.cpu_accesses:
            lines.append(f"{access.side.value},{access.kind.value},{access.address},{access.seq}")
    return "\n".join(lines) + "\n"


def write_trace_file(path: Union[str, Path], plan: OffloadPlan, traces: List[EpochTrace]):
    """写出轨迹文件"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            f.write(format_trace(plan, traces))
    except OSError as e:
        raise ErrorHandler.handle_io_error(e, str(path), "轨迹文件写出失败")
