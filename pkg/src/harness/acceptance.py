"""
验收套件 - reproduce 命令端到端执行的全部检查

每项检查返回 (是否通过, 说明)。说明文本只包含确定性的数值，
因此同一组种子重复运行会得到逐字节相同的报告。
"""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from ..analytics.analytical_model import (
    BlockSpec,
    SystemParams,
    conda_expected_block_time,
    conflict_probability,
    mrcn_expected_block_time,
)
from ..analytics.monte_carlo import exact_conflict_probability, monte_carlo_conflict_frequency
from ..config.config import AppConfig, SignatureMode, Strategy, flatten_config
from ..protocol.signature import Signature
from ..protocol.validation import CpuWriteLog, validate
from ..utils.exceptions import ErrorHandler, ReportIOError
from ..utils.logger import get_logger
from ..workload.trace_generator import OffloadPlan, generate_epoch
from .experiment_runner import (
    ExperimentSpec,
    ImprovementReport,
    ValidationReport,
    compare_strategies,
    run_sweep,
    validate_analytics,
)
from .report_writer import emit_report, write_metadata


logger = get_logger()

ORACLE_TRIPLES: List[Tuple[int, int, int]] = [
    (16, 1, 1), (16, 2, 3), (16, 3, 2), (16, 4, 4), (16, 1, 8), (16, 2, 6),
    (256, 5, 5), (256, 10, 10), (256, 16, 8), (256, 20, 20), (256, 8, 32), (256, 30, 12), (256, 40, 40),
    (4096, 20, 20), (4096, 50, 50), (4096, 64, 64), (4096, 100, 30), (4096, 30, 100), (4096, 128, 128),
    (4096, 200, 150),
]

CheckResult = Tuple[bool, str]


class AcceptanceCheck:
    """单项验收检查"""

    def __init__(self, name: str, description: str, func: Callable[[], CheckResult]):
        self.name = name
        self.description = description
        self.func = func
        self.passed = False
        self.detail = ""
        self.error: Optional[str] = None
        self.execution_time: Optional[float] = None

    def run(self) -> bool:
        """运行检查"""
        start_time = time.time()
        try:
            self.passed, self.detail = self.func()
        except ReportIOError:
            raise
        except Exception as e:
            self.passed = False
            self.error = str(e)
            self.detail = f"异常: {e}"
        self.execution_time = time.time() - start_time
        logger.log_check_result(self.name, self.passed, self.detail, self.execution_time)
        return self.passed

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'description': self.description,
            'passed': self.passed,
            'detail': self.detail,
            'error': self.error
        }


class AcceptanceSuite:
    """验收套件"""

    def __init__(self, name: str):
        self.name = name
        self.checks: List[AcceptanceCheck] = []

    def add_check(self, check: AcceptanceCheck):
        """添加检查"""
        self.checks.append(check)

    def run_all(self) -> Dict[str, Any]:
        """按添加顺序运行全部检查"""
        logger.info(f"开始运行验收套件: {self.name}")
        for check in self.checks:
            check.run()
        passed = sum(1 for check in self.checks if check.passed)
        logger.info(f"验收套件完成: {self.name} 通过 {passed}/{len(self.checks)}")
        return {
            'suite_name': self.name,
            'stats': {'total_checks': len(self.checks), 'passed': passed, 'failed': len(self.checks) - passed},
            'results': [check.to_dict() for check in self.checks]
        }

    def get_failed_checks(self) -> List[AcceptanceCheck]:
        """未通过的检查"""
        return [check for check in self.checks if not check.passed]

    @property
    def passed(self) -> bool:
        return bool(self.checks) and not self.get_failed_checks()


def check_identity(points: int, seed: int) -> CheckResult:
    """b=1 时 MRCN 闭式与 CONDA 闭式相对误差 ≤ 1e-12"""
    rng = np.random.default_rng([seed, 101])
    worst = 0.0
    for _ in range(points):
        params = SystemParams(
            K=int(rng.integers(1, 1 << 22)),
            f_cpu=float(rng.random()),
            f_nmp=float(rng.random()),
            t_inst=float(rng.uniform(0.1, 4.0)),
            t_tran=float(rng.uniform(1.0, 100.0)),
            t_commit=float(rng.uniform(0.0, 20.0)),
            t_cpu=float(rng.uniform(0.1, 2.0))
        )
        block = BlockSpec(theta_nmp=int(rng.integers(1, 2001)), breakpoints_b=1)
        conda = conda_expected_block_time(params, block)
        mrcn = mrcn_expected_block_time(params, block)
        worst = max(worst, abs(mrcn - conda) / conda)
    return worst <= 1e-12, f"{points} 个随机参数点, 最大相对误差 {worst:.3e}"


def check_oracle(trials: int, sigma: float, seed: int) -> CheckResult:
    """蒙特卡洛频率与精确冲突概率在 sigma 倍标准误内一致；同时报告闭式近似的偏差"""
    failures = []
    worst_gap = 0.0
    for index, (K, n, c) in enumerate(ORACLE_TRIPLES):
        estimate = monte_carlo_conflict_frequency(K, n, c, trials, seed=seed + index)
        exact = exact_conflict_probability(K, n, c)
        worst_gap = max(worst_gap, abs(conflict_probability(K, n, c) - exact))
        if not estimate.within(exact, sigma):
            failures.append(f"(K={K},n={n},c={c}) 频率 {estimate.frequency:.5f} 精确 {exact:.5f}")
    detail = f"{len(ORACLE_TRIPLES) - len(failures)}/{len(ORACLE_TRIPLES)} 组一致, 闭式近似最大偏差 {worst_gap:.4f}"
    if failures:
        detail += "; 不一致: " + "; ".join(failures)
    return not failures, detail


def check_accuracy(report: ValidationReport) -> CheckResult:
    """各策略各粒度的平均/最大误差不超过阈值"""
    parts = [
        f"{s.strategy} θ={s.granularity}: 平均 {s.mean_error_pct:.2f}% 最大 {s.max_error_pct:.2f}%"
        for s in report.summaries
    ]
    detail = f"阈值 平均≤{report.error_threshold_pct}% 最大≤{report.max_error_threshold_pct}%; " + "; ".join(parts)
    return report.passed, detail


def check_improvement(
    report: ImprovementReport,
    max_pct: float,
    min_pct: float,
    b1_tolerance_pct: float
) -> CheckResult:
    """b>1 时改进落在 [0, max_pct]，f_nmp ≥ 0.5 时大于 min_pct；b=1 时接近 0"""
    failures = []
    for cell in report.cells:
        label = f"θ={cell.granularity} f={cell.f_nmp} b={cell.b}: {cell.improvement_pct:.3f}%"
        if cell.b == 1:
            if abs(cell.improvement_pct) >= b1_tolerance_pct:
                failures.append(label)
        elif not 0.0 <= cell.improvement_pct <= max_pct:
            failures.append(label)
        elif cell.f_nmp >= 0.5 and cell.improvement_pct <= min_pct:
            failures.append(label)
    detail = f"改进范围 [{report.min_pct:.3f}%, {report.max_pct:.3f}%], 平均 {report.mean_pct:.3f}%"
    if failures:
        detail += "; 越界: " + "; ".join(failures)
    return not failures, detail


def check_dominance(report: ImprovementReport) -> CheckResult:
    """逐种子 MRCN 总周期 ≤ CONDA 总周期"""
    violations = report.total_violations
    cell = report.cells[0]
    return violations == 0, (
        f"θ={cell.granularity} b={cell.b} f={cell.f_nmp}: 违反 {violations} 次, 改进 {cell.improvement_pct:.3f}%"
    )


def check_speedup_ordering(rows, large_granularity: int, small_granularity: int, min_speedup: float) -> CheckResult:
    """大粒度下 细粒度 < CONDA < MRCN；小粒度下 CONDA 相对细粒度加速比 ≥ min_speedup"""
    speedups = {(row.strategy, row.granularity): row.speedup_vs_fine_grained for row in rows}
    fine = speedups[(Strategy.FINE_GRAINED.value, large_granularity)]
    conda = speedups[(Strategy.CONDA.value, large_granularity)]
    mrcn = speedups[(Strategy.MRCN.value, large_granularity)]
    small = speedups[(Strategy.CONDA.value, small_granularity)]
    ordered = fine < conda < mrcn
    detail = (
        f"θ={large_granularity}: 细粒度 {fine:.3f} / CONDA {conda:.3f} / MRCN {mrcn:.3f}; "
        f"θ={small_granularity}: CONDA {small:.3f} (要求 ≥ {min_speedup})"
    )
    return ordered and small >= min_speedup, detail


def check_bloom_safety(
    config: AppConfig,
    epochs: int,
    granularity: int,
    f_nmp: float,
    breakpoints_b: int,
    seed: int
) -> CheckResult:
    """布隆签名的冲突集合包含精确集合的冲突集合，且实测假阳性率在估计值的 2 倍以内"""
    params = SystemParams.from_config(config, f_nmp)
    plan = OffloadPlan.uniform(granularity, breakpoints_b, 1, params.K, seed=seed)
    missed = 0
    later_rollback = 0
    negatives = 0
    false_positives = 0
    estimated = 0.0
    for epoch in range(epochs):
        trace = generate_epoch(plan, 0, params, epoch)
        tags = trace.nmp_segment_tags()
        signatures = {}
        for mode in (SignatureMode.EXACT_SET, SignatureMode.BLOOM):
            signatures[mode] = Signature(
                mode=mode,
                segments=breakpoints_b,
                capacity=len(trace.nmp),
                bits_per_elem=config.sig.bits_per_elem,
                hashes=config.sig.hashes
            ).insert_many(trace.nmp.addresses, tags)
        exact = validate(signatures[SignatureMode.EXACT_SET], CpuWriteLog().record_stream(trace.cpu))
        bloom = validate(signatures[SignatureMode.BLOOM], CpuWriteLog().record_stream(trace.cpu))
        if not set(exact.conflicting_addresses) <= set(bloom.conflicting_addresses):
            missed += 1
        if exact.has_conflict and (not bloom.has_conflict or bloom.first_conflict_segment > exact.first_conflict_segment):
            later_rollback += 1

        queries = np.unique(trace.cpu.addresses)
        member = signatures[SignatureMode.EXACT_SET].lookup(queries) > 0
        negative_queries = queries[~member]
        negatives += len(negative_queries)
        false_positives += int(np.count_nonzero(signatures[SignatureMode.BLOOM].lookup(negative_queries)))
        estimated += signatures[SignatureMode.BLOOM].estimated_fpr() * len(negative_queries)

    measured = false_positives / negatives if negatives else 0.0
    expected = estimated / negatives if negatives else 0.0
    ratio = measured / expected if expected > 0 else float("inf")
    passed = missed == 0 and later_rollback == 0 and 0.5 <= ratio <= 2.0
    detail = (
        f"{epochs} 个 epoch: 漏报 {missed}, 回滚点晚于精确值 {later_rollback}; "
        f"实测假阳性率 {measured:.5f} 估计 {expected:.5f} (比值 {ratio:.3f})"
    )
    return passed, detail


def _render_markdown(suite: AcceptanceSuite, outputs: Dict[str, str]) -> str:
    lines = [f"# {suite.name}", "", "| 检查 | 结果 | 说明 |", "| --- | --- | --- |"]
    for check in suite.checks:
        status = "通过" if check.passed else "未通过"
        lines.append(f"| {check.name} | {status} | {check.detail.replace('|', '/')} |")
    lines.extend(["", "## 输出文件", ""])
    for name, path in outputs.items():
        lines.append(f"- {name}: `{path}`")
    return "\n".join(lines) + "\n"


@dataclass
class ReproduceResult:
    """reproduce 的结果"""
    suite: AcceptanceSuite
    outputs: Dict[str, str]
    report_path: str

    @property
    def passed(self) -> bool:
        return self.suite.passed


def build_reproduce_suite(
    config: AppConfig,
    out_dir: Path,
    seeds: Optional[List[int]] = None,
    progress: bool = False
) -> Tuple[AcceptanceSuite, Dict[str, str]]:
    """组装验收套件；各检查共享的扫描结果在检查执行时才计算"""
    acceptance = config.acceptance
    base = ExperimentSpec.from_config(config, seeds)
    fmt = config.experiment.format
    outputs: Dict[str, str] = {}
    state: Dict[str, Any] = {}

    def emit(name: str, rows, spec: ExperimentSpec):
        path = out_dir / f"{name}.{fmt.value}"
        emit_report(rows, fmt, path)
        write_metadata(path, {**spec.provenance(), "config": flatten_config(config)})
        outputs[name] = str(path)

    def accuracy() -> CheckResult:
        spec = base.model_copy(update={"strategies": [Strategy.CONDA, Strategy.MRCN]})
        report = validate_analytics(spec, progress=progress)
        state["accuracy"] = report
        emit("accuracy", report.rows, spec)
        return check_accuracy(report)

    def improvement() -> CheckResult:
        validation: Optional[ValidationReport] = state.get("accuracy")
        if validation is None or not validation.passed:
            return False, "解析模型校验未通过，改进结果不具参考意义"
        spec = base.model_copy(update={
            "strategies": [Strategy.CONDA, Strategy.MRCN],
            "breakpoints": acceptance.improvement_breakpoints
        })
        report = compare_strategies(spec, progress=progress)
        emit("improvement", report.cells, spec)
        return check_improvement(
            report, acceptance.max_improvement_pct, acceptance.min_improvement_pct, acceptance.b1_tolerance_pct
        )

    def dominance() -> CheckResult:
        spec = base.model_copy(update={
            "strategies": [Strategy.CONDA, Strategy.MRCN],
            "granularity": [acceptance.dominance_granularity],
            "f_nmp": [acceptance.dominance_f_nmp],
            "breakpoints": [acceptance.dominance_breakpoints],
            "seeds": list(range(acceptance.dominance_seeds)),
            "trials": acceptance.dominance_seeds
        })
        return check_dominance(compare_strategies(spec, progress=progress))

    def speedup() -> CheckResult:
        small, large = min(base.granularity), max(base.granularity)
        spec = base.model_copy(update={
            "strategies": [Strategy.FINE_GRAINED, Strategy.CONDA, Strategy.MRCN],
            "granularity": sorted({small, large}),
            "f_nmp": [acceptance.dominance_f_nmp],
            "breakpoints": [acceptance.dominance_breakpoints]
        })
        result = run_sweep(spec, progress=progress, command="speedup")
        emit("speedup", result.rows, spec)
        return check_speedup_ordering(result.rows, large, small, acceptance.min_conda_speedup)

    def granularity_sweep() -> CheckResult:
        spec = base.model_copy(update={
            "strategies": [Strategy.CONDA, Strategy.MRCN],
            "granularity": acceptance.granularity_sweep,
            "f_nmp": acceptance.granularity_sweep_f_nmp,
            "breakpoints": [acceptance.dominance_breakpoints]
        })
        report = compare_strategies(spec, progress=progress)
        emit("granularity_sweep", report.cells, spec)
        worse = [cell for cell in report.cells if cell.mrcn_mean_cycles > cell.conda_mean_cycles]
        return not worse, f"{len(report.cells)} 个网格点, MRCN 均值高于 CONDA 的点 {len(worse)} 个"

    def determinism() -> CheckResult:
        spec = base.model_copy(update={
            "strategies": [Strategy.CONDA, Strategy.MRCN],
            "granularity": [min(base.granularity)],
            "f_nmp": [max(base.f_nmp)],
            "seeds": base.run_seeds[:200],
            "trials": min(200, len(base.run_seeds))
        })
        first = emit_report(run_sweep(spec, command="determinism").rows, fmt)
        second = emit_report(run_sweep(spec, command="determinism").rows, fmt)
        return first == second, f"两次运行输出 {'一致' if first == second else '不一致'} ({len(first.encode('utf-8'))} 字节)"

    suite = AcceptanceSuite("NMP 一致性策略验收")
    suite.add_check(AcceptanceCheck(
        "identity", "b=1 时 MRCN 与 CONDA 闭式一致",
        lambda: check_identity(acceptance.identity_points, base.seed)
    ))
    suite.add_check(AcceptanceCheck(
        "oracle", "冲突概率蒙特卡洛基准",
        lambda: check_oracle(acceptance.oracle_trials, acceptance.oracle_sigma, base.seed)
    ))
    suite.add_check(AcceptanceCheck("accuracy", "解析与仿真误差", accuracy))
    suite.add_check(AcceptanceCheck("improvement", "MRCN 相对 CONDA 的改进", improvement))
    suite.add_check(AcceptanceCheck("dominance", "逐种子 MRCN ≤ CONDA", dominance))
    suite.add_check(AcceptanceCheck("speedup", "相对细粒度一致性的加速比排序", speedup))
    suite.add_check(AcceptanceCheck(
        "bloom", "布隆签名无漏报且假阳性率符合估计",
        lambda: check_bloom_safety(
            config, acceptance.bloom_epochs, acceptance.bloom_granularity,
            acceptance.bloom_f_nmp, acceptance.dominance_breakpoints, base.seed
        )
    ))
    suite.add_check(AcceptanceCheck("granularity_sweep", "粒度扫描下 MRCN 不劣于 CONDA", granularity_sweep))
    suite.add_check(AcceptanceCheck("determinism", "相同种子输出逐字节一致", determinism))
    return suite, outputs


def run_reproduce(
    config: AppConfig,
    out_dir: str,
    seeds: Optional[List[int]] = None,
    progress: bool = False
) -> ReproduceResult:
    """执行验收套件，写出各表格与 Markdown 报告"""
    directory = Path(out_dir)
    suite, outputs = build_reproduce_suite(config, directory, seeds, progress)
    suite.run_all()

    report_path = directory / "acceptance_report.md"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with report_path.open("w", encoding="utf-8", newline="\n") as f:
            f.write(_render_markdown(suite, outputs))
    except OSError as e:
        raise ErrorHandler.handle_io_error(e, str(report_path), "验收报告写出失败")
    logger.log_report_written(str(report_path), len(suite.checks), "markdown")
    return ReproduceResult(suite=suite, outputs=outputs, report_path=str(report_path))
