"""
实验扫描 - 网格笛卡尔积上的仿真与解析对比
"""
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from ..analytics.analytical_model import (
    BlockSpec,
    SystemParams,
    block_conflict_probability,
    conda_time_no_conflict,
    total_expected_time,
)
from ..config.config import (
    AnalyticModel,
    AppConfig,
    EngineConfig,
    ReportFormat,
    SignatureConfig,
    SignatureMode,
    Strategy,
    TimingConfig,
    flatten_config,
)
from ..engine.simulation_coordinator import RunReport, run_plan
from ..engine.strategies import StrategyConfig
from ..utils.exceptions import ConfigError, ErrorHandler, PlanError
from ..utils.logger import get_logger, get_run_tracker
from ..workload.trace_generator import OffloadPlan
from ..workload.trace_loader import load_trace_file


class ExperimentSpec(BaseModel):
    """一次扫描实验的完整描述"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    strategies: List[Strategy] = Field(min_length=1)
    f_nmp: List[float] = Field(min_length=1)
    f_cpu: float = Field(default=0.5, ge=0.0, le=1.0)
    granularity: List[int] = Field(min_length=1)
    breakpoints: List[int] = Field(default_factory=lambda: [5], min_length=1)
    K: int = Field(default=1 << 20, ge=1)
    trials: int = Field(default=10000, ge=1)
    seed: int = Field(default=1, ge=0)
    # 显式种子列表，给出时覆盖 trials
    seeds: Optional[List[int]] = None
    blocks: int = Field(default=1, ge=1)
    write_ratio: float = Field(default=0.5, ge=0.0, le=1.0)
    timing: TimingConfig = Field(default_factory=TimingConfig)
    sig: SignatureConfig = Field(default_factory=SignatureConfig)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    analytic_model: AnalyticModel = AnalyticModel.CLOSED_FORM
    error_threshold_pct: float = Field(default=5.0, ge=0.0)
    max_error_threshold_pct: float = Field(default=8.0, ge=0.0)
    output: str = "results/sweep.csv"
    format: ReportFormat = ReportFormat.CSV
    workers: int = Field(default=1, ge=1)

    @field_validator("f_nmp")
    @classmethod
    def check_fractions(cls, value: List[float]) -> List[float]:
        for item in value:
            if not 0.0 <= item <= 1.0:
                raise ValueError(f"f_nmp 必须在 [0,1] 内: {item}")
        return value

    @field_validator("granularity", "breakpoints")
    @classmethod
    def check_positive(cls, value: List[int]) -> List[int]:
        for item in value:
            if item < 1:
                raise ValueError(f"必须 ≥ 1: {item}")
        return value

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None:
            if not value:
                raise ValueError("种子列表为空")
            if min(value) < 0:
                raise ValueError("种子必须非负")
        return value

    @classmethod
    def from_config(cls, config: AppConfig, seeds: Optional[List[int]] = None) -> "ExperimentSpec":
        """由应用配置构造；seed_file 指定时从文件读取种子"""
        experiment = config.experiment
        if seeds is None and experiment.seed_file:
            seeds = load_seed_file(experiment.seed_file)
        return cls(
            strategies=experiment.strategies,
            f_nmp=experiment.f_nmp,
            f_cpu=config.workload.f_cpu,
            granularity=experiment.granularity,
            breakpoints=experiment.breakpoints,
            K=config.workload.k,
            trials=len(seeds) if seeds else experiment.trials,
            seed=experiment.seed,
            seeds=seeds,
            blocks=config.workload.blocks,
            write_ratio=config.workload.write_ratio,
            timing=config.timing,
            sig=config.sig,
            engine=config.engine,
            analytic_model=config.analytics.model,
            error_threshold_pct=config.analytics.error_threshold_pct,
            max_error_threshold_pct=config.analytics.max_error_threshold_pct,
            output=experiment.output,
            format=experiment.format,
            workers=experiment.workers
        )

    @property
    def run_seeds(self) -> List[int]:
        """实际使用的种子列表"""
        return list(self.seeds) if self.seeds else list(range(self.trials))

    def params(self, f_nmp: float) -> SystemParams:
        """某个 f_nmp 取值下的系统参数"""
        return SystemParams(
            K=self.K,
            f_cpu=self.f_cpu,
            f_nmp=f_nmp,
            t_inst=self.timing.t_inst,
            t_tran=self.timing.t_tran,
            t_commit=self.timing.t_commit,
            t_cpu=self.timing.t_cpu,
            write_ratio=self.write_ratio
        )

    def strategy_config(self, strategy: Strategy, breakpoints_b: int) -> StrategyConfig:
        return StrategyConfig(
            strategy=strategy,
            breakpoints_b=breakpoints_b,
            conflict_mode=self.engine.conflict_mode,
            sig_mode=self.sig.mode,
            bits_per_elem=self.sig.bits_per_elem,
            hashes=self.sig.hashes,
            fine_grained_access_cost=self.engine.fine_grained_access_cost,
            max_retries=self.engine.max_retries,
            slot_gap_cycles=self.engine.slot_gap_cycles
        )

    def provenance(self) -> Dict[str, object]:
        """写入报告旁注的全部参数"""
        data = self.model_dump(mode="json")
        data["seeds"] = self.seeds if self.seeds else f"0..{self.trials - 1}"
        return data


def load_seed_file(path: str) -> List[int]:
    """种子文件：每行一个非负整数，'#' 为注释"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ErrorHandler.handle_io_error(e, path, "种子文件读取失败")
    seeds: List[int] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            value = int(line)
        except ValueError:
            raise ConfigError(f"{path}:{line_no}: 种子不是整数: {line!r}", config_key="experiment.seed_file")
        if value < 0:
            raise ConfigError(f"{path}:{line_no}: 种子必须非负: {value}", config_key="experiment.seed_file")
        seeds.append(value)
    if not seeds:
        raise ConfigError(f"种子文件为空: {path}", config_key="experiment.seed_file")
    return seeds


@dataclass
class SweepRow:
    """扫描结果的一行（列顺序即 CSV 列顺序）"""
    strategy: str
    granularity: int
    f_nmp: float
    f_cpu: float
    b: int
    trials: int
    sim_mean_cycles: float
    sim_ci95: float
    analytic_cycles: float
    error_pct: float
    conflicts_mean: float
    reexec_insts_mean: float
    transactions_mean: float
    speedup_vs_fine_grained: float
    retries_exhausted: bool


SWEEP_COLUMNS = list(SweepRow.__dataclass_fields__)


@dataclass(frozen=True)
class SweepJob:
    """一个去重后的仿真任务"""
    strategy: Strategy
    granularity: int
    f_nmp: float
    b: int


@dataclass
class JobResult:
    """任务结果"""
    job: SweepJob
    report: RunReport
    analytic_cycles: float
    duration: float = 0.0
    # 子进程中的运行统计，由父进程并入
    metrics: Dict[str, float] = field(default_factory=dict)


def effective_breakpoints(strategy: Strategy, b: int) -> int:
    """CONDA 与细粒度不使用断点"""
    return b if strategy == Strategy.MRCN else 1


def run_job(spec: ExperimentSpec, job: SweepJob) -> JobResult:
    """执行单个任务（可在子进程中调用）"""
    start = time.time()
    params = spec.params(job.f_nmp)
    plan = OffloadPlan.uniform(job.granularity, job.b, spec.blocks, spec.K, seed=spec.seed)
    cfg = spec.strategy_config(job.strategy, job.b)
    report = run_plan(plan, params, cfg, spec.run_seeds)
    expected = total_expected_time(
        params,
        plan,
        job.strategy,
        spec.analytic_model,
        access_cost=cfg.access_cost(params),
        max_retries=spec.engine.max_retries,
        slot_gap=spec.engine.slot_gap_cycles
    )
    duration = time.time() - start
    return JobResult(
        job=job,
        report=report,
        analytic_cycles=expected.cycles,
        duration=duration,
        metrics={
            "jobs": 1,
            "trials": report.seeds,
            "blocks_simulated": report.seeds * len(report.per_block_cycles),
            "conflicts": report.conflicts_detected * report.seeds,
            "retries_exhausted": report.exhausted_blocks,
            "total_job_time": duration
        }
    )


def _run_job_args(args: Tuple[ExperimentSpec, SweepJob]) -> JobResult:
    return run_job(*args)


@dataclass
class SweepResult:
    """扫描结果：行表 + 任务结果索引"""
    rows: List[SweepRow] = field(default_factory=list)
    jobs: Dict[SweepJob, JobResult] = field(default_factory=dict)

    def report_for(self, strategy: Strategy, granularity: int, f_nmp: float, b: int) -> RunReport:
        return self.jobs[SweepJob(strategy, granularity, f_nmp, effective_breakpoints(strategy, b))].report


def _grid_cells(spec: ExperimentSpec) -> List[Tuple[Strategy, int, float, int]]:
    """按 策略 > 粒度 > f_nmp > b 的顺序展开网格"""
    return [
        (strategy, granularity, f_nmp, b)
        for strategy in spec.strategies
        for granularity in spec.granularity
        for f_nmp in spec.f_nmp
        for b in spec.breakpoints
    ]


def plan_jobs(spec: ExperimentSpec, include_baseline: bool = True) -> List[SweepJob]:
    """网格展开并去重；include_baseline 时追加细粒度基线任务"""
    jobs: List[SweepJob] = []
    seen = set()
    for strategy, granularity, f_nmp, b in _grid_cells(spec):
        candidates = [SweepJob(strategy, granularity, f_nmp, effective_breakpoints(strategy, b))]
        if include_baseline:
            candidates.append(SweepJob(Strategy.FINE_GRAINED, granularity, f_nmp, 1))
        for job in candidates:
            if job not in seen:
                seen.add(job)
                jobs.append(job)
    return jobs


def _execute_jobs(spec: ExperimentSpec, jobs: List[SweepJob], progress: bool) -> Dict[SweepJob, JobResult]:
    logger = get_logger()
    tracker = get_run_tracker()
    results: Dict[SweepJob, JobResult] = {}
    with tqdm(total=len(jobs), desc="sweep", unit="job", disable=not progress, file=sys.stderr) as bar:
        if spec.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                for result in pool.map(_run_job_args, [(spec, job) for job in jobs]):
                    results[result.job] = result
                    tracker.merge(result.metrics)
                    bar.update(1)
        else:
            for job in jobs:
                results[job] = run_job(spec, job)
                bar.update(1)
    for job in jobs:
        result = results[job]
        logger.log_job_result(
            job.strategy.value, job.granularity, job.f_nmp, job.b,
            result.report.total_cycles, result.analytic_cycles, result.duration
        )
    return results


def error_pct(analytic: float, simulated: float) -> float:
    """100·|analytic − sim|/sim"""
    if simulated == 0:
        return 0.0 if analytic == 0 else float("inf")
    return 100.0 * abs(analytic - simulated) / simulated


def run_sweep(
    spec: ExperimentSpec,
    progress: bool = False,
    include_baseline: bool = True,
    command: str = "sweep"
) -> SweepResult:
    """
    在网格笛卡尔积上执行仿真，每个网格点输出一行

    相同 (策略, 粒度, f_nmp, 有效 b) 的任务只执行一次；
    输出顺序只取决于网格顺序，与执行顺序无关。
    """
    jobs = plan_jobs(spec, include_baseline)
    logger = get_logger()
    tracker = get_run_tracker()
    tracker.reset()
    logger.log_sweep_start(command, len(jobs), len(spec.run_seeds), spec.provenance())
    results = _execute_jobs(spec, jobs, progress)

    rows: List[SweepRow] = []
    for strategy, granularity, f_nmp, b in _grid_cells(spec):
        b_eff = effective_breakpoints(strategy, b)
        result = results[SweepJob(strategy, granularity, f_nmp, b_eff)]
        report = result.report
        speedup = float("nan")
        baseline = results.get(SweepJob(Strategy.FINE_GRAINED, granularity, f_nmp, 1))
        if baseline is not None and report.total_cycles > 0:
            speedup = baseline.report.total_cycles / report.total_cycles
        rows.append(SweepRow(
            strategy=strategy.value,
            granularity=granularity,
            f_nmp=f_nmp,
            f_cpu=spec.f_cpu,
            b=b_eff,
            trials=report.seeds,
            sim_mean_cycles=report.total_cycles,
            sim_ci95=report.ci95,
            analytic_cycles=result.analytic_cycles,
            error_pct=error_pct(result.analytic_cycles, report.total_cycles),
            conflicts_mean=report.conflicts_detected,
            reexec_insts_mean=report.instructions_reexecuted,
            transactions_mean=report.coherence_transactions,
            speedup_vs_fine_grained=speedup,
            retries_exhausted=report.retries_exhausted
        ))
    logger.info(f"{command} 完成: {len(rows)} 行", event_type="sweep_complete", rows=len(rows))
    tracker.log_metrics()
    return SweepResult(rows=rows, jobs=results)


@dataclass
class ValidationSummary:
    """某策略某粒度下的解析误差汇总"""
    strategy: str
    granularity: int
    cells: int
    mean_error_pct: float
    max_error_pct: float
    passed: bool


@dataclass
class ValidationReport:
    """解析模型校验报告"""
    rows: List[SweepRow]
    summaries: List[ValidationSummary]
    error_threshold_pct: float
    max_error_threshold_pct: float

    @property
    def passed(self) -> bool:
        return all(summary.passed for summary in self.summaries)


def validate_analytics(spec: ExperimentSpec, progress: bool = False) -> ValidationReport:
    """强制 EXACT_SET 签名，按 (策略, 粒度) 汇总解析与仿真的误差"""
    exact = spec.model_copy(update={"sig": spec.sig.model_copy(update={"mode": SignatureMode.EXACT_SET})})
    result = run_sweep(exact, progress=progress, include_baseline=False, command="validate")
    logger = get_logger()

    summaries: List[ValidationSummary] = []
    for strategy in exact.strategies:
        for granularity in exact.granularity:
            errors = [
                row.error_pct for row in result.rows
                if row.strategy == strategy.value and row.granularity == granularity
            ]
            mean_error = sum(errors) / len(errors)
            max_error = max(errors)
            passed = mean_error <= exact.error_threshold_pct and max_error <= exact.max_error_threshold_pct
            summaries.append(ValidationSummary(
                strategy=strategy.value,
                granularity=granularity,
                cells=len(errors),
                mean_error_pct=mean_error,
                max_error_pct=max_error,
                passed=passed
            ))
            logger.log_validation_result(strategy.value, granularity, mean_error, max_error, passed)

    return ValidationReport(
        rows=result.rows,
        summaries=summaries,
        error_threshold_pct=exact.error_threshold_pct,
        max_error_threshold_pct=exact.max_error_threshold_pct
    )


@dataclass
class ImprovementCell:
    """同一网格点上 MRCN 相对 CONDA 的改进"""
    granularity: int
    f_nmp: float
    b: int
    conda_mean_cycles: float
    mrcn_mean_cycles: float
    improvement_pct: float
    # MRCN 总周期大于 CONDA 的种子数（成对比较）
    dominance_violations: int


@dataclass
class ImprovementReport:
    """改进汇总"""
    cells: List[ImprovementCell]
    min_pct: float
    max_pct: float
    mean_pct: float

    @property
    def total_violations(self) -> int:
        return sum(cell.dominance_violations for cell in self.cells)


def _violations(conda: RunReport, mrcn: RunReport) -> int:
    return sum(
        1 for conda_total, mrcn_total in zip(conda.seed_totals, mrcn.seed_totals)
        if mrcn_total > conda_total * (1 + 1e-12)
    )


def compare_strategies(spec: ExperimentSpec, progress: bool = False) -> ImprovementReport:
    """成对种子比较 MRCN 与 CONDA：improvement = 100·(conda − mrcn)/conda"""
    if Strategy.CONDA not in spec.strategies or Strategy.MRCN not in spec.strategies:
        raise ConfigError("compare 需要同时包含 conda 与 mrcn 策略", config_key="experiment.strategies")
    paired = spec.model_copy(update={"strategies": [Strategy.CONDA, Strategy.MRCN]})
    result = run_sweep(paired, progress=progress, include_baseline=False, command="compare")

    cells: List[ImprovementCell] = []
    for granularity in paired.granularity:
        for f_nmp in paired.f_nmp:
            for b in paired.breakpoints:
                conda = result.report_for(Strategy.CONDA, granularity, f_nmp, b)
                mrcn = result.report_for(Strategy.MRCN, granularity, f_nmp, b)
                if conda.total_cycles <= 0:
                    raise PlanError("CONDA 平均周期为 0，无法计算改进")
                cells.append(ImprovementCell(
                    granularity=granularity,
                    f_nmp=f_nmp,
                    b=b,
                    conda_mean_cycles=conda.total_cycles,
                    mrcn_mean_cycles=mrcn.total_cycles,
                    improvement_pct=100.0 * (conda.total_cycles - mrcn.total_cycles) / conda.total_cycles,
                    dominance_violations=_violations(conda, mrcn)
                ))

    improvements = [cell.improvement_pct for cell in cells]
    get_logger().info(
        f"MRCN 相对 CONDA 改进: 最小 {min(improvements):.2f}% 最大 {max(improvements):.2f}%",
        event_type="improvement", min_pct=min(improvements), max_pct=max(improvements)
    )
    return ImprovementReport(
        cells=cells,
        min_pct=min(improvements),
        max_pct=max(improvements),
        mean_pct=sum(improvements) / len(improvements)
    )


def config_provenance(config: AppConfig) -> Dict[str, object]:
    """完整配置的扁平视图"""
    return flatten_config(config)


@dataclass
class AnalyticRow:
    """纯解析计算的一行"""
    strategy: str
    granularity: int
    f_nmp: float
    f_cpu: float
    b: int
    K: int
    conflict_probability: float
    no_conflict_cycles: float
    expected_cycles: float


def analytic_table(spec: ExperimentSpec) -> List[AnalyticRow]:
    """不做仿真，只在网格上计算期望时间"""
    rows: List[AnalyticRow] = []
    for strategy, granularity, f_nmp, b in _grid_cells(spec):
        b_eff = effective_breakpoints(strategy, b)
        params = spec.params(f_nmp)
        block = BlockSpec(theta_nmp=granularity, breakpoints_b=b_eff)
        plan = OffloadPlan(blocks=(block,) * spec.blocks, K=spec.K, seed=spec.seed)
        cfg = spec.strategy_config(strategy, b_eff)
        expected = total_expected_time(
            params, plan, strategy, spec.analytic_model,
            access_cost=cfg.access_cost(params),
            max_retries=spec.engine.max_retries,
            slot_gap=spec.engine.slot_gap_cycles
        )
        rows.append(AnalyticRow(
            strategy=strategy.value,
            granularity=granularity,
            f_nmp=f_nmp,
            f_cpu=spec.f_cpu,
            b=b_eff,
            K=spec.K,
            conflict_probability=block_conflict_probability(params, block),
            no_conflict_cycles=conda_time_no_conflict(params, block) * spec.blocks,
            expected_cycles=expected.cycles
        ))
    return rows


def run_trace(spec: ExperimentSpec, path: str) -> List[SweepRow]:
    """
    在外部轨迹上执行各策略

    首次尝试的CPU访问取自文件，重执行窗口按种子抽取；
    段划分使用文件中的 B，解析列按实验的 f_nmp[0] 计算。
    """
    plan, traces = load_trace_file(path)
    f_nmp = spec.f_nmp[0]
    params = spec.params(f_nmp).model_copy(update={"K": plan.K})
    seeds = spec.run_seeds

    baseline_cfg = spec.strategy_config(Strategy.FINE_GRAINED, 1)
    baseline = run_plan(plan, params, baseline_cfg, seeds[:1], traces)

    rows: List[SweepRow] = []
    for strategy in spec.strategies:
        cfg = spec.strategy_config(strategy, 1).model_copy(update={"breakpoints_b": None})
        report = run_plan(plan, params, cfg, seeds, traces)
        expected = total_expected_time(
            params, plan, strategy, spec.analytic_model,
            access_cost=cfg.access_cost(params),
            max_retries=spec.engine.max_retries,
            slot_gap=spec.engine.slot_gap_cycles
        )
        rows.append(SweepRow(
            strategy=strategy.value,
            granularity=plan.blocks[0].theta_nmp,
            f_nmp=f_nmp,
            f_cpu=spec.f_cpu,
            b=effective_breakpoints(strategy, plan.blocks[0].breakpoints_b),
            trials=report.seeds,
            sim_mean_cycles=report.total_cycles,
            sim_ci95=report.ci95,
            analytic_cycles=expected.cycles,
            error_pct=error_pct(expected.cycles, report.total_cycles),
            conflicts_mean=report.conflicts_detected,
            reexec_insts_mean=report.instructions_reexecuted,
            transactions_mean=report.coherence_transactions,
            speedup_vs_fine_grained=baseline.total_cycles / report.total_cycles if report.total_cycles else float("nan"),
            retries_exhausted=report.retries_exhausted
        ))
    return rows
