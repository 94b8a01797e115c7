"""
NMP 一致性仿真命令行入口

子命令：analytic / simulate / sweep / validate / compare / reproduce
退出码：0 成功，1 配置或输入错误，2 I/O错误，3 验收未通过
"""
import sys
from typing import Any, Dict, Iterable, List, Optional, Sequence

import click

from src.config.config import AppConfig, config_manager
from src.harness.acceptance import run_reproduce
from src.harness.experiment_runner import (
    ExperimentSpec,
    analytic_table,
    compare_strategies,
    config_provenance,
    run_sweep,
    run_trace,
    validate_analytics,
)
from src.harness.report_writer import emit_report, write_metadata
from src.utils.exceptions import AcceptanceError, ConfigError, CoherenceSimError, ErrorHandler, get_user_friendly_message
from src.utils.logger import get_logger


# 命令行参数名 -> 配置键
FLAG_KEYS = {
    "strategy": "experiment.strategies",
    "f_nmp": "experiment.f_nmp",
    "f_cpu": "workload.f_cpu",
    "granularity": "experiment.granularity",
    "breakpoints": "experiment.breakpoints",
    "k": "workload.k",
    "trials": "experiment.trials",
    "seed": "experiment.seed",
    "seed_file": "experiment.seed_file",
    "sig_mode": "sig.mode",
    "model": "analytics.model",
    "workers": "experiment.workers",
    "fmt": "experiment.format",
}


def parse_set_options(values: Iterable[str]) -> Dict[str, str]:
    """--set section.key=value"""
    overrides: Dict[str, str] = {}
    for item in values:
        if "=" not in item:
            raise ConfigError(f"--set 需要 key=value 形式: {item!r}", config_key=None)
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(config_file: Optional[str], sets: Sequence[str], flags: Dict[str, Any]) -> AppConfig:
    """配置文件 -> --set -> 显式命令行参数，后者优先"""
    overrides = parse_set_options(sets)
    for name, value in flags.items():
        if value is None or name not in FLAG_KEYS:
            continue
        overrides[FLAG_KEYS[name]] = value
    config = config_manager.load(config_file, overrides)
    get_logger().set_level(config.logging.level)
    return config


def common_options(func):
    """所有子命令共享的参数"""
    options = [
        click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
                     help="key=value 配置文件"),
        click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                     help="覆盖任意配置键，可重复"),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None,
                     help="报告格式"),
        click.option("--progress/--no-progress", default=False, help="在 stderr 显示进度条"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def grid_options(func):
    """扫描网格参数；逗号分隔的多值交给配置层解析"""
    options = [
        click.option("--strategy", default=None, help="fine_grained,conda,mrcn"),
        click.option("--f-nmp", "f_nmp", default=None, help="NMP 共享访问比例列表"),
        click.option("--f-cpu", "f_cpu", default=None, help="CPU 共享访问比例"),
        click.option("--granularity", default=None, help="θ_nmp 列表"),
        click.option("--breakpoints", default=None, help="断点数 b 列表"),
        click.option("--k", "k", default=None, help="共享地址空间大小 K"),
        click.option("--sig-mode", "sig_mode", type=click.Choice(["exact_set", "bloom"]), default=None),
        click.option("--model", type=click.Choice(["closed_form", "retry_aware"]), default=None,
                     help="解析模型"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def seed_options(func):
    options = [
        click.option("--trials", default=None, help="每个网格点的种子数"),
        click.option("--seed", default=None, help="主种子"),
        click.option("--seed-file", "seed_file", default=None, type=click.Path(dir_okay=False),
                     help="每行一个种子"),
        click.option("--workers", default=None, help="并行进程数"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _emit(command: str, config: AppConfig, spec: ExperimentSpec, rows: List[Any], out: Optional[str]):
    """有 --out 时写文件和旁注，否则打印到 stdout"""
    text = emit_report(rows, spec.format, out)
    if out is None:
        click.echo(text, nl=False)
        return
    write_metadata(out, {
        "command": command,
        "config": config_provenance(config),
        "experiment": spec.provenance(),
    })
    click.echo(f"已写出 {len(rows)} 行: {out}", err=True)


@click.group()
def cli():
    """CPU 与近存计算（NMP）之间的推测一致性仿真"""


@cli.command()
@common_options
@grid_options
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def analytic(config_file, sets, fmt, progress, out, **flags):
    """只计算解析期望时间"""
    config = load_config(config_file, sets, dict(flags, fmt=fmt))
    spec = ExperimentSpec.from_config(config)
    _emit("analytic", config, spec, analytic_table(spec), out)


@cli.command()
@common_options
@grid_options
@seed_options
@click.option("--trace", "trace_file", default=None, type=click.Path(dir_okay=False),
              help="外部轨迹文件；给出时首次CPU访问取自文件")
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def simulate(config_file, sets, fmt, progress, trace_file, out, **flags):
    """仿真并与解析结果对比，输出与 sweep 同列"""
    config = load_config(config_file, sets, dict(flags, fmt=fmt))
    spec = ExperimentSpec.from_config(config)
    if trace_file:
        rows = run_trace(spec, trace_file)
    else:
        rows = run_sweep(spec, progress=progress, command="simulate").rows
    _emit("simulate", config, spec, rows, out)


@cli.command()
@common_options
@grid_options
@seed_options
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="缺省为 experiment.output")
def sweep(config_file, sets, fmt, progress, out, **flags):
    """网格扫描，结果总是写文件"""
    config = load_config(config_file, sets, dict(flags, fmt=fmt))
    spec = ExperimentSpec.from_config(config)
    result = run_sweep(spec, progress=progress, command="sweep")
    _emit("sweep", config, spec, result.rows, out or spec.output)


@cli.command()
@common_options
@grid_options
@seed_options
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def validate(config_file, sets, fmt, progress, out, **flags):
    """解析模型对仿真的误差检验"""
    config = load_config(config_file, sets, dict(flags, fmt=fmt))
    spec = ExperimentSpec.from_config(config)
    report = validate_analytics(spec, progress=progress)
    _emit("validate", config, spec, report.rows, out)
    failed = []
    for summary in report.summaries:
        status = "通过" if summary.passed else "未通过"
        click.echo(
            f"{summary.strategy} θ={summary.granularity}: 平均误差 {summary.mean_error_pct:.2f}% "
            f"最大误差 {summary.max_error_pct:.2f}% [{status}]",
            err=True
        )
        if not summary.passed:
            failed.append(f"{summary.strategy}@{summary.granularity}")
    if not report.passed:
        raise AcceptanceError("解析误差超过阈值", failed_checks=failed)


@cli.command()
@common_options
@grid_options
@seed_options
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def compare(config_file, sets, fmt, progress, out, **flags):
    """MRCN 相对 CONDA 的改进"""
    config = load_config(config_file, sets, dict(flags, fmt=fmt))
    spec = ExperimentSpec.from_config(config)
    report = compare_strategies(spec, progress=progress)
    _emit("compare", config, spec, report.cells, out)
    click.echo(
        f"改进: 最小 {report.min_pct:.2f}% 最大 {report.max_pct:.2f}% 平均 {report.mean_pct:.2f}%，"
        f"逐种子劣于 CONDA 的次数 {report.total_violations}",
        err=True
    )


@cli.command()
@common_options
@seed_options
@click.option("--out", "out_dir", default="results/reproduce", type=click.Path(file_okay=False),
              help="输出目录")
def reproduce(config_file, sets, fmt, progress, out_dir, **flags):
    """完整验收套件"""
    config = load_config(config_file, sets, dict(flags, fmt=fmt))
    result = run_reproduce(config, out_dir, progress=progress)
    for check in result.suite.checks:
        mark = "PASS" if check.passed else "FAIL"
        click.echo(f"[{mark}] {check.name}: {check.detail}", err=True)
    click.echo(f"验收报告: {result.report_path}", err=True)
    if not result.passed:
        raise AcceptanceError("验收套件未通过", failed_checks=[c.name for c in result.suite.get_failed_checks()])


def main(argv: Optional[Sequence[str]] = None) -> int:
    """运行命令行，返回退出码"""
    logger = get_logger()
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="nmp-coherence", standalone_mode=False)
        return ErrorHandler.EXIT_OK
    except click.exceptions.Abort:
        click.echo("已中断", err=True)
        return ErrorHandler.EXIT_CONFIG
    except click.ClickException as e:
        e.show()
        return ErrorHandler.EXIT_CONFIG
    except CoherenceSimError as e:
        logger.log_error(e)
        click.echo(get_user_friendly_message(e), err=True)
        return ErrorHandler.exit_code(e)
    except OSError as e:
        click.echo(f"文件读写错误：{e}", err=True)
        return ErrorHandler.exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
