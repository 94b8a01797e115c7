"""
日志记录系统
"""
import logging
import json
import os
import time
from typing import Any, Dict, Optional
from datetime import datetime
from pathlib import Path
from ..utils.exceptions import CoherenceSimError


class ColoredFormatter(logging.Formatter):
    """彩色日志格式化器"""

    # ANSI颜色代码
    COLORS = {
        'DEBUG': '\033[36m',    # 青色
        'INFO': '\033[32m',     # 绿色
        'WARNING': '\033[33m',  # 黄色
        'ERROR': '\033[31m',    # 红色
        'CRITICAL': '\033[35m', # 紫色
        'RESET': '\033[0m'      # 重置
    }

    def format(self, record):
        # 复制一份，避免颜色码污染文件处理器
        record = logging.makeLogRecord(record.__dict__)
        if record.levelname in self.COLORS:
            record.levelname = f"{self.COLORS[record.levelname]}{record.levelname}{self.COLORS['RESET']}"
        return super().format(record)


class JSONFormatter(logging.Formatter):
    """JSON格式日志格式化器"""

    def format(self, record):
        log_entry = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno
        }

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        if hasattr(record, 'extra_data'):
            log_entry.update(record.extra_data)

        return json.dumps(log_entry, ensure_ascii=False, default=str)


class SimulationLogger:
    """仿真日志记录器"""

    def __init__(self, name: str = "nmp_coherence", level: int = logging.INFO):
        """初始化日志记录器"""
        self.logger = logging.getLogger(name)
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        # 避免重复添加处理器
        if not self.logger.handlers:
            self._setup_handlers(level)

    def _setup_handlers(self, level: int):
        """设置日志处理器"""
        # 控制台处理器（彩色输出，写 stderr，stdout 留给报告）
        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(ColoredFormatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        self.logger.addHandler(console_handler)

        # 文件处理器（JSON格式），NMP_SIM_LOG_DIR 为空时不写文件
        log_dir_value = os.getenv("NMP_SIM_LOG_DIR", "logs")
        if not log_dir_value:
            return
        try:
            log_dir = Path(log_dir_value)
            log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(
                log_dir / f"nmp_coherence_{datetime.now().strftime('%Y%m%d')}.log",
                encoding='utf-8'
            )
        except OSError:
            return
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(JSONFormatter())
        self.logger.addHandler(file_handler)

    def set_level(self, level: str):
        """调整控制台日志级别"""
        numeric = logging.getLevelName(level.upper())
        if not isinstance(numeric, int):
            return
        for handler in self.logger.handlers:
            if not isinstance(handler, logging.FileHandler):
                handler.setLevel(numeric)

    def log_sweep_start(self, command: str, jobs: int, trials: int, provenance: Dict[str, Any]):
        """记录扫描开始"""
        extra_data = {
            'event_type': 'sweep_start',
            'command': command,
            'jobs': jobs,
            'trials': trials,
            'provenance': provenance
        }
        self.logger.info(
            f"开始{command}: {jobs} 个任务, 每任务 {trials} 次试验",
            extra={'extra_data': extra_data}
        )

    def log_job_result(
        self,
        strategy: str,
        granularity: int,
        f_nmp: float,
        breakpoints: int,
        sim_mean: float,
        analytic: float,
        duration: float
    ):
        """记录单个仿真任务结果"""
        extra_data = {
            'event_type': 'job_result',
            'strategy': strategy,
            'granularity': granularity,
            'f_nmp': f_nmp,
            'b': breakpoints,
            'sim_mean_cycles': sim_mean,
            'analytic_cycles': analytic,
            'duration_ms': round(duration * 1000, 2)
        }
        self.logger.debug(
            f"{strategy} θ={granularity} f_nmp={f_nmp} b={breakpoints}: 仿真 {sim_mean:.2f} / 解析 {analytic:.2f}",
            extra={'extra_data': extra_data}
        )

    def log_retries_exhausted(self, strategy: str, block_id: int, seed: int, attempts: int):
        """记录重试次数耗尽"""
        extra_data = {
            'event_type': 'retries_exhausted',
            'strategy': strategy,
            'block_id': block_id,
            'seed': seed,
            'attempts': attempts
        }
        self.logger.warning(
            f"{strategy} 块 {block_id} (seed={seed}) 在 {attempts} 次尝试后仍冲突，未提交",
            extra={'extra_data': extra_data}
        )

    def log_validation_result(self, strategy: str, granularity: int, mean_error: float, max_error: float, passed: bool):
        """记录解析模型校验结果"""
        extra_data = {
            'event_type': 'validation',
            'strategy': strategy,
            'granularity': granularity,
            'mean_error_pct': mean_error,
            'max_error_pct': max_error,
            'validation_passed': passed
        }
        level = logging.INFO if passed else logging.WARNING
        message = "解析模型校验通过" if passed else "解析模型校验失败"
        self.logger.log(
            level,
            f"{message}: {strategy} θ={granularity} 平均误差 {mean_error:.2f}% 最大误差 {max_error:.2f}%",
            extra={'extra_data': extra_data}
        )

    def log_check_result(self, name: str, passed: bool, detail: str, duration: float):
        """记录验收检查结果"""
        extra_data = {
            'event_type': 'acceptance_check',
            'check': name,
            'passed': passed,
            'detail': detail,
            'duration_ms': round(duration * 1000, 2)
        }
        level = logging.INFO if passed else logging.ERROR
        self.logger.log(
            level,
            f"验收检查 {name}: {'通过' if passed else '未通过'} ({detail})",
            extra={'extra_data': extra_data}
        )

    def log_report_written(self, path: str, rows: int, fmt: str):
        """记录报告写出"""
        extra_data = {'event_type': 'report', 'path': path, 'rows': rows, 'format': fmt}
        self.logger.info(f"报告已写出: {path} ({rows} 行, {fmt})", extra={'extra_data': extra_data})

    def log_error(self, error: CoherenceSimError):
        """记录结构化错误"""
        extra_data = {
            'event_type': 'error',
            'error_type': error.error_type.value,
            'error_severity': error.severity.value,
            'error_message': error.message
        }
        if error.context:
            extra_data['error_context'] = error.context
        self.logger.error(
            f"运行失败: {error}",
            extra={'extra_data': extra_data},
            exc_info=error.original_error
        )

    def log_performance_metrics(self, metrics: Dict[str, Any]):
        """记录性能指标"""
        extra_data = {
            'event_type': 'performance_metrics',
            'metrics': metrics
        }
        self.logger.info("仿真性能统计", extra={'extra_data': extra_data})

    def debug(self, message: str, **kwargs):
        """调试日志"""
        self.logger.debug(message, extra={'extra_data': kwargs} if kwargs else None)

    def info(self, message: str, **kwargs):
        """信息日志"""
        self.logger.info(message, extra={'extra_data': kwargs} if kwargs else None)


class RunTracker:
    """仿真运行统计"""

    def __init__(self, logger: SimulationLogger):
        self.logger = logger
        self.reset()

    def reset(self):
        """重置统计"""
        self.metrics = {
            'jobs': 0,
            'trials': 0,
            'blocks_simulated': 0,
            'conflicts': 0,
            'retries_exhausted': 0,
            'total_job_time': 0.0
        }
        self._started: Optional[float] = None

    def start_job(self) -> float:
        """开始一个任务"""
        self._started = time.time()
        return self._started

    def end_job(self, trials: int, blocks: int, conflicts: float, exhausted: int):
        """结束一个任务"""
        self.metrics['jobs'] += 1
        self.metrics['trials'] += trials
        self.metrics['blocks_simulated'] += blocks
        self.metrics['conflicts'] += conflicts
        self.metrics['retries_exhausted'] += exhausted
        if self._started is not None:
            self.metrics['total_job_time'] += time.time() - self._started
            self._started = None

    def merge(self, metrics: Dict[str, Any]):
        """并入其他进程中统计的计数"""
        for key, value in metrics.items():
            if key in self.metrics:
                self.metrics[key] += value

    def get_metrics(self) -> Dict[str, Any]:
        """获取统计指标"""
        jobs = self.metrics['jobs']
        blocks = self.metrics['blocks_simulated']
        return {
            **self.metrics,
            'avg_job_time': round(self.metrics['total_job_time'] / jobs, 4) if jobs else 0,
            'conflicts_per_block': round(self.metrics['conflicts'] / blocks, 6) if blocks else 0
        }

    def log_metrics(self):
        """记录统计指标"""
        self.logger.log_performance_metrics(self.get_metrics())


# 全局日志记录器实例
logger = SimulationLogger()
run_tracker = RunTracker(logger)


def get_logger() -> SimulationLogger:
    """获取日志记录器实例"""
    return logger


def get_run_tracker() -> RunTracker:
    """获取运行统计实例"""
    return run_tracker
