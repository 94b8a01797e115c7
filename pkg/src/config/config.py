"""
配置管理模块
"""
import os
from enum import Enum
from pathlib import Path
from typing import Dict, Any, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from dotenv import load_dotenv

from ..utils.exceptions import ConfigError, ErrorHandler


ENV_PREFIX = "NMP_SIM_"


class Strategy(str, Enum):
    """一致性策略"""
    FINE_GRAINED = "fine_grained"
    CONDA = "conda"
    MRCN = "mrcn"


class SignatureMode(str, Enum):
    """签名编码方式"""
    EXACT_SET = "exact_set"
    BLOOM = "bloom"


class ConflictMode(str, Enum):
    """CPU侧校验判定方式"""
    ADDRESS_OVERLAP = "address_overlap"
    RW_AWARE = "rw_aware"


class AnalyticModel(str, Enum):
    """解析模型选择"""
    CLOSED_FORM = "closed_form"
    RETRY_AWARE = "retry_aware"


class ReportFormat(str, Enum):
    """报告格式"""
    CSV = "csv"
    JSON = "json"


def _split_list(value: Any) -> Any:
    """逗号分隔字符串 -> 列表"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (int, float)):
        return [value]
    return value


def _none_if_blank(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    return value


def _check_fractions(values: List[float]) -> List[float]:
    for value in values:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"比例必须在 [0,1] 内: {value}")
    return values


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True, allow_inf_nan=False)


class TimingConfig(_Section):
    """时序常数（统一为NMP周期）"""
    t_inst: float = Field(default=1.0, gt=0.0)
    t_tran: float = Field(default=50.0, gt=0.0)
    t_commit: float = Field(default=8.0, ge=0.0)
    # 3 GHz CPU 对 2 GHz NMP
    t_cpu: float = Field(default=2.0 / 3.0, gt=0.0)


class WorkloadConfig(_Section):
    """负载配置"""
    k: int = Field(default=1 << 20, ge=1)
    f_cpu: float = Field(default=0.5, ge=0.0, le=1.0)
    write_ratio: float = Field(default=0.5, ge=0.0, le=1.0)
    blocks: int = Field(default=1, ge=1)


class SignatureConfig(_Section):
    """签名配置"""
    mode: SignatureMode = Field(default=SignatureMode.EXACT_SET)
    bits_per_elem: float = Field(default=9.6, gt=0.0)
    hashes: int = Field(default=7, ge=1)


class EngineConfig(_Section):
    """仿真引擎配置"""
    conflict_mode: ConflictMode = Field(default=ConflictMode.ADDRESS_OVERLAP)
    max_retries: int = Field(default=1000, ge=0)
    slot_gap_cycles: float = Field(default=0.0, ge=0.0)
    fine_grained_access_cost: Optional[float] = Field(default=None, ge=0.0)

    @field_validator("fine_grained_access_cost", mode="before")
    @classmethod
    def blank_cost_is_none(cls, value: Any) -> Any:
        return _none_if_blank(value)


class ExperimentConfig(_Section):
    """实验扫描配置"""
    strategies: List[Strategy] = Field(default_factory=lambda: [Strategy.CONDA, Strategy.MRCN], min_length=1)
    f_nmp: List[float] = Field(
        default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        min_length=1
    )
    granularity: List[int] = Field(default_factory=lambda: [100, 500], min_length=1)
    breakpoints: List[int] = Field(default_factory=lambda: [5], min_length=1)
    trials: int = Field(default=10000, ge=1)
    seed: int = Field(default=1, ge=0)
    seed_file: Optional[str] = Field(default=None)
    output: str = Field(default="results/sweep.csv")
    format: ReportFormat = Field(default=ReportFormat.CSV)
    workers: int = Field(default=1, ge=1)

    @field_validator("strategies", "f_nmp", "granularity", "breakpoints", mode="before")
    @classmethod
    def split_list_values(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("seed_file", mode="before")
    @classmethod
    def blank_seed_file_is_none(cls, value: Any) -> Any:
        return _none_if_blank(value)

    @field_validator("f_nmp")
    @classmethod
    def check_fractions(cls, value: List[float]) -> List[float]:
        return _check_fractions(value)

    @field_validator("granularity", "breakpoints")
    @classmethod
    def check_positive(cls, value: List[int]) -> List[int]:
        for item in value:
            if item < 1:
                raise ValueError(f"必须 ≥ 1: {item}")
        return value


class AnalyticsConfig(_Section):
    """解析模型与误差阈值"""
    model: AnalyticModel = Field(default=AnalyticModel.CLOSED_FORM)
    error_threshold_pct: float = Field(default=5.0, ge=0.0)
    max_error_threshold_pct: float = Field(default=8.0, ge=0.0)


class AcceptanceConfig(_Section):
    """reproduce 验收套件参数"""
    identity_points: int = Field(default=1000, ge=1)
    oracle_trials: int = Field(default=1_000_000, ge=1)
    oracle_sigma: float = Field(default=3.0, gt=0.0)
    bloom_epochs: int = Field(default=100_000, ge=1)
    bloom_granularity: int = Field(default=100, ge=1)
    bloom_f_nmp: float = Field(default=0.5, ge=0.0, le=1.0)
    dominance_seeds: int = Field(default=1000, ge=1)
    dominance_granularity: int = Field(default=500, ge=1)
    dominance_f_nmp: float = Field(default=0.7, ge=0.0, le=1.0)
    dominance_breakpoints: int = Field(default=5, ge=1)
    improvement_breakpoints: List[int] = Field(default_factory=lambda: [1, 5], min_length=1)
    max_improvement_pct: float = Field(default=30.0)
    min_improvement_pct: float = Field(default=0.0)
    b1_tolerance_pct: float = Field(default=1.0, ge=0.0)
    min_conda_speedup: float = Field(default=1.5, ge=0.0)
    granularity_sweep: List[int] = Field(default_factory=lambda: [50, 100, 250, 500, 1000], min_length=1)
    granularity_sweep_f_nmp: List[float] = Field(default_factory=lambda: [0.1, 0.9], min_length=1)

    @field_validator("improvement_breakpoints", "granularity_sweep", "granularity_sweep_f_nmp", mode="before")
    @classmethod
    def split_list_values(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("granularity_sweep_f_nmp")
    @classmethod
    def check_fractions(cls, value: List[float]) -> List[float]:
        return _check_fractions(value)


class LoggingConfig(_Section):
    """日志配置"""
    level: str = Field(default="INFO")


class AppConfig(BaseModel):
    """应用主配置"""
    model_config = ConfigDict(extra="forbid")

    timing: TimingConfig = Field(default_factory=TimingConfig)
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    sig: SignatureConfig = Field(default_factory=SignatureConfig)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    analytics: AnalyticsConfig = Field(default_factory=AnalyticsConfig)
    acceptance: AcceptanceConfig = Field(default_factory=AcceptanceConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


def _split_key(key: str) -> Tuple[str, str]:
    """'timing.t_tran' -> ('timing', 't_tran')，校验键路径存在"""
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"配置键必须是 section.key 形式: {key!r}", config_key=key)
    section, name = parts[0].lower(), parts[1].lower()
    section_field = AppConfig.model_fields.get(section)
    if section_field is None:
        raise ConfigError(f"未知配置段: {section}", config_key=key)
    section_model = section_field.annotation
    if name not in section_model.model_fields:
        raise ConfigError(f"未知配置键: {section}.{name}", config_key=key)
    return section, name


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """解析 key=value 文本，'#' 开头为注释"""
    overrides: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: 缺少 '=': {raw.strip()}", config_key=None)
        key, value = line.split("=", 1)
        key = key.strip()
        _split_key(key)
        overrides[key] = value.strip()
    return overrides


def apply_overrides(config: AppConfig, overrides: Dict[str, Any]) -> AppConfig:
    """在已有配置上叠加扁平键值，返回新的已校验配置"""
    data = config.model_dump(mode="json")
    for key, value in overrides.items():
        section, name = _split_key(key)
        data[section][name] = value
    try:
        return AppConfig.model_validate(data)
    except ValidationError as e:
        raise ErrorHandler.handle_validation_error(e)


def flatten_config(config: AppConfig) -> Dict[str, Any]:
    """展开为扁平键值，用于报告溯源"""
    flat: Dict[str, Any] = {}
    for section, values in config.model_dump(mode="json").items():
        for name, value in values.items():
            flat[f"{section}.{name}"] = value
    return flat


class ConfigManager:
    """配置管理器"""

    def __init__(self, env_file: Optional[str] = ".env"):
        """初始化配置管理器"""
        if env_file:
            load_dotenv(env_file)
        self._config = self._load_config()

    def _load_config(self) -> AppConfig:
        """默认值 + 环境变量 NMP_SIM_<SECTION>__<KEY>"""
        env_overrides = {}
        for name, value in os.environ.items():
            if not name.startswith(ENV_PREFIX) or "__" not in name:
                continue
            section, key = name[len(ENV_PREFIX):].split("__", 1)
            env_overrides[f"{section.lower()}.{key.lower()}"] = value
        return apply_overrides(AppConfig(), env_overrides)

    @property
    def config(self) -> AppConfig:
        """获取应用配置"""
        return self._config

    def load(self, config_file: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> AppConfig:
        """依次叠加配置文件与命令行覆盖项"""
        config = self._load_config()
        if config_file:
            path = Path(config_file)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as e:
                raise ErrorHandler.handle_io_error(e, str(path), "配置文件读取失败")
            config = apply_overrides(config, parse_config_text(text, str(path)))
        if overrides:
            config = apply_overrides(config, overrides)
        self._config = config
        return config

    def update(self, **overrides: Any) -> AppConfig:
        """按 section__key=value 形式更新配置"""
        flat = {key.replace("__", "."): value for key, value in overrides.items()}
        self._config = apply_overrides(self._config, flat)
        return self._config

    def flatten(self) -> Dict[str, Any]:
        """当前配置的扁平视图"""
        return flatten_config(self._config)


# 全局配置实例
config_manager = ConfigManager()
