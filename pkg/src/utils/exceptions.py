"""
异常处理框架
"""
from typing import Optional, Dict, Any
from enum import Enum


class ErrorType(Enum):
    """错误类型枚举"""
    CONFIG_ERROR = "config_error"
    PARSE_ERROR = "parse_error"
    DOMAIN_ERROR = "domain_error"
    STRUCTURE_ERROR = "structure_error"
    INDEX_ERROR = "index_error"
    PLAN_ERROR = "plan_error"
    PROTOCOL_ERROR = "protocol_error"
    IO_ERROR = "io_error"
    ACCEPTANCE_ERROR = "acceptance_error"
    UNKNOWN_ERROR = "unknown_error"


class ErrorSeverity(Enum):
    """错误严重程度"""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class CoherenceSimError(Exception):
    """一致性仿真器基础异常类"""

    def __init__(
        self,
        message: str,
        error_type: ErrorType = ErrorType.UNKNOWN_ERROR,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        original_error: Optional[Exception] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.error_type = error_type
        self.severity = severity
        self.original_error = original_error
        self.context = context or {}
        super().__init__(self.message)

    def __str__(self) -> str:
        return f"[{self.error_type.value}] {self.message}"

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {
            "message": self.message,
            "error_type": self.error_type.value,
            "severity": self.severity.value,
            "original_error": str(self.original_error) if self.original_error else None,
            "context": self.context
        }


class ConfigError(CoherenceSimError):
    """配置错误"""

    def __init__(self, message: str, config_key: Optional[str] = None, original_error: Optional[Exception] = None):
        super().__init__(
            message=message,
            error_type=ErrorType.CONFIG_ERROR,
            severity=ErrorSeverity.CRITICAL,
            original_error=original_error,
            context={"config_key": config_key}
        )
        self.config_key = config_key


class TraceParseError(CoherenceSimError):
    """轨迹文件解析错误（行格式不合法）"""

    def __init__(self, message: str, path: str, line_no: int, line: str = ""):
        super().__init__(
            message=f"{path}:{line_no}: {message}",
            error_type=ErrorType.PARSE_ERROR,
            severity=ErrorSeverity.HIGH,
            context={"path": path, "line_no": line_no, "line": line[:200]}
        )
        self.path = path
        self.line_no = line_no


class TraceDomainError(TraceParseError):
    """轨迹文件取值越界（如地址 ≥ K）"""

    def __init__(self, message: str, path: str, line_no: int, line: str = ""):
        super().__init__(message, path, line_no, line)
        self.error_type = ErrorType.DOMAIN_ERROR


class TraceStructureError(TraceParseError):
    """轨迹文件结构错误（无块、顺序错乱等）"""

    def __init__(self, message: str, path: str, line_no: int = 0, line: str = ""):
        super().__init__(message, path, line_no, line)
        self.error_type = ErrorType.STRUCTURE_ERROR


class AnalyticsDomainError(CoherenceSimError, ValueError):
    """解析模型定义域错误"""

    def __init__(self, message: str, **context: Any):
        super().__init__(
            message=message,
            error_type=ErrorType.DOMAIN_ERROR,
            severity=ErrorSeverity.HIGH,
            context=context
        )


class SegmentIndexError(CoherenceSimError, IndexError):
    """断点/段索引越界"""

    def __init__(self, message: str, index: int, lower: int, upper: int):
        super().__init__(
            message=message,
            error_type=ErrorType.INDEX_ERROR,
            severity=ErrorSeverity.HIGH,
            context={"index": index, "lower": lower, "upper": upper}
        )


class PlanError(CoherenceSimError):
    """卸载计划或种子列表错误"""

    def __init__(self, message: str, **context: Any):
        super().__init__(
            message=message,
            error_type=ErrorType.PLAN_ERROR,
            severity=ErrorSeverity.HIGH,
            context=context
        )


class ProtocolError(CoherenceSimError):
    """签名/校验协议使用错误"""

    def __init__(self, message: str, **context: Any):
        super().__init__(
            message=message,
            error_type=ErrorType.PROTOCOL_ERROR,
            severity=ErrorSeverity.MEDIUM,
            context=context
        )


class ReportIOError(CoherenceSimError):
    """报告或轨迹文件读写错误"""

    def __init__(self, message: str, path: str, original_error: Optional[Exception] = None):
        super().__init__(
            message=f"{message}: {path}",
            error_type=ErrorType.IO_ERROR,
            severity=ErrorSeverity.HIGH,
            original_error=original_error,
            context={"path": path}
        )
        self.path = path


class AcceptanceError(CoherenceSimError):
    """验收阈值未通过"""

    def __init__(self, message: str, failed_checks: Optional[list] = None):
        super().__init__(
            message=message,
            error_type=ErrorType.ACCEPTANCE_ERROR,
            severity=ErrorSeverity.MEDIUM,
            context={"failed_checks": failed_checks or []}
        )


class ErrorHandler:
    """错误处理器"""

    EXIT_OK = 0
    EXIT_CONFIG = 1
    EXIT_IO = 2
    EXIT_ACCEPTANCE = 3

    @staticmethod
    def handle_io_error(error: Exception, path: str, action: str = "文件读写失败") -> ReportIOError:
        """把底层 OSError 包装为 ReportIOError"""
        if isinstance(error, ReportIOError):
            return error
        return ReportIOError(f"{action} ({error.__class__.__name__}: {error})", path=str(path), original_error=error)

    @staticmethod
    def handle_validation_error(error: Exception, prefix: str = "") -> ConfigError:
        """把 pydantic ValidationError 转换为带键路径的 ConfigError"""
        errors = getattr(error, "errors", None)
        if callable(errors):
            details = errors()
            if details:
                loc = ".".join(str(part) for part in details[0].get("loc", ()))
                key = f"{prefix}.{loc}" if prefix and loc else (prefix or loc)
                return ConfigError(
                    f"配置值不合法: {key}: {details[0].get('msg', str(error))}",
                    config_key=key,
                    original_error=error
                )
        return ConfigError(f"配置值不合法: {error}", config_key=prefix or None, original_error=error)

    @staticmethod
    def exit_code(error: Exception) -> int:
        """CLI退出码：1 配置/输入错误，2 I/O错误，3 验收失败"""
        if isinstance(error, AcceptanceError):
            return ErrorHandler.EXIT_ACCEPTANCE
        if isinstance(error, ReportIOError):
            return ErrorHandler.EXIT_IO
        if isinstance(error, (OSError,)) and not isinstance(error, CoherenceSimError):
            return ErrorHandler.EXIT_IO
        return ErrorHandler.EXIT_CONFIG

    @staticmethod
    def get_user_friendly_message(error: CoherenceSimError) -> str:
        """获取用户友好的错误消息"""
        if isinstance(error, ConfigError):
            key = f"（键: {error.config_key}）" if error.config_key else ""
            return f"配置错误{key}：{error.message}\n请检查配置文件或命令行参数。"
        elif isinstance(error, TraceStructureError):
            return f"轨迹文件结构错误：{error.message}"
        elif isinstance(error, TraceDomainError):
            return f"轨迹文件取值越界：{error.message}"
        elif isinstance(error, TraceParseError):
            return f"轨迹文件解析错误：{error.message}\n格式应为 <SIDE>,<R|W>,<address>。"
        elif isinstance(error, ReportIOError):
            return f"文件读写错误：{error.message}"
        elif isinstance(error, AcceptanceError):
            failed = ", ".join(error.context.get("failed_checks", []))
            return f"验收未通过：{error.message}" + (f"\n未通过项：{failed}" if failed else "")
        else:
            return f"运行失败：{error.message}"


def get_user_friendly_message(error: CoherenceSimError) -> str:
    """获取用户友好的错误消息（便捷函数）"""
    return ErrorHandler.get_user_friendly_message(error)
