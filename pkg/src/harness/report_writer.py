"""
报告输出 - CSV / JSON 表格与溯源旁注
"""
import json
import math
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type, TypeVar, Union

import pandas as pd

from ..config.config import ReportFormat
from ..utils.exceptions import ErrorHandler, PlanError
from ..utils.logger import get_logger
from .experiment_runner import SweepRow


T = TypeVar("T")

FLOAT_FORMAT = "%.6f"


def rows_to_frame(rows: Sequence[Any]) -> pd.DataFrame:
    """数据类行 -> DataFrame，列顺序与字段顺序一致"""
    if not rows:
        raise PlanError("报告表为空")
    columns = [f.name for f in fields(rows[0])]
    return pd.DataFrame([asdict(row) for row in rows], columns=columns)


def _json_record(row: Any) -> Dict[str, Any]:
    """NaN 与无穷写成 null"""
    return {
        key: None if isinstance(value, float) and not math.isfinite(value) else value
        for key, value in asdict(row).items()
    }


def format_table(rows: Sequence[Any], fmt: ReportFormat) -> str:
    """序列化为文本；同样的行总是得到同样的字节"""
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.JSON:
        if not rows:
            raise PlanError("报告表为空")
        records = [_json_record(row) for row in rows]
        return json.dumps(records, ensure_ascii=False, indent=2, allow_nan=False) + "\n"
    return rows_to_frame(rows).to_csv(
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
        na_rep="nan"
    )


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise ErrorHandler.handle_io_error(e, str(path), "报告写出失败")


def emit_report(
    table: Sequence[Any],
    fmt: Union[ReportFormat, str],
    path: Union[str, Path, None] = None
) -> str:
    """
    写出报告表

    Args:
        table: 数据类行列表（通常为 SweepRow）
        fmt: csv 或 json
        path: 输出路径；为 None 时只返回文本

    Returns:
        str: 写出的文本
    """
    fmt = ReportFormat(fmt)
    text = format_table(table, fmt)
    if path is not None:
        path = Path(path)
        _write_text(path, text)
        get_logger().log_report_written(str(path), len(table), fmt.value)
    return text


def metadata_path(path: Union[str, Path]) -> Path:
    """报告旁注路径 <out>.meta.json"""
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_metadata(path: Union[str, Path], provenance: Dict[str, Any]) -> Path:
    """把全部参数写到报告旁注，保持报告本身只含表格"""
    target = metadata_path(path)
    _write_text(target, json.dumps(provenance, ensure_ascii=False, indent=2, sort_keys=True, default=str) + "\n")
    return target


def _restore(row_type: Type[T], record: Dict[str, Any]) -> T:
    values = {}
    for f in fields(row_type):
        value = record[f.name]
        if f.type in (bool, "bool") and isinstance(value, str):
            value = value.strip().lower() == "true"
        elif f.type in (int, "int"):
            value = int(value)
        elif f.type in (float, "float"):
            value = float("nan") if value is None else float(value)
        elif f.type in (str, "str"):
            value = str(value)
        elif f.type in (bool, "bool"):
            value = bool(value)
        values[f.name] = value
    return row_type(**values)


def load_report(
    path: Union[str, Path],
    fmt: Optional[Union[ReportFormat, str]] = None,
    row_type: Type[T] = SweepRow
) -> List[T]:
    """读回报告表；格式缺省时按扩展名判断"""
    path = Path(path)
    if fmt is None:
        fmt = ReportFormat.JSON if path.suffix.lower() == ".json" else ReportFormat.CSV
    fmt = ReportFormat(fmt)
    try:
        if fmt == ReportFormat.JSON:
            records = json.loads(path.read_text(encoding="utf-8"))
        else:
            records = pd.read_csv(path).to_dict(orient="records")
    except OSError as e:
        raise ErrorHandler.handle_io_error(e, str(path), "报告读取失败")
    return [_restore(row_type, record) for record in records]
