from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from core.errors import ConfigError

FORMATS = ("json", "csv")
# 17 значащих цифр: вещественное читается обратно без потерь
REAL_FORMAT = ".16e"
_REAL_MARK = "__nlspec_real__"
_REAL_TOKEN = re.compile(r'"' + _REAL_MARK + r'([^"]+)"')

_EIG_COLUMNS = ["label", "lambda", "lambda_root", "residual", "stationarity", "iterations", "converged", "restart"]
_SCAN_COLUMNS = ["radius", "quotient", "quotient_exponent", "predicted_exponent", "element_independent", "classification"]
_VERIFY_COLUMNS = ["name", "lhs", "rhs", "relation", "tolerance", "relative", "passed", "converged"]
_SOLVE_COLUMNS = ["lambda", "converged", "residual", "iterations", "expected_solvable", "lambda_disc"]


def _marked(value: Any) -> Any:
    """Копия payload, где конечные float заменены строками-метками с полной точностью."""
    if isinstance(value, (np.generic, np.ndarray)):
        value = value.tolist() if isinstance(value, np.ndarray) else value.item()
    if isinstance(value, float):
        return _REAL_MARK + format(value, REAL_FORMAT) if math.isfinite(value) else value
    if isinstance(value, dict):
        return {key: _marked(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_marked(item) for item in value]
    return value


def _rows(command: str, results: Any) -> tuple[List[str], List[Dict[str, Any]]]:
    if command == "eig":
        return _EIG_COLUMNS, [results]
    if command == "scan":
        shared = {key: results[key] for key in _SCAN_COLUMNS[2:]}
        return _SCAN_COLUMNS, [{**sample, **shared} for sample in results["samples"]]
    if command == "verify":
        return _VERIFY_COLUMNS, [
            {**report, "converged": report.get("details", {}).get("converged")} for report in results
        ]
    if command == "solve":
        lambda_disc = results["metadata"].get("lambda_disc")
        return _SOLVE_COLUMNS, [{**row, "lambda_disc": lambda_disc} for row in results["rows"]]
    raise ConfigError(f"no CSV layout for command {command!r}")


def emit(record, fmt: str = "json") -> bytes:
    """Сериализует RunRecord; ключи JSON отсортированы, вещественные с 17 значащими цифрами."""
    if fmt == "json":
        text = json.dumps(_marked(record.to_payload()), sort_keys=True, indent=2)
        text = _REAL_TOKEN.sub(r"\1", text)
        return (text + "\n").encode("utf-8")
    if fmt == "csv":
        columns, rows = _rows(record.command, record.results)
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: "" if row.get(key) is None else row.get(key) for key in columns})
        return buffer.getvalue().encode("utf-8")
    raise ConfigError(f"unsupported format {fmt!r} (expected one of {', '.join(FORMATS)})")


def write_atomic(path: Path, data: bytes) -> None:
    """Пишет во временный файл рядом с ``path`` и переименовывает его."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


__all__ = ["FORMATS", "emit", "write_atomic"]
