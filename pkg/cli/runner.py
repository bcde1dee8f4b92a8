"""Конфигурация запуска, диспетчеризация команд и запись результата."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from core import __version__
from core.config import SCHEMA_VERSION, SUITES_PATH
from core.errors import ConfigError, OperatorError
from core.grid import Mesh, random_function
from core.operators import BILAPLACIAN_MIN_NODES, OperatorKind, OperatorSpec
from core.utils import gather_limited
from services.quotient_service import (
    DEFAULT_MAX_ITER,
    DEFAULT_REL_TOL,
    DEFAULT_RESIDUAL_TOL,
    DEFAULT_RESTARTS,
    MinimizeConfig,
    QuotientProblem,
    minimize_quotient,
    p0p1_eigen,
)
from services.relations_service import (
    lambda_bilap_density,
    lambda_bilap_grad,
    verify_coercivity,
    verify_fully_nonlinear_power,
    verify_ineq_3_3,
    verify_prop1_part2,
)
from services.scaling_service import ray_scan
from services.solver_service import RHS_TAGS, SolveConfig, lambda_sweep, make_rhs

logger = logging.getLogger(__name__)

SUITES = ("prop1", "ineq", "power", "bilap", "coercivity", "all")
BILAPLACIAN_SUITES = ("power", "bilap", "all")
DEFAULT_RADII = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]


def _split_numbers(value: Any) -> Any:
    if isinstance(value, str):
        return [float(part) for part in value.replace(";", ",").split(",") if part.strip()]
    if isinstance(value, (int, float)):
        return [float(value)]
    return value


class RunConfig(BaseModel):
    """Все параметры запуска; ошибки проверки называют поле."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    command: Literal["eig", "scan", "verify", "solve", "report"]
    dim: int = 1
    n: int = 128
    extent: List[float] = Field(default_factory=lambda: [1.0])
    F: str = "plaplacian:p=2"
    G: str = "power:q=2"
    p: Optional[float] = None
    p0: Optional[float] = None
    p1: Optional[float] = None
    lam: Optional[float] = Field(default=None, alias="lambda")
    lambdas: List[float] = Field(default_factory=list)
    radii: List[float] = Field(default_factory=lambda: list(DEFAULT_RADII))
    seed: int = 0
    tol: float = DEFAULT_RESIDUAL_TOL
    rel_tol: float = DEFAULT_REL_TOL
    restarts: int = DEFAULT_RESTARTS
    max_iter: int = DEFAULT_MAX_ITER
    suite: str = Field(default="all", validate_default=True)
    rhs: str = "constant"
    amplitude: float = 1.0
    trials: int = 100
    out: Optional[str] = None
    format: Literal["json", "csv"] = "json"
    input: Optional[str] = None

    @field_validator("extent", "lambdas", "radii", mode="before")
    @classmethod
    def _lists(cls, value: Any) -> Any:
        return _split_numbers(value)

    @field_validator("dim")
    @classmethod
    def _dim(cls, value: int) -> int:
        if value not in (1, 2):
            raise ValueError(f"dim must be 1 or 2 (got {value})")
        return value

    @field_validator("n")
    @classmethod
    def _n(cls, value: int) -> int:
        if value < 3:
            raise ValueError(f"n must be >= 3 (got {value})")
        return value

    @field_validator("extent")
    @classmethod
    def _extent(cls, value: List[float]) -> List[float]:
        if not value or any(length <= 0 for length in value):
            raise ValueError("extent values must be positive")
        return value

    @field_validator("p")
    @classmethod
    def _p(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value < 2:
            raise ValueError(f"p must be >= 2 (got {value:g})")
        return value

    @field_validator("p0")
    @classmethod
    def _p0(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value < 2:
            raise ValueError(f"p0 must be >= 2 (got {value:g})")
        return value

    @field_validator("p1")
    @classmethod
    def _p1(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value < 0:
            raise ValueError(f"p1 must be >= 0 (got {value:g})")
        return value

    @field_validator("F", "G")
    @classmethod
    def _operator(cls, value: str, info: ValidationInfo) -> str:
        try:
            spec = OperatorSpec.parse(value)
        except OperatorError as exc:
            raise ValueError(str(exc))
        n = info.data.get("n")
        if spec.kind is OperatorKind.POWERED_BILAPLACIAN and n is not None and n < BILAPLACIAN_MIN_NODES:
            raise ValueError(f"bilaplacian needs n >= {BILAPLACIAN_MIN_NODES} (got {n})")
        return value.strip()

    @field_validator("tol", "rel_tol")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"tolerance must be > 0 (got {value:g})")
        return value

    @field_validator("restarts", "max_iter", "trials")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1 (got {value})")
        return value

    @field_validator("lambdas")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("lambdas must be strictly increasing")
        return value

    @field_validator("radii")
    @classmethod
    def _radii(cls, value: List[float]) -> List[float]:
        if len(value) < 3 or any(r <= 0 for r in value):
            raise ValueError("radii needs at least 3 positive values")
        return value

    @field_validator("suite")
    @classmethod
    def _suite(cls, value: str, info: ValidationInfo) -> str:
        if value not in SUITES:
            raise ValueError(f"suite must be one of {', '.join(SUITES)} (got {value!r})")
        n = info.data.get("n")
        verify = info.data.get("command") == "verify"
        if verify and value in BILAPLACIAN_SUITES and n is not None and n < BILAPLACIAN_MIN_NODES:
            raise ValueError(f"suite {value} needs n >= {BILAPLACIAN_MIN_NODES} (got {n})")
        return value

    @field_validator("rhs")
    @classmethod
    def _rhs(cls, value: str) -> str:
        if value not in RHS_TAGS:
            raise ValueError(f"rhs must be one of {', '.join(RHS_TAGS)} (got {value!r})")
        return value

    @model_validator(mode="after")
    def _consistency(self) -> "RunConfig":
        if len(self.extent) not in (1, self.dim):
            raise ValueError(f"extent needs 1 or {self.dim} values")
        if self.p is not None and self.p0 is not None and self.p1 is not None:
            if self.p0 + self.p1 != self.p:
                raise ValueError(f"p0 + p1 must equal p ({self.p0:g} + {self.p1:g} != {self.p:g})")
        if self.command == "report" and not self.input:
            raise ValueError("report needs --input")
        if self.command == "solve" and self.lam is None and not self.lambdas:
            raise ValueError("solve needs --lambda or --lambdas")
        return self

    # --- производные объекты ---

    def mesh(self) -> Mesh:
        extents = self.extent * self.dim if len(self.extent) == 1 else self.extent
        return Mesh(n=(self.n,) * self.dim, extents=tuple(extents))

    def minimize_config(self) -> MinimizeConfig:
        return MinimizeConfig(
            max_iter=self.max_iter,
            rel_tol=self.rel_tol,
            residual_tol=self.tol,
            seed=self.seed,
            restarts=self.restarts,
        )

    def exponents(self) -> tuple[float, float]:
        """(p0, p1) для solve/coercivity: по умолчанию p0 = p, p1 = 0."""
        p1 = self.p1 if self.p1 is not None else 0.0
        if self.p0 is not None:
            return self.p0, p1
        return (self.p if self.p is not None else 2.0) - p1, p1

    def echo(self) -> dict:
        return self.model_dump(by_alias=True, mode="json")


def format_validation_error(exc: ValidationError) -> List[str]:
    lines = []
    for error in exc.errors():
        field = ".".join(str(part) for part in error["loc"]) or "config"
        message = error["msg"].removeprefix("Value error, ")
        flag = "--" + field.replace("_", "-") if field != "config" else field
        lines.append(f"{flag}: {message}")
    return lines


def read_config_file(path: str | Path) -> Dict[str, str]:
    """Файл вида ``key = value`` по строке; ``#`` — комментарий."""
    values: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{number}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def load_suites(path: Path = SUITES_PATH) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    unknown = set(data) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown suites in {path}: {', '.join(sorted(unknown))}")
    return data


@dataclass
class RunRecord:
    command: str
    config: Dict[str, Any]
    results: Any
    required_converged: bool = True
    version: str = __version__
    timestamp: str = ""
    wall_seconds: float = 0.0
    schema: int = SCHEMA_VERSION

    def to_payload(self) -> dict:
        return {
            "schema": self.schema,
            "version": self.version,
            "command": self.command,
            "config": self.config,
            "results": self.results,
            "required_converged": self.required_converged,
            "timestamp": self.timestamp,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "RunRecord":
        try:
            return cls(
                command=payload["command"],
                config=payload["config"],
                results=payload["results"],
                required_converged=payload.get("required_converged", True),
                version=payload.get("version", __version__),
                timestamp=payload.get("timestamp", ""),
                wall_seconds=payload.get("wall_seconds", 0.0),
                schema=payload.get("schema", SCHEMA_VERSION),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"not a run record: missing {exc}")


# --- команды ---


def _run_eig(config: RunConfig) -> tuple[Any, bool]:
    problem = QuotientProblem(OperatorSpec.parse(config.F), OperatorSpec.parse(config.G), config.mesh())
    result = minimize_quotient(problem, config.minimize_config())
    return result.to_payload(), result.converged


def _run_scan(config: RunConfig) -> tuple[Any, bool]:
    mesh = config.mesh()
    problem = QuotientProblem(OperatorSpec.parse(config.F), OperatorSpec.parse(config.G), mesh)
    u0 = random_function(mesh, np.random.default_rng(config.seed))
    return ray_scan(problem, u0, config.radii).to_payload(), True


def _suite_cases(config: RunConfig, suites: Dict[str, Any]) -> List[tuple[str, tuple]]:
    names = [name for name in SUITES if name != "all"] if config.suite == "all" else [config.suite]
    cases: List[tuple[str, tuple]] = []
    for name in names:
        grid = suites.get(name, {})
        if name in ("prop1", "power", "bilap"):
            values = [config.p] if config.p is not None else grid.get("p", [])
            for p in values:
                if name == "bilap":
                    cases.append(("bilap_grad", (float(p),)))
                    cases.append(("bilap_density", (float(p),)))
                else:
                    cases.append((name, (float(p),)))
        else:
            if config.p0 is not None:
                pairs = [config.exponents()]
            else:
                pairs = [tuple(map(float, pair)) for pair in grid.get("pairs", [])]
                if config.p is not None:
                    pairs = [pair for pair in pairs if pair[0] + pair[1] == config.p]
            fraction = float(grid.get("lambda_fraction", 0.5))
            for p0, p1 in pairs:
                cases.append((name, (p0, p1, fraction) if name == "coercivity" else (p0, p1)))
    return cases


def _run_case(name: str, args: tuple, config: RunConfig) -> dict:
    mesh = config.mesh()
    minimize = config.minimize_config()
    if name == "prop1":
        report = verify_prop1_part2(args[0], mesh, minimize)
    elif name == "power":
        report = verify_fully_nonlinear_power(args[0], mesh, minimize)
    elif name == "bilap_grad":
        report = lambda_bilap_grad(args[0], mesh, minimize)
    elif name == "bilap_density":
        report = lambda_bilap_density(args[0], mesh, minimize)
    elif name == "ineq":
        report = verify_ineq_3_3(args[0], args[1], mesh, minimize)
    else:
        p0, p1, fraction = args
        eigen = p0p1_eigen(p0, p1, mesh, minimize)
        report = verify_coercivity(
            p0, p1, fraction * eigen.lam, mesh, config.trials, minimize, eigen=eigen
        )
    return report.to_payload()


def _run_verify(config: RunConfig) -> tuple[Any, bool]:
    cases = _suite_cases(config, load_suites())
    jobs = [(lambda name=name, args=args: _run_case(name, args, config)) for name, args in cases]
    reports = gather_limited(jobs)
    converged = all(report["details"].get("converged", True) for report in reports)
    return reports, converged


def _run_solve(config: RunConfig) -> tuple[Any, bool]:
    mesh = config.mesh()
    p0, p1 = config.exponents()
    h = make_rhs(mesh, config.rhs, config.amplitude, config.seed)
    lambdas = config.lambdas or [config.lam]
    table = lambda_sweep(
        p0,
        p1,
        lambdas,
        h,
        SolveConfig(),
        rhs_tag=config.rhs,
        eigen_config=config.minimize_config(),
    )
    return table.to_payload(), table.theorem_consistent


def _run_report(config: RunConfig) -> RunRecord:
    with open(config.input, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config.input}: not valid JSON ({exc.msg})")
    return RunRecord.from_payload(payload)


_DISPATCH = {
    "eig": _run_eig,
    "scan": _run_scan,
    "verify": _run_verify,
    "solve": _run_solve,
}


def run(config: RunConfig) -> RunRecord:
    """Выполняет команду и, если задан ``out``, атомарно пишет запись."""
    from cli.emit import emit, write_atomic

    if config.command == "report":
        record = _run_report(config)
    else:
        started = time.perf_counter()
        results, converged = _DISPATCH[config.command](config)
        record = RunRecord(
            command=config.command,
            config=config.echo(),
            results=results,
            required_converged=converged,
            timestamp=datetime.now(timezone.utc).isoformat(),
            wall_seconds=time.perf_counter() - started,
        )
        logger.info("Команда %s выполнена за %.2f с", config.command, record.wall_seconds)

    if config.out:
        write_atomic(Path(config.out), emit(record, config.format))
    return record


__all__ = [
    "SUITES",
    "RunConfig",
    "RunRecord",
    "format_validation_error",
    "read_config_file",
    "load_suites",
    "run",
]
