"""Командная строка nlspec.

    python main.py eig --dim 1 --n 256 --F plaplacian:p=2 --G power:q=2
    python main.py scan --F plaplacian:p=3 --G power:q=2 --radii 0.5,1,2,4
    python main.py verify --suite prop1 --p 4 --n 256
    python main.py solve --p0 2 --p1 1 --lambdas 1,5,10 --rhs mode
    python main.py report --input run.json --format csv
"""

from __future__ import annotations

import sys
from typing import Any, Callable, Dict

import click
from pydantic import ValidationError

from cli.emit import FORMATS, emit
from cli.runner import SUITES, RunConfig, format_validation_error, read_config_file, run
from core import __version__
from core.errors import ConfigError, NlspecError
from services.solver_service import RHS_TAGS

EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3

# флаг -> ключ RunConfig
_OPTIONS = [
    (("--dim", "dim"), dict(type=int, help="Размерность области: 1 или 2.")),
    (("--n", "n"), dict(type=int, help="Внутренних узлов на ось.")),
    (("--extent", "extent"), dict(help="Длины сторон через запятую.")),
    (("--F", "F"), dict(help="Оператор F, например plaplacian:p=3.")),
    (("--G", "G"), dict(help="Оператор G, например power:q=2.")),
    (("--p", "p"), dict(type=float)),
    (("--p0", "p0"), dict(type=float)),
    (("--p1", "p1"), dict(type=float)),
    (("--lambda", "lambda"), dict(type=float, help="Одно значение λ для solve.")),
    (("--lambdas", "lambdas"), dict(help="Возрастающий список λ через запятую.")),
    (("--radii", "radii"), dict(help="Радиусы луча для scan.")),
    (("--seed", "seed"), dict(type=int)),
    (("--tol", "tol"), dict(type=float)),
    (("--rel-tol", "rel_tol"), dict(type=float)),
    (("--restarts", "restarts"), dict(type=int)),
    (("--max-iter", "max_iter"), dict(type=int)),
    (("--suite", "suite"), dict(type=click.Choice(SUITES))),
    (("--rhs", "rhs"), dict(type=click.Choice(RHS_TAGS))),
    (("--amplitude", "amplitude"), dict(type=float)),
    (("--trials", "trials"), dict(type=int)),
    (("--input", "input"), dict(type=click.Path(dir_okay=False))),
    (("--out", "out"), dict(type=click.Path(dir_okay=False))),
    (("--format", "format"), dict(type=click.Choice(FORMATS))),
]


def _run_options(func: Callable) -> Callable:
    for decls, kwargs in reversed(_OPTIONS):
        func = click.option(*decls, default=None, **kwargs)(func)
    return click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        help="Файл key = value; флаги важнее файла.",
    )(func)


def build_config(command: str, config_path: str | None, flags: Dict[str, Any]) -> RunConfig:
    values: Dict[str, Any] = read_config_file(config_path) if config_path else {}
    if "lam" in values:
        values["lambda"] = values.pop("lam")
    values.update({key: value for key, value in flags.items() if value is not None})
    values["command"] = command
    return RunConfig.model_validate(values)


def _execute(command: str, config_path: str | None, flags: Dict[str, Any]) -> None:
    try:
        config = build_config(command, config_path, flags)
    except ValidationError as exc:
        for line in format_validation_error(exc):
            click.echo(line, err=True)
        sys.exit(EXIT_INVALID)
    except ConfigError as exc:
        click.echo(f"--config: {exc}", err=True)
        sys.exit(EXIT_INVALID)

    try:
        record = run(config)
    except (OSError, NlspecError) as exc:
        click.echo(f"Error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)

    if config.out:
        click.echo(f"{command}: wrote {config.out}", err=True)
    else:
        click.echo(emit(record, config.format).decode("utf-8"), nl=False)

    if not record.required_converged:
        click.echo(f"{command}: a required computation did not converge", err=True)
        sys.exit(EXIT_NOT_CONVERGED)


@click.group()
@click.version_option(version=__version__, prog_name="nlspec")
def cli() -> None:
    """Первые собственные значения нелинейных операторов на сетках Дирихле."""


@cli.command()
@_run_options
def eig(config_path: str | None, **flags: Any) -> None:
    """Минимизирует отношение Рэлея ⟨F(u),u⟩/⟨G(u),u⟩."""
    _execute("eig", config_path, flags)


@cli.command()
@_run_options
def scan(config_path: str | None, **flags: Any) -> None:
    """Наклон отношения вдоль луча r·u₀."""
    _execute("scan", config_path, flags)


@cli.command()
@_run_options
def verify(config_path: str | None, **flags: Any) -> None:
    """Проверяет соотношения из набора --suite."""
    _execute("verify", config_path, flags)


@cli.command()
@_run_options
def solve(config_path: str | None, **flags: Any) -> None:
    """Решает f_λ(u) = h для списка λ."""
    _execute("solve", config_path, flags)


@cli.command()
@_run_options
def report(config_path: str | None, **flags: Any) -> None:
    """Переиздаёт сохранённую запись в формате --format."""
    _execute("report", config_path, flags)


__all__ = ["cli", "build_config", "EXIT_FAILURE", "EXIT_INVALID", "EXIT_NOT_CONVERGED"]
