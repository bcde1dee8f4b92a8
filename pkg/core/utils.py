from __future__ import annotations

import asyncio
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

from core.config import get_threads

logger = logging.getLogger(__name__)

T = TypeVar("T")

# внутри рабочего потока gather_limited не порождает новых потоков
_IN_WORKER: contextvars.ContextVar[bool] = contextvars.ContextVar("nlspec_in_worker", default=False)


@dataclass(frozen=True)
class PowerLawFit:
    """Результат МНК-подгонки log y = slope·log x + intercept."""

    slope: float
    intercept: float
    residual: float


def loglog_fit(xs: Sequence[float], ys: Sequence[float]) -> PowerLawFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        raise ValueError("power-law fit needs at least 2 distinct abscissae")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive samples")

    log_x, log_y = np.log(x), np.log(y)
    slope, intercept = np.polyfit(log_x, log_y, 1)
    predicted = slope * log_x + intercept
    residual = float(np.sqrt(np.mean((log_y - predicted) ** 2)))
    return PowerLawFit(float(slope), float(intercept), residual)


async def _gather(jobs: Sequence[Callable[[], T]], limit: int) -> list[T]:
    semaphore = asyncio.Semaphore(limit)

    async def run_one(job: Callable[[], T]) -> T:
        async with semaphore:
            _IN_WORKER.set(True)
            return await asyncio.to_thread(job)

    # gather сохраняет порядок задач, а не порядок завершения
    return list(await asyncio.gather(*(run_one(job) for job in jobs)))


def gather_limited(jobs: Sequence[Callable[[], T]], limit: int | None = None) -> list[T]:
    """Запускает независимые блокирующие задачи в потоках, не более limit одновременно.

    Вложенный вызов из рабочего потока выполняет задачи по очереди, так что
    общее число потоков не превышает NLSPEC_THREADS.
    """
    if not jobs:
        return []
    limit = 1 if _IN_WORKER.get() else (limit or get_threads())
    if limit == 1 or len(jobs) == 1:
        return [job() for job in jobs]
    logger.debug("Запуск %s задач, параллельно не более %s", len(jobs), limit)
    return asyncio.run(_gather(jobs, limit))


__all__ = ["PowerLawFit", "loglog_fit", "gather_limited"]
