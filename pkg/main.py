from __future__ import annotations

import logging

from cli.commands import cli
from core.config import get_log_level

# ------------------ Логирование ------------------

logging.basicConfig(
    level=get_log_level(),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)

# ------------------ Точка входа ------------------

# Запуск:
# python main.py eig --F plaplacian:p=3 --G power:q=3
if __name__ == "__main__":
    cli()
