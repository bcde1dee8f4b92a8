from __future__ import annotations


class NlspecError(Exception):
    """Базовое исключение библиотеки."""


class ConfigError(NlspecError, ValueError):
    pass


class MeshMismatchError(NlspecError, ValueError):
    pass


class OperatorError(NlspecError, ValueError):
    pass


class DegenerateDenominatorError(NlspecError, ArithmeticError):
    """G аннулирует функцию: ⟨G(u), u⟩ = 0."""


class ConvergenceError(NlspecError, RuntimeError):
    pass


__all__ = [
    "NlspecError",
    "ConfigError",
    "MeshMismatchError",
    "OperatorError",
    "DegenerateDenominatorError",
    "ConvergenceError",
]
