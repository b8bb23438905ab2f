"""
Исключения grasp_dqn.

Библиотечный код бросает их, а точка входа (cli.main) перехватывает,
пишет в лог и завершает процесс с ненулевым кодом.
"""

from __future__ import annotations


class GraspDQNError(Exception):
    """Базовое исключение проекта."""


class ConfigError(GraspDQNError, ValueError):
    """Ошибка разбора или валидации конфигурации."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix = f"строка {line}: "
        elif field is not None:
            prefix = f"{field}: "
        super().__init__(f"{prefix}{message}")


class ShapeMismatchError(GraspDQNError, ValueError):
    """Размерности тензоров не согласованы."""


class InvalidActionError(GraspDQNError, ValueError):
    """Номер действия вне диапазона [0, 13]."""


class SimulationError(GraspDQNError):
    """Нарушено предусловие симулятора (например, эпизод уже исчерпан)."""


class CheckpointError(GraspDQNError):
    """Файл контрольной точки повреждён или не соответствует сети."""


class NonFiniteGradientError(GraspDQNError, ValueError):
    """Градиент содержит NaN или Inf."""


class ReplayUnderflowError(GraspDQNError, ValueError):
    """В буфере воспроизведения меньше переходов, чем размер батча."""
