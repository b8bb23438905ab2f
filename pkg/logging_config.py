"""
Конфигурация логирования для grasp_dqn.
"""

import logging
import logging.handlers
import os
import sys
import traceback
from pathlib import Path

# Настройка форматтеров
detailed_formatter = logging.Formatter(
    "%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s"
)

simple_formatter = logging.Formatter(
    "%(asctime)s - %(levelname)s - %(message)s"
)


def _service_name() -> str:
    """Имя сервиса для файлов логов: SERVICE_NAME или имя скрипта."""
    script_name = Path(sys.argv[0]).stem if len(sys.argv) > 0 and sys.argv[0] else "unknown"
    return os.getenv("SERVICE_NAME", script_name)


def _rotating_handler(path: Path, level: int) -> logging.Handler | None:
    """Файловый handler с ротацией (с обработкой ошибок доступа)."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.handlers.RotatingFileHandler(
            path,
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
    except (PermissionError, OSError) as e:
        print(f"Warning: Cannot create log file handler {path}: {e}")
        return None
    handler.setLevel(level)
    handler.setFormatter(detailed_formatter)
    return handler


def setup_logging(log_level: str = "INFO", log_dir: str | Path | None = None) -> logging.Logger:
    """
    Настройка логирования для приложения.

    Args:
        log_level: Уровень логирования (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Каталог для файлов логов; None - только консоль

    Returns:
        Logger instance
    """
    # Получаем числовое значение уровня логирования
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)

    # Очищаем существующие handlers (закрываем файлы от прошлых запусков)
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)
        handler.close()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(simple_formatter)
    root_logger.addHandler(console_handler)

    if log_dir is not None:
        service_name = _service_name()
        logs_dir = Path(log_dir)
        file_handler = _rotating_handler(logs_dir / f"{service_name}.log", logging.DEBUG)
        if file_handler:
            root_logger.addHandler(file_handler)
        error_handler = _rotating_handler(logs_dir / f"{service_name}_error.log", logging.ERROR)
        if error_handler:
            root_logger.addHandler(error_handler)

    logger = logging.getLogger("grasp_dqn")
    logger.setLevel(numeric_level)

    return logger


def log_startup_info(logger: logging.Logger, config) -> None:
    """Логирует информацию о запуске эксперимента."""
    logger.info("=" * 50)
    logger.info("GRASP DQN STARTING UP")
    logger.info("=" * 50)
    logger.info(f"Run name: {config.run.name}")
    logger.info(f"Seed: {config.run.seed}")
    logger.info(f"Output dir: {config.run.output_dir}")
    logger.info(f"Observation: {config.render.width}x{config.render.height}")
    logger.info(f"Controlled joints: {list(config.sim.controlled_joints)}")
    logger.info(f"Reset mode: {config.reset.mode.value}")
    logger.info(f"Replay capacity: {config.agent.replay_capacity}")
    logger.info(f"Log Level: {logging.getLevelName(logger.getEffectiveLevel())}")
    logger.info("=" * 50)


def log_error_with_context(logger: logging.Logger, error: Exception, context: str = "") -> None:
    """Логирует ошибку с дополнительным контекстом."""
    logger.error(f"{context}: {error}")
    logger.error(f"Error type: {type(error).__name__}")
    if error.__traceback__ is not None:
        tb = "".join(traceback.format_exception(type(error), error, error.__traceback__))
        logger.debug(f"Traceback: {tb}")
