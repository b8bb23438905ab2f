from __future__ import annotations

"""
Базовая настройка SQLAlchemy для реестра запусков.

По умолчанию реестр - SQLite-файл registry.db в корне вывода;
переменная окружения DATABASE_URL имеет приоритет.
"""

import os
from functools import lru_cache
from pathlib import Path

from sqlalchemy import Engine, create_engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

REGISTRY_FILENAME = "registry.db"


class Base(DeclarativeBase):
    """Базовый класс для всех моделей."""


def get_database_url(output_dir: str | Path | None = None, configured: str = "") -> str:
    """
    Получить URL базы данных.

    Args:
        output_dir: Корень вывода, где по умолчанию лежит registry.db
        configured: Значение registry.database_url из конфигурации

    Returns:
        URL для create_engine
    """
    db_url = os.getenv("DATABASE_URL") or configured
    if db_url:
        # Для относительных SQLite путей создаём каталог
        if db_url.startswith("sqlite:///"):
            db_path = Path(db_url.replace("sqlite:///", "", 1))
            try:
                db_path.parent.mkdir(parents=True, exist_ok=True)
            except PermissionError:
                db_path = Path.cwd() / db_path.name
                db_url = f"sqlite:///{db_path}"
        return db_url

    base = Path(output_dir) if output_dir is not None else Path.cwd()
    try:
        base.mkdir(parents=True, exist_ok=True)
    except PermissionError:
        base = Path.cwd()
    return f"sqlite:///{base / REGISTRY_FILENAME}"


@lru_cache(maxsize=None)
def get_engine(database_url: str) -> Engine:
    # echo=True можно включить при отладке, чтобы видеть SQL-запросы
    return create_engine(database_url, echo=False)


@lru_cache(maxsize=None)
def _session_factory(database_url: str) -> sessionmaker:
    # expire_on_commit=False оставляет данные в объектах после коммита
    return sessionmaker(bind=get_engine(database_url), autoflush=False, autocommit=False, expire_on_commit=False)


def get_session(database_url: str) -> Session:
    return _session_factory(database_url)()


def init_db(database_url: str) -> None:
    """Создаёт все таблицы, описанные через Base.metadata."""
    from models import CheckpointRecord, EpisodeRecord, EvaluationRecord, Run  # noqa: F401

    Base.metadata.create_all(bind=get_engine(database_url))
