"""
Реестр запусков поверх SQLAlchemy: индекс запусков, эпизодов, контрольных
точек и оценок. Ошибки базы не прерывают обучение: они логируются,
а функция возвращает None или False.
"""

from __future__ import annotations

import logging
from datetime import datetime, timezone

UTC = timezone.utc

from db import get_session, init_db
from models import CheckpointRecord, EpisodeRecord, EvaluationRecord, Run, RunKind, RunStatus

logger = logging.getLogger(__name__)


def get_or_create_run(database_url: str, name: str, seed: int, config_text: str, kind: str = RunKind.TRAIN) -> Run | None:
    """
    Получить запуск по имени или создать новый.

    Args:
        database_url: URL реестра
        name: Уникальное имя запуска
        seed: Зерно генераторов
        config_text: Полный текст конфигурации
        kind: Тип запуска

    Returns:
        Объект Run или None при ошибке базы
    """
    session = None
    try:
        init_db(database_url)
        session = get_session(database_url)
        run = session.query(Run).filter_by(name=name).first()
        if run:
            run.status = RunStatus.RUNNING
            run.config_text = config_text
            run.updated_at = datetime.now(UTC)
            session.commit()
            session.refresh(run)
            return run

        run = Run(name=name, kind=kind, seed=seed, config_text=config_text, status=RunStatus.RUNNING)
        session.add(run)
        session.commit()
        session.refresh(run)
        logger.debug(f"Запуск {name} зарегистрирован (id={run.id})")
        return run
    except Exception as e:
        if session is not None:
            session.rollback()
        logger.error(f"Ошибка при регистрации запуска {name}: {e}", exc_info=True)
        return None
    finally:
        if session is not None:
            session.close()


def record_episode(database_url: str, run_id: int, metrics) -> bool:
    """Записать строку метрик эпизода (EpisodeMetrics)."""
    session = get_session(database_url)
    try:
        session.add(
            EpisodeRecord(
                run_id=run_id,
                episode=metrics.episode_index,
                success=metrics.success,
                cumulative_successes=metrics.cumulative_successes,
                mean_reward=metrics.mean_reward,
                mean_max_q=metrics.mean_max_q,
                length=metrics.length,
                epsilon=metrics.epsilon,
            )
        )
        session.commit()
        return True
    except Exception as e:
        session.rollback()
        logger.error(f"Ошибка при записи эпизода {metrics.episode_index}: {e}", exc_info=True)
        return False
    finally:
        session.close()


def truncate_episodes(database_url: str, run_id: int, keep_up_to: int) -> int:
    """
    Удалить эпизоды после keep_up_to (при возобновлении с контрольной точки).

    Returns:
        Количество удалённых записей (0 при ошибке)
    """
    session = get_session(database_url)
    try:
        count = (
            session.query(EpisodeRecord)
            .filter(EpisodeRecord.run_id == run_id, EpisodeRecord.episode > keep_up_to)
            .delete(synchronize_session=False)
        )
        session.commit()
        if count:
            logger.info(f"Удалено {count} эпизодов после {keep_up_to}")
        return count
    except Exception as e:
        session.rollback()
        logger.error(f"Ошибка при удалении эпизодов: {e}", exc_info=True)
        return 0
    finally:
        session.close()


def record_checkpoint(database_url: str, run_id: int, episode: int, global_step: int, path: str, checksum: str) -> bool:
    session = get_session(database_url)
    try:
        session.add(
            CheckpointRecord(run_id=run_id, episode=episode, global_step=global_step, path=path, checksum=checksum)
        )
        session.commit()
        return True
    except Exception as e:
        session.rollback()
        logger.error(f"Ошибка при записи контрольной точки: {e}", exc_info=True)
        return False
    finally:
        session.close()


def record_evaluation(
    database_url: str,
    run_id: int,
    environment: str,
    agent: str,
    episodes: int,
    epsilon: float,
    success_rate: float,
) -> bool:
    session = get_session(database_url)
    try:
        session.add(
            EvaluationRecord(
                run_id=run_id,
                environment=environment,
                agent=agent,
                episodes=episodes,
                epsilon=epsilon,
                success_rate=success_rate,
            )
        )
        session.commit()
        return True
    except Exception as e:
        session.rollback()
        logger.error(f"Ошибка при записи оценки: {e}", exc_info=True)
        return False
    finally:
        session.close()


def set_run_status(database_url: str, run_id: int, status: str) -> bool:
    session = get_session(database_url)
    try:
        run = session.get(Run, run_id)
        if not run:
            return False
        run.status = status
        run.updated_at = datetime.now(UTC)
        session.commit()
        return True
    except Exception as e:
        session.rollback()
        logger.error(f"Ошибка при смене статуса запуска: {e}", exc_info=True)
        return False
    finally:
        session.close()


def get_run_episodes(database_url: str, run_id: int) -> list[EpisodeRecord]:
    """Эпизоды запуска по возрастанию номера."""
    session = get_session(database_url)
    try:
        return (
            session.query(EpisodeRecord)
            .filter_by(run_id=run_id)
            .order_by(EpisodeRecord.episode)
            .all()
        )
    finally:
        session.close()


def list_runs(database_url: str, kind: str | None = None) -> list[Run]:
    """Все запуски (или только заданного типа) по времени создания."""
    init_db(database_url)
    session = get_session(database_url)
    try:
        query = session.query(Run)
        if kind:
            query = query.filter_by(kind=kind)
        return query.order_by(Run.created_at, Run.id).all()
    finally:
        session.close()


def get_run_evaluations(database_url: str, run_id: int) -> list[EvaluationRecord]:
    session = get_session(database_url)
    try:
        return session.query(EvaluationRecord).filter_by(run_id=run_id).order_by(EvaluationRecord.id).all()
    finally:
        session.close()
