from __future__ import annotations

"""
Модели реестра запусков.

Таблицы:
- runs: запуски обучения и оценки
- episodes: строка метрик на каждый эпизод обучения
- checkpoints: сохранённые контрольные точки
- evaluations: результаты оценки агента в окружении
"""

from datetime import datetime, timezone

UTC = timezone.utc

from sqlalchemy import Boolean, DateTime, Float, ForeignKey, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import Mapped, mapped_column, relationship

from db import Base


def utc_now() -> datetime:
    """Возвращает текущее время в UTC."""
    return datetime.now(UTC)


class RunStatus:
    """Простые статусы запуска."""

    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class RunKind:
    TRAIN = "train"
    EVAL = "eval"
    CROSS_EVAL = "cross-eval"


class Run(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, index=True)
    name: Mapped[str] = mapped_column(String(255), unique=True, index=True, nullable=False)
    kind: Mapped[str] = mapped_column(String(32), default=RunKind.TRAIN, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    config_text: Mapped[str] = mapped_column(Text, nullable=False)
    status: Mapped[str] = mapped_column(String(32), default=RunStatus.RUNNING, nullable=False, index=True)

    created_at: Mapped[datetime] = mapped_column(DateTime, default=utc_now, nullable=False)
    updated_at: Mapped[datetime] = mapped_column(DateTime, default=utc_now, onupdate=utc_now, nullable=False)

    episodes: Mapped[list["EpisodeRecord"]] = relationship(
        "EpisodeRecord",
        back_populates="run",
        cascade="all, delete-orphan",
        order_by="EpisodeRecord.episode",
    )

    checkpoints: Mapped[list["CheckpointRecord"]] = relationship(
        "CheckpointRecord",
        back_populates="run",
        cascade="all, delete-orphan",
    )

    evaluations: Mapped[list["EvaluationRecord"]] = relationship(
        "EvaluationRecord",
        back_populates="run",
        cascade="all, delete-orphan",
    )


class EpisodeRecord(Base):
    __tablename__ = "episodes"
    __table_args__ = (UniqueConstraint("run_id", "episode", name="uq_episode_run"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True, index=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), nullable=False, index=True)
    episode: Mapped[int] = mapped_column(Integer, nullable=False)
    success: Mapped[bool] = mapped_column(Boolean, nullable=False)
    cumulative_successes: Mapped[int] = mapped_column(Integer, nullable=False)
    mean_reward: Mapped[float] = mapped_column(Float, nullable=False)
    mean_max_q: Mapped[float] = mapped_column(Float, nullable=False)
    length: Mapped[int] = mapped_column(Integer, nullable=False)
    epsilon: Mapped[float] = mapped_column(Float, nullable=False)

    run: Mapped["Run"] = relationship("Run", back_populates="episodes")


class CheckpointRecord(Base):
    __tablename__ = "checkpoints"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, index=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), nullable=False, index=True)
    episode: Mapped[int] = mapped_column(Integer, nullable=False)
    global_step: Mapped[int] = mapped_column(Integer, nullable=False)
    path: Mapped[str] = mapped_column(String(1024), nullable=False)
    # sha256 параметров online-сети
    checksum: Mapped[str] = mapped_column(String(64), nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=utc_now, nullable=False)

    run: Mapped["Run"] = relationship("Run", back_populates="checkpoints")


class EvaluationRecord(Base):
    __tablename__ = "evaluations"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, index=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), nullable=False, index=True)
    environment: Mapped[str] = mapped_column(String(64), nullable=False)
    agent: Mapped[str] = mapped_column(String(1024), nullable=False)
    episodes: Mapped[int] = mapped_column(Integer, nullable=False)
    epsilon: Mapped[float] = mapped_column(Float, nullable=False)
    success_rate: Mapped[float] = mapped_column(Float, nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=utc_now, nullable=False)

    run: Mapped["Run"] = relationship("Run", back_populates="evaluations")
