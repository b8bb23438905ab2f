"""
Оркестрация экспериментов: эпизоды, обучение с метриками и контрольными
точками, оценка по 50 эпизодам с ε = 0.1, перекрёстная оценка 2x2,
трасса функции ценности и дамп карт признаков.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from config import RunConfig, format_config, output_root, run_directory, write_resolved_config
from db import get_database_url
from dqn import (
    DQNAgent,
    Transition,
    decode_observations,
    encode_observation,
    load_agent,
    save_agent,
    select_action,
)
from exceptions import CheckpointError, ConfigError
from models import RunKind, RunStatus
import registry
from renderer import render, write_pgm
from sim import (
    CLOSE_GRIPPER,
    N_ACTIONS,
    OPEN_GRIPPER,
    CubeResample,
    ResetMode,
    ResetSpec,
    Termination,
    WorldState,
    apply_action,
    gripper_cube_distance,
    gripper_point,
    reset,
    step,
)
from tensor_nn import NetworkParams, conv_activations

logger = logging.getLogger(__name__)

METRICS_FILENAME = "metrics.csv"
METRICS_COLUMNS = ("episode", "success", "cumulative_successes", "mean_reward", "mean_max_q", "length", "epsilon")
TRACE_COLUMNS = ("frame", "max_q", "reward")
CHECKPOINT_DIR = "checkpoints"

# строки - окружение, столбцы - агент; справочные значения, не цель приёмки
REFERENCE_MATRIX = {
    ("A", "A"): 0.56,
    ("A", "B"): 0.64,
    ("B", "A"): 0.02,
    ("B", "B"): 0.52,
}


class EpisodeMode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


# --- окружение ------------------------------------------------------------


@dataclass(frozen=True)
class StepOutcome:
    codes: np.ndarray
    reward: float
    status: Termination


class Environment:
    """
    Сцена с рендерингом: reset/step возвращают 8-битные кадры.

    В режиме Randomized с cube_resample = on_success позиция кубика
    сохраняется между эпизодами до первого успеха.
    """

    def __init__(self, config: RunConfig, rng: np.random.Generator, reset_spec: ResetSpec | None = None):
        self.chain = config.chain
        self.reset_spec = reset_spec or config.reset
        self.sim = config.sim
        self.camera = config.camera
        self.render_spec = config.render
        self.rng = rng
        self.world: WorldState | None = None
        self.cube_position: tuple[float, float, float] | None = None
        self.last_success = False

    def reseed(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.cube_position = None
        self.last_success = False

    def _keep_cube(self) -> bool:
        spec = self.reset_spec
        return (
            spec.mode == ResetMode.RANDOMIZED
            and spec.cube_resample == CubeResample.ON_SUCCESS
            and self.cube_position is not None
            and not self.last_success
        )

    def reset(self) -> np.ndarray:
        keep = self.cube_position if self._keep_cube() else None
        self.world = reset(self.reset_spec, self.rng, self.chain, self.sim, cube_position=keep)
        if not self.reset_spec.start_grasped:
            self.cube_position = self.world.cube.position
        self.last_success = False
        return self.observe()

    def observe(self) -> np.ndarray:
        if self.world is None:
            raise RuntimeError("окружение не сброшено")
        observation = render(self.world, self.chain, self.camera, spec=self.render_spec)
        return encode_observation(observation.pixels)

    def step(self, action: int) -> StepOutcome:
        result = step(self.world, self.chain, action, self.reset_spec, self.sim)
        self.world = result.next
        if result.status == Termination.SUCCESS:
            self.last_success = True
        return StepOutcome(codes=self.observe(), reward=result.reward, status=result.status)

    def state_record(self) -> dict[str, str]:
        return {
            "env.rng": json.dumps(self.rng.bit_generator.state, sort_keys=True),
            "env.cube_position": json.dumps(self.cube_position),
            "env.last_success": "true" if self.last_success else "false",
        }

    def restore(self, record: dict[str, str]) -> None:
        try:
            self.rng.bit_generator.state = json.loads(record["env.rng"])
            position = json.loads(record["env.cube_position"])
            self.cube_position = tuple(position) if position is not None else None
            self.last_success = record["env.last_success"] == "true"
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"состояние окружения в сайдкаре повреждено ({e})") from e


# --- политики -------------------------------------------------------------


class Policy(Protocol):
    """Оценки 14 действий; argmax - жадное действие."""

    reports_q: bool

    def bind(self, env: Environment) -> None: ...

    def action_scores(self, codes: np.ndarray) -> np.ndarray: ...


class QPolicy:
    """Жадная политика по Q-сети (параметры только читаются)."""

    reports_q = True

    def __init__(self, params: NetworkParams):
        self.params = params

    def bind(self, env: Environment) -> None:
        pass

    def action_scores(self, codes: np.ndarray) -> np.ndarray:
        q, _ = self.params.forward(decode_observations(codes)[None])
        return q[0]


class RandomPolicy:
    """Равномерно случайные действия."""

    reports_q = False

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def bind(self, env: Environment) -> None:
        pass

    def action_scores(self, codes: np.ndarray) -> np.ndarray:
        return self.rng.random(N_ACTIONS)


class OpenForeverPolicy:
    reports_q = False

    def bind(self, env: Environment) -> None:
        pass

    def action_scores(self, codes: np.ndarray) -> np.ndarray:
        scores = np.zeros(N_ACTIONS)
        scores[OPEN_GRIPPER] = 1.0
        return scores


class ScriptedOraclePolicy:
    """
    Эталонная политика по полному состоянию мира: подвести схват к кубику,
    не задевая его, закрыть, затем поднимать.
    """

    reports_q = False

    def __init__(self, env: Environment | None = None):
        self.env = env

    def bind(self, env: Environment) -> None:
        self.env = env

    def action_scores(self, codes: np.ndarray) -> np.ndarray:
        scores = np.zeros(N_ACTIONS)
        scores[self.choose()] = 1.0
        return scores

    def _moves(self, world: WorldState):
        env = self.env
        for joint in env.sim.controlled_joints:
            for action in (2 * joint, 2 * joint + 1):
                nxt = apply_action(world, env.chain, action, env.reset_spec, env.sim)
                if nxt.arm.joint_angles != world.arm.joint_angles:
                    yield action, nxt

    def choose(self) -> int:
        env = self.env
        world = env.world
        chain = env.chain
        if world.cube.grasped:
            moves = [(-float(gripper_point(nxt, chain)[1]), action) for action, nxt in self._moves(world)]
            return min(moves)[1] if moves else CLOSE_GRIPPER

        radius = env.sim.grasp_radius
        if gripper_cube_distance(world, chain) <= radius:
            return OPEN_GRIPPER if world.arm.gripper_closed else CLOSE_GRIPPER

        moves = []
        for action, nxt in self._moves(world):
            if nxt.cube.position != world.cube.position:
                continue
            distance = gripper_cube_distance(nxt, chain)
            moves.append((0 if distance <= radius else 1, distance, action))
        if not moves:
            return OPEN_GRIPPER
        return min(moves)[2]


# --- эпизод ---------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeMetrics:
    episode_index: int
    success: bool
    cumulative_successes: int
    mean_reward: float
    mean_max_q: float
    length: int
    epsilon: float

    def as_row(self) -> list[str]:
        return [
            str(self.episode_index),
            "1" if self.success else "0",
            str(self.cumulative_successes),
            repr(self.mean_reward),
            repr(self.mean_max_q),
            str(self.length),
            repr(self.epsilon),
        ]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "EpisodeMetrics":
        return cls(
            episode_index=int(row["episode"]),
            success=row["success"] == "1",
            cumulative_successes=int(row["cumulative_successes"]),
            mean_reward=float(row["mean_reward"]),
            mean_max_q=float(row["mean_max_q"]),
            length=int(row["length"]),
            epsilon=float(row["epsilon"]),
        )


@dataclass(frozen=True)
class TraceFrame:
    """Кадр k: наблюдение, по которому выбрано действие k, и награда за это действие."""

    frame: int
    max_q: float
    reward: float
    codes: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class EpisodeResult:
    metrics: EpisodeMetrics
    status: Termination
    trace: tuple[TraceFrame, ...] = ()


def run_episode(
    env: Environment,
    policy,
    mode: EpisodeMode = EpisodeMode.EVAL,
    epsilon: float = 0.0,
    rng: np.random.Generator | None = None,
    episode_index: int = 1,
    cumulative_before: int = 0,
    record_trace: bool = False,
) -> EpisodeResult:
    """
    Один эпизод до успеха или лимита шагов.

    Args:
        env: Окружение
        policy: DQNAgent в режиме TRAIN, Policy в режиме EVAL
        mode: TRAIN - каждый переход идёт в train_step, ε по расписанию агента;
            EVAL - без обучения, фиксированный epsilon
        epsilon: ε для режима EVAL
        rng: Генератор для ε-жадного выбора в режиме EVAL
        episode_index: Номер эпизода для метрик
        cumulative_before: Число успехов до этого эпизода
        record_trace: Сохранять кадры и Q по шагам

    Returns:
        EpisodeResult
    """
    if mode == EpisodeMode.EVAL:
        if rng is None:
            raise ValueError("для режима eval нужен rng")
        policy.bind(env)

    codes = env.reset()
    rewards: list[float] = []
    max_qs: list[float] = []
    trace: list[TraceFrame] = []
    eps = epsilon
    while True:
        if mode == EpisodeMode.TRAIN:
            eps = policy.epsilon
            action, q = policy.act(codes)
            max_q = float(np.max(q))
        else:
            scores = policy.action_scores(codes)
            action = select_action(scores, epsilon, rng)
            max_q = float(np.max(scores)) if policy.reports_q else 0.0

        outcome = env.step(action)
        if mode == EpisodeMode.TRAIN:
            terminal = outcome.status == Termination.SUCCESS
            policy.train_step(Transition(codes, action, outcome.reward, outcome.codes, terminal))

        if record_trace:
            trace.append(TraceFrame(frame=len(rewards), max_q=max_q, reward=outcome.reward, codes=codes))
        rewards.append(outcome.reward)
        max_qs.append(max_q)
        codes = outcome.codes
        if outcome.status != Termination.CONTINUE:
            break

    success = outcome.status == Termination.SUCCESS
    metrics = EpisodeMetrics(
        episode_index=episode_index,
        success=success,
        cumulative_successes=cumulative_before + int(success),
        mean_reward=float(np.mean(rewards)),
        mean_max_q=float(np.mean(max_qs)),
        length=len(rewards),
        epsilon=float(eps),
    )
    return EpisodeResult(metrics=metrics, status=outcome.status, trace=tuple(trace))


# --- обучение -------------------------------------------------------------


@dataclass
class TrainResult:
    run_dir: Path
    metrics_path: Path
    episodes: list[EpisodeMetrics]
    last_checkpoint: Path | None
    resumed_from: int = 0

    def trailing_success_rate(self, window: int = 50) -> float:
        tail = self.episodes[-window:]
        return sum(m.success for m in tail) / len(tail) if tail else 0.0


def checkpoint_stem(episode: int) -> str:
    return f"ep{episode:06d}"


def latest_checkpoint(checkpoint_dir: Path) -> int | None:
    """Номер последнего эпизода с полным сайдкаром или None."""
    episodes = []
    for path in checkpoint_dir.glob("ep*.state"):
        stem = path.name[: -len(".state")]
        if stem[2:].isdigit():
            episodes.append(int(stem[2:]))
    return max(episodes) if episodes else None


def _truncate_metrics(path: Path, keep: int) -> list[EpisodeMetrics]:
    """Оставить в CSV заголовок и первые keep эпизодов."""
    kept = [m for m in read_metrics(path) if m.episode_index <= keep] if path.exists() else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for metrics in kept:
            writer.writerow(metrics.as_row())
    return kept


def read_metrics(path: str | Path) -> list[EpisodeMetrics]:
    with open(path, newline="", encoding="utf-8") as f:
        return [EpisodeMetrics.from_row(row) for row in csv.DictReader(f)]


def moving_average(values, window: int) -> np.ndarray:
    """Скользящее среднее по последним window значениям (для графиков)."""
    if window < 1:
        raise ValueError("window >= 1")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    sums = np.cumsum(np.concatenate([[0.0], values]))
    idx = np.arange(1, values.size + 1)
    start = np.maximum(idx - window, 0)
    return (sums[idx] - sums[start]) / (idx - start)


class RunRecorder:
    """Запись в реестр запусков; если реестр выключен или недоступен, вызовы ничего не делают."""

    def __init__(self, config: RunConfig, kind: str = RunKind.TRAIN):
        self.url: str | None = None
        self.run_id: int | None = None
        if not config.registry.enabled:
            return
        self.url = get_database_url(output_root(config), config.registry.database_url)
        name = config.run.name if kind == RunKind.TRAIN else f"{config.run.name}:{kind}"
        run = registry.get_or_create_run(self.url, name, config.run.seed, format_config(config), kind)
        self.run_id = run.id if run else None

    @property
    def active(self) -> bool:
        return self.run_id is not None

    def truncate_episodes(self, keep_up_to: int) -> None:
        if self.active:
            registry.truncate_episodes(self.url, self.run_id, keep_up_to)

    def record_episode(self, metrics: EpisodeMetrics) -> None:
        if self.active:
            registry.record_episode(self.url, self.run_id, metrics)

    def record_checkpoint(self, episode: int, global_step: int, path: Path, checksum: str) -> None:
        if self.active:
            registry.record_checkpoint(self.url, self.run_id, episode, global_step, str(path), checksum)

    def record_evaluation(self, environment: str, agent: str, report: "EvalReport") -> None:
        if self.active:
            registry.record_evaluation(
                self.url, self.run_id, environment, agent, report.episodes, report.epsilon, report.success_rate
            )

    def finish(self, status: str = RunStatus.COMPLETED) -> None:
        if self.active:
            registry.set_run_status(self.url, self.run_id, status)


def target_reached(episodes: list[EpisodeMetrics], harness) -> bool:
    """Доля успехов в последних success_window эпизодах достигла stop_success_rate."""
    if harness.stop_success_rate <= 0.0 or len(episodes) < harness.success_window:
        return False
    tail = episodes[-harness.success_window:]
    return sum(m.success for m in tail) / len(tail) >= harness.stop_success_rate


def prune_replay_snapshots(checkpoint_dir: Path, keep_stem: str) -> int:
    """Удалить снимки буфера всех контрольных точек, кроме keep_stem."""
    removed = 0
    for path in checkpoint_dir.glob("ep*.replay"):
        if path.name != f"{keep_stem}.replay":
            path.unlink()
            removed += 1
    return removed


def train(
    config: RunConfig,
    run_dir: str | Path | None = None,
    config_path: str | Path | None = None,
) -> TrainResult:
    """
    Обучение на config.harness.episodes эпизодов с возобновлением.

    Каждый эпизод - строка в metrics.csv; контрольная точка каждые
    checkpoint_every эпизодов и в конце. Если в каталоге запуска уже есть
    контрольные точки и harness.resume включён, обучение продолжается с
    последней, а строки метрик после неё отбрасываются. Снимок буфера
    хранится только у последней контрольной точки. При заданном
    harness.stop_success_rate обучение останавливается досрочно.
    """
    run_dir = Path(run_dir) if run_dir is not None else run_directory(config)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(config, run_dir, source=config_path)
    except OSError as e:
        raise ConfigError(f"каталог вывода недоступен для записи: {run_dir} ({e})") from e

    checkpoint_dir = run_dir / CHECKPOINT_DIR
    metrics_path = run_dir / METRICS_FILENAME
    spec = config.network_spec()
    env_seq, agent_seq = np.random.SeedSequence(config.run.seed).spawn(2)
    env = Environment(config, np.random.default_rng(env_seq))
    recorder = RunRecorder(config)

    start = latest_checkpoint(checkpoint_dir) if config.harness.resume and checkpoint_dir.exists() else None
    if start is not None:
        agent, extra = load_agent(checkpoint_dir, checkpoint_stem(start), spec, config.agent, config.schedule)
        env.restore(extra)
        cumulative = int(extra["cumulative_successes"])
        history = _truncate_metrics(metrics_path, start)
        if len(history) != start:
            raise CheckpointError(f"{metrics_path}: {len(history)} строк метрик, контрольная точка на эпизоде {start}")
        recorder.truncate_episodes(start)
        logger.info(f"Возобновление с эпизода {start} (шаг {agent.global_step})")
    else:
        agent = DQNAgent(spec, config.agent, config.schedule, seed=agent_seq)
        cumulative = 0
        history = _truncate_metrics(metrics_path, 0)
        recorder.truncate_episodes(0)
        start = 0

    episodes = list(history)
    last_checkpoint = None
    total = config.harness.episodes
    if target_reached(episodes, config.harness):
        logger.info(f"Цель {config.harness.stop_success_rate:.0%} уже достигнута на эпизоде {start}")
        total = start
    with open(metrics_path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for episode in range(start + 1, total + 1):
            result = run_episode(env, agent, EpisodeMode.TRAIN, episode_index=episode, cumulative_before=cumulative)
            metrics = result.metrics
            cumulative = metrics.cumulative_successes
            writer.writerow(metrics.as_row())
            f.flush()
            episodes.append(metrics)
            recorder.record_episode(metrics)
            logger.info(
                f"Эпизод {episode}: success={int(metrics.success)} cumulative={cumulative} "
                f"reward={metrics.mean_reward:.4f} max_q={metrics.mean_max_q:.4f} "
                f"length={metrics.length} eps={metrics.epsilon:.4f}"
            )

            stop = target_reached(episodes, config.harness)
            if episode % config.harness.checkpoint_every == 0 or episode == total or stop:
                extra = {"episode": str(episode), "cumulative_successes": str(cumulative)}
                extra.update(env.state_record())
                stem = checkpoint_stem(episode)
                last_checkpoint = save_agent(agent, checkpoint_dir, stem, extra)
                prune_replay_snapshots(checkpoint_dir, stem)
                recorder.record_checkpoint(episode, agent.global_step, last_checkpoint, agent.online.checksum())
                logger.debug(f"Контрольная точка {last_checkpoint}")
            if stop:
                logger.info(
                    f"Доля успехов за {config.harness.success_window} эпизодов "
                    f">= {config.harness.stop_success_rate:.0%}, остановка на эпизоде {episode}"
                )
                break

    if last_checkpoint is None and start:
        last_checkpoint = checkpoint_dir / f"{checkpoint_stem(start)}.ckpt"
    recorder.finish()
    return TrainResult(
        run_dir=run_dir,
        metrics_path=metrics_path,
        episodes=episodes,
        last_checkpoint=last_checkpoint,
        resumed_from=start,
    )


# --- оценка ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    episodes: int
    epsilon: float
    outcomes: tuple[bool, ...]
    lengths: tuple[int, ...]

    @property
    def successes(self) -> int:
        return sum(self.outcomes)

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes


def environment_spec(config: RunConfig, label: str) -> ResetSpec:
    """A - фиксированный старт, B - случайные суставы и кубик в каждом эпизоде."""
    if label == "A":
        return replace(config.reset, mode=ResetMode.FIXED)
    if label == "B":
        return replace(config.reset, mode=ResetMode.RANDOMIZED, cube_resample=CubeResample.EVERY_EPISODE)
    raise ValueError(f"неизвестное окружение {label!r}")


def evaluate(
    policy,
    config: RunConfig,
    episodes: int = 50,
    epsilon: float = 0.1,
    seed: int = 0,
    reset_spec: ResetSpec | None = None,
) -> EvalReport:
    """
    Оценка без обучения с фиксированным ε.

    Каждый эпизод получает свои генераторы из SeedSequence(seed), поэтому
    результат не зависит от порядка эпизодов.
    """
    if episodes < 1:
        raise ValueError("episodes >= 1")
    env = Environment(config, np.random.default_rng(0), reset_spec=reset_spec)
    outcomes = []
    lengths = []
    for child in np.random.SeedSequence(seed).spawn(episodes):
        env_seq, act_seq = child.spawn(2)
        env.reseed(np.random.default_rng(env_seq))
        result = run_episode(env, policy, EpisodeMode.EVAL, epsilon=epsilon, rng=np.random.default_rng(act_seq))
        outcomes.append(result.metrics.success)
        lengths.append(result.metrics.length)
    report = EvalReport(episodes=episodes, epsilon=epsilon, outcomes=tuple(outcomes), lengths=tuple(lengths))
    logger.info(f"Оценка: {report.successes}/{episodes} успехов при ε = {epsilon}")
    return report


@dataclass(frozen=True)
class CrossEvalReport:
    """Матрица успехов: ключ (окружение, агент)."""

    matrix: dict[tuple[str, str], float]
    reports: dict[tuple[str, str], EvalReport] = field(repr=False)
    reference: dict[tuple[str, str], float] = field(default_factory=lambda: dict(REFERENCE_MATRIX))

    def format(self) -> str:
        lines = ["Environment | Agent A | Agent B | reference A | reference B"]
        for env_label in ("A", "B"):
            measured = [f"{self.matrix[(env_label, a)]:.0%}" for a in ("A", "B")]
            ref = [f"{self.reference[(env_label, a)]:.0%}" for a in ("A", "B")]
            lines.append(f"{env_label:<11} | {measured[0]:>7} | {measured[1]:>7} | {ref[0]:>11} | {ref[1]:>11}")
        return "\n".join(lines)


def cross_evaluate(
    policy_a,
    policy_b,
    config: RunConfig,
    episodes: int = 50,
    epsilon: float = 0.1,
    seed: int = 0,
) -> CrossEvalReport:
    """Оба агента в обоих окружениях с общим seed."""
    matrix = {}
    reports = {}
    for env_label in ("A", "B"):
        spec = environment_spec(config, env_label)
        for agent_label, policy in (("A", policy_a), ("B", policy_b)):
            report = evaluate(policy, config, episodes, epsilon, seed, reset_spec=spec)
            matrix[(env_label, agent_label)] = report.success_rate
            reports[(env_label, agent_label)] = report
    return CrossEvalReport(matrix=matrix, reports=reports)


# --- визуализация ---------------------------------------------------------


@dataclass(frozen=True)
class ValueTrace:
    csv_path: Path
    frame_paths: tuple[Path, ...]
    frames: tuple[TraceFrame, ...]
    success: bool


def value_trace(policy, config: RunConfig, seed: int, out_dir: str | Path) -> ValueTrace:
    """
    Жадный эпизод с записью max Q и награды по кадрам и экспортом кадров в PGM.
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    env_seq, act_seq = np.random.SeedSequence(seed).spawn(2)
    env = Environment(config, np.random.default_rng(env_seq))
    result = run_episode(
        env, policy, EpisodeMode.EVAL, epsilon=0.0, rng=np.random.default_rng(act_seq), record_trace=True
    )

    csv_path = out_dir / "trace.csv"
    paths = []
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for frame in result.trace:
            writer.writerow([frame.frame, repr(frame.max_q), repr(frame.reward)])
            paths.append(write_pgm(frames_dir / f"frame_{frame.frame:04d}.pgm", frame.codes))
    logger.info(f"Трасса: {len(result.trace)} кадров, success={result.metrics.success}")
    return ValueTrace(csv_path=csv_path, frame_paths=tuple(paths), frames=result.trace, success=result.metrics.success)


def normalize_channel(channel: np.ndarray) -> np.ndarray:
    """Min-max нормализация в [0, 1]; постоянный канал - нули."""
    lo = float(channel.min())
    hi = float(channel.max())
    if hi <= lo:
        return np.zeros_like(channel, dtype=np.float64)
    return (channel - lo) / (hi - lo)


@dataclass(frozen=True)
class ActivationDump:
    layers: tuple[np.ndarray, ...] = field(repr=False)
    paths: tuple[Path, ...] = ()


def activation_dump(params: NetworkParams, codes: np.ndarray, out_dir: str | Path) -> ActivationDump:
    """
    Карты признаков после ReLU каждого свёрточного слоя, по файлу на канал:
    conv{k}_ch{c}.pgm.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    paths = []
    for k, activation in enumerate(conv_activations(params, decode_observations(codes))):
        normalized = np.stack([normalize_channel(channel) for channel in activation])
        layers.append(normalized)
        for c, channel in enumerate(normalized):
            paths.append(write_pgm(out_dir / f"conv{k}_ch{c:02d}.pgm", channel))
    return ActivationDump(layers=tuple(layers), paths=tuple(paths))


def render_observation(config: RunConfig, seed: int | None = None) -> np.ndarray:
    """Кадр начального состояния (8-битные коды)."""
    seed = config.run.seed if seed is None else seed
    env = Environment(config, np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]))
    return env.reset()
