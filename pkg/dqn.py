"""
Агент глубокого Q-обучения: буфер воспроизведения, ε-жадный выбор действия
с отжигом, TD-цели по целевой сети и шаг обучения.

Функция ценности - любой объект с методами forward(obs) -> (q, cache),
backward(cache, dq) -> grads, copy() и словарём tensors: так одним кодом
обучаются и свёрточная сеть, и точная таблица (TabularQ).
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from exceptions import CheckpointError, ConfigError, InvalidActionError, ReplayUnderflowError
from renderer import quantize
from sim import N_ACTIONS
from tensor_nn import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_init,
    adam_step,
    clip_grad_norm,
    init_params,
    load_params,
    save_params,
)
from version import get_version

logger = logging.getLogger(__name__)

REPLAY_MAGIC = b"GDQNRPLY"
REPLAY_VERSION = 1
STATE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    next_observation: np.ndarray
    terminal: bool

    def __post_init__(self) -> None:
        if isinstance(self.action, bool) or not 0 <= int(self.action) < N_ACTIONS:
            raise InvalidActionError(f"переход с недопустимым действием {self.action!r}")
        if not math.isfinite(self.reward):
            raise ValueError(f"награда перехода должна быть конечной, получено {self.reward}")


@dataclass(frozen=True)
class TransitionBatch:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])


class ReplayBuffer:
    """
    Кольцевой буфер переходов фиксированной ёмкости.

    Хранилище выделяется при первой вставке по форме и типу наблюдения;
    после заполнения каждая вставка вытесняет самый старый переход.
    """

    def __init__(self, capacity: int = 500_000):
        if capacity < 1:
            raise ConfigError("ёмкость буфера должна быть >= 1", field="agent.replay_capacity")
        self.capacity = capacity
        self.insert_count = 0
        self._next = 0
        self._size = 0
        self._obs: np.ndarray | None = None
        self._next_obs: np.ndarray | None = None
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.float64)
        self._terminals = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return self._size

    def _allocate(self, observation: np.ndarray) -> None:
        shape = (self.capacity,) + observation.shape
        self._obs = np.zeros(shape, dtype=observation.dtype)
        self._next_obs = np.zeros(shape, dtype=observation.dtype)

    def push(self, transition: Transition) -> "ReplayBuffer":
        obs = np.asarray(transition.observation)
        next_obs = np.asarray(transition.next_observation)
        if self._obs is None:
            self._allocate(obs)
        if obs.shape != self._obs.shape[1:] or next_obs.shape != self._obs.shape[1:]:
            raise ValueError(f"форма наблюдения {obs.shape} не совпадает с буфером {self._obs.shape[1:]}")
        i = self._next
        self._obs[i] = obs
        self._next_obs[i] = next_obs
        self._actions[i] = int(transition.action)
        self._rewards[i] = float(transition.reward)
        self._terminals[i] = bool(transition.terminal)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.insert_count += 1
        return self

    def _ordered_indices(self) -> np.ndarray:
        """Индексы хранилища от самого старого к самому новому."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def _batch(self, indices: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            observations=self._obs[indices],
            actions=self._actions[indices].copy(),
            rewards=self._rewards[indices].copy(),
            next_observations=self._next_obs[indices],
            terminals=self._terminals[indices].copy(),
        )

    def contents(self) -> TransitionBatch:
        if self._size == 0:
            raise ReplayUnderflowError("буфер пуст")
        return self._batch(self._ordered_indices())

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Равномерная выборка с возвращением."""
        if batch_size < 1:
            raise ValueError(f"batch_size={batch_size} должен быть >= 1")
        if self._size < batch_size:
            raise ReplayUnderflowError(f"в буфере {self._size} переходов, нужно {batch_size}")
        return self._batch(rng.integers(0, self._size, size=batch_size))

    # бинарный снимок для точного возобновления обучения
    def to_bytes(self) -> bytes:
        header = struct.pack("<QQQQ", self.capacity, self._size, self.insert_count, self._next)
        chunks = [REPLAY_MAGIC, struct.pack("<I", REPLAY_VERSION), header]
        if self._obs is None:
            chunks.append(struct.pack("<I", 0))
            return b"".join(chunks)
        dtype = self._obs.dtype.str.encode("ascii")
        shape = self._obs.shape[1:]
        chunks.append(struct.pack("<I", len(dtype)) + dtype)
        chunks.append(struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}Q", *shape))
        n = self._size
        for array in (self._obs[:n], self._next_obs[:n]):
            chunks.append(np.ascontiguousarray(array).tobytes())
        chunks.append(self._actions[:n].astype("<i8").tobytes())
        chunks.append(self._rewards[:n].astype("<f8").tobytes())
        chunks.append(self._terminals[:n].astype(np.uint8).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "ReplayBuffer":
        pos = 0

        def take(size: int) -> bytes:
            nonlocal pos
            if pos + size > len(data):
                raise CheckpointError(f"{source}: снимок буфера обрезан")
            chunk = data[pos:pos + size]
            pos += size
            return chunk

        if take(len(REPLAY_MAGIC)) != REPLAY_MAGIC:
            raise CheckpointError(f"{source}: неверная сигнатура снимка буфера")
        (version,) = struct.unpack("<I", take(4))
        if version != REPLAY_VERSION:
            raise CheckpointError(f"{source}: неподдерживаемая версия снимка {version}")
        capacity, size, insert_count, next_index = struct.unpack("<QQQQ", take(32))
        buffer = cls(capacity)
        buffer.insert_count = insert_count
        buffer._size = size
        buffer._next = next_index
        (dtype_len,) = struct.unpack("<I", take(4))
        if dtype_len == 0:
            return buffer
        dtype = np.dtype(take(dtype_len).decode("ascii"))
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        per_item = int(np.prod(shape)) * dtype.itemsize
        buffer._allocate(np.zeros(shape, dtype=dtype))
        buffer._obs[:size] = np.frombuffer(take(size * per_item), dtype=dtype).reshape((size,) + shape)
        buffer._next_obs[:size] = np.frombuffer(take(size * per_item), dtype=dtype).reshape((size,) + shape)
        buffer._actions[:size] = np.frombuffer(take(8 * size), dtype="<i8")
        buffer._rewards[:size] = np.frombuffer(take(8 * size), dtype="<f8")
        buffer._terminals[:size] = np.frombuffer(take(size), dtype=np.uint8).astype(bool)
        if pos != len(data):
            raise CheckpointError(f"{source}: лишние байты в снимке буфера")
        return buffer


def buffer_push(buffer: ReplayBuffer, transition: Transition) -> ReplayBuffer:
    return buffer.push(transition)


def buffer_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
    return buffer.sample(batch_size, rng)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Линейный отжиг ε от start к end за anneal_span шагов среды."""

    start: float = 1.0
    end: float = 0.1
    anneal_span: int = 1_000_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise ConfigError("нужно 0 <= end <= start <= 1", field="schedule.end")
        if self.anneal_span < 1:
            raise ConfigError("anneal_span >= 1", field="schedule.anneal_span")


def epsilon_at(schedule: EpsilonSchedule, step: int) -> float:
    if step >= schedule.anneal_span:
        return schedule.end
    fraction = max(step, 0) / schedule.anneal_span
    return schedule.start + (schedule.end - schedule.start) * fraction


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """
    ε-жадный выбор: с вероятностью ε случайное действие, иначе argmax
    (при равенстве - наименьший номер).
    """
    q_values = np.asarray(q_values)
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, q_values.shape[-1]))
    return int(np.argmax(q_values))


def td_target(reward, terminal, max_next_q, gamma: float):
    """r для терминальных переходов, иначе r + γ·max Q(s', a'; θ⁻)."""
    reward = np.asarray(reward, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    target = np.where(terminal, reward, reward + gamma * np.asarray(max_next_q, dtype=np.float64))
    return float(target) if target.ndim == 0 else target


@dataclass(frozen=True)
class LossResult:
    loss: float
    gradients: dict[str, np.ndarray] = field(repr=False)
    td_errors: np.ndarray = field(repr=False)


def loss_and_gradients(batch: TransitionBatch, online, target, gamma: float) -> LossResult:
    """
    Средний квадрат TD-ошибки по батчу и его градиент по online-параметрам.

    Цель считается константой: градиент идёт только через Q(s, a) взятого действия.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("пустой батч")
    next_q, _ = target.forward(batch.next_observations)
    targets = td_target(batch.rewards, batch.terminals, next_q.max(axis=1), gamma)
    q, cache = online.forward(batch.observations)
    rows = np.arange(n)
    errors = q[rows, batch.actions] - targets
    loss = float(np.mean(errors * errors))
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = 2.0 * errors / n
    return LossResult(loss=loss, gradients=online.backward(cache, dq), td_errors=errors)


def sync_target(online):
    """Глубокая копия online-параметров для целевой сети."""
    return online.copy()


class TabularQ:
    """Точная таблица Q(s, a); наблюдение - номер состояния."""

    def __init__(self, n_states: int, n_actions: int, table: np.ndarray | None = None):
        self.n_states = n_states
        self.n_actions = n_actions
        if table is None:
            table = np.zeros((n_states, n_actions), dtype=np.float64)
        self.tensors = {"table": table}

    def forward(self, states: np.ndarray):
        states = np.asarray(states, dtype=np.int64)
        return self.tensors["table"][states], states

    def backward(self, states: np.ndarray, dq: np.ndarray) -> dict[str, np.ndarray]:
        grad = np.zeros_like(self.tensors["table"])
        np.add.at(grad, states, dq)
        return {"table": grad}

    def copy(self) -> "TabularQ":
        return TabularQ(self.n_states, self.n_actions, self.tensors["table"].copy())

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "TabularQ":
        return TabularQ(self.n_states, self.n_actions, tensors["table"])


@dataclass(frozen=True)
class AgentConfig:
    """Гиперпараметры обучения."""

    discount: float = 0.99
    learning_rate: float = 6e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32
    target_sync_period: int = 1000
    min_replay_before_learning: int = 1000
    replay_capacity: int = 500_000
    grad_norm_cap: float = 0.0
    update_every: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError(f"discount={self.discount} должен быть в [0, 1)", field="agent.discount")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate > 0", field="agent.learning_rate")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1, beta2 в [0, 1)", field="agent.beta1")
        if not self.adam_epsilon > 0:
            raise ConfigError("adam_epsilon > 0", field="agent.adam_epsilon")
        if self.batch_size < 1:
            raise ConfigError("batch_size >= 1", field="agent.batch_size")
        if self.target_sync_period < 1:
            raise ConfigError("target_sync_period >= 1", field="agent.target_sync_period")
        if self.min_replay_before_learning < 0:
            raise ConfigError("min_replay_before_learning >= 0", field="agent.min_replay_before_learning")
        if self.replay_capacity < 1:
            raise ConfigError("replay_capacity >= 1", field="agent.replay_capacity")
        if self.grad_norm_cap < 0:
            raise ConfigError("grad_norm_cap >= 0 (0 - выключено)", field="agent.grad_norm_cap")
        if self.update_every < 1:
            raise ConfigError("update_every >= 1", field="agent.update_every")


def encode_observation(pixels: np.ndarray) -> np.ndarray:
    """Наблюдение -> 8-битные коды для буфера."""
    return quantize(np.asarray(pixels, dtype=np.float64))


def decode_observations(codes: np.ndarray) -> np.ndarray:
    """8-битные коды -> вход сети в [0, 1]."""
    return np.asarray(codes, dtype=np.float64) / 255.0


class DQNAgent:
    """
    Агент с online- и целевой сетью, Adam и буфером воспроизведения.

    Каждый вызов train_step - один шаг среды: переход кладётся в буфер,
    затем (если буфер набрал min_replay_before_learning) выполняется
    обновление, а раз в target_sync_period шагов копируется целевая сеть.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        config: AgentConfig = AgentConfig(),
        schedule: EpsilonSchedule = EpsilonSchedule(),
        seed: int | np.random.SeedSequence = 0,
    ):
        self.spec = spec
        self.config = config
        self.schedule = schedule
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_seq, replay_seq, action_seq = root.spawn(3)
        self.init_rng = np.random.default_rng(init_seq)
        self.replay_rng = np.random.default_rng(replay_seq)
        self.action_rng = np.random.default_rng(action_seq)
        self.online: NetworkParams = init_params(spec, self.init_rng)
        self.target: NetworkParams = sync_target(self.online)
        self.adam: AdamState = adam_init(
            self.online, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon
        )
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.global_step = 0
        self.updates = 0
        self.last_loss: float | None = None

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.schedule, self.global_step)

    def q_values(self, codes: np.ndarray) -> np.ndarray:
        """Q-значения для одного закодированного кадра (H, W)."""
        q, _ = self.online.forward(decode_observations(codes)[None])
        return q[0]

    def act(self, codes: np.ndarray, epsilon: float | None = None) -> tuple[int, np.ndarray]:
        q = self.q_values(codes)
        eps = self.epsilon if epsilon is None else epsilon
        return select_action(q, eps, self.action_rng), q

    def train_step(self, transition: Transition) -> float | None:
        """Положить переход в буфер и при необходимости обновить сеть; возвращает loss."""
        self.buffer.push(transition)
        self.global_step += 1
        loss = None
        cfg = self.config
        ready = len(self.buffer) >= max(cfg.min_replay_before_learning, cfg.batch_size)
        if ready and self.global_step % cfg.update_every == 0:
            batch = self.buffer.sample(cfg.batch_size, self.replay_rng)
            decoded = TransitionBatch(
                observations=decode_observations(batch.observations),
                actions=batch.actions,
                rewards=batch.rewards,
                next_observations=decode_observations(batch.next_observations),
                terminals=batch.terminals,
            )
            result = loss_and_gradients(decoded, self.online, self.target, cfg.discount)
            grads = clip_grad_norm(result.gradients, cfg.grad_norm_cap)
            self.online = adam_step(self.online, grads, self.adam)
            self.updates += 1
            loss = result.loss
            self.last_loss = loss
        if self.global_step % cfg.target_sync_period == 0:
            self.target = sync_target(self.online)
            logger.debug(f"Целевая сеть синхронизирована на шаге {self.global_step}")
        return loss


def _rng_state(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _restore_rng(rng: np.random.Generator, text: str) -> None:
    rng.bit_generator.state = json.loads(text)


def checkpoint_paths(directory: str | Path, stem: str) -> dict[str, Path]:
    directory = Path(directory)
    return {
        "online": directory / f"{stem}.ckpt",
        "target": directory / f"{stem}.target.ckpt",
        "adam_m": directory / f"{stem}.adam_m.ckpt",
        "adam_v": directory / f"{stem}.adam_v.ckpt",
        "replay": directory / f"{stem}.replay",
        "state": directory / f"{stem}.state",
    }


def save_agent(agent: DQNAgent, directory: str | Path, stem: str, extra: dict[str, str] | None = None) -> Path:
    """
    Сохранить агента: сеть в формате tensor_nn + текстовый сайдкар.

    Returns:
        Путь к файлу сети (.ckpt)
    """
    paths = checkpoint_paths(directory, stem)
    save_params(paths["online"], agent.online)
    save_params(paths["target"], agent.target)
    save_params(paths["adam_m"], agent.online.with_tensors(agent.adam.m))
    save_params(paths["adam_v"], agent.online.with_tensors(agent.adam.v))
    paths["replay"].write_bytes(agent.buffer.to_bytes())

    lines = {
        "format_version": str(STATE_FORMAT_VERSION),
        "code_version": get_version(),
        "global_step": str(agent.global_step),
        "updates": str(agent.updates),
        "epsilon_step": str(agent.global_step),
        "epsilon": repr(agent.epsilon),
        "adam_t": str(agent.adam.t),
        "rng.init": _rng_state(agent.init_rng),
        "rng.replay": _rng_state(agent.replay_rng),
        "rng.action": _rng_state(agent.action_rng),
    }
    for key, value in (extra or {}).items():
        lines[f"extra.{key}"] = value
    text = "".join(f"{key} = {value}\n" for key, value in lines.items())
    paths["state"].write_text(text, encoding="utf-8")
    logger.debug(f"Контрольная точка агента сохранена: {paths['online']}")
    return paths["online"]


def read_sidecar(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"сайдкар не найден: {path}")
    values: dict[str, str] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if " = " not in line:
            raise CheckpointError(f"{path}: строка {number} не в формате 'key = value'")
        key, value = line.split(" = ", 1)
        values[key] = value
    return values


def load_agent(
    directory: str | Path,
    stem: str,
    spec: NetworkSpec,
    config: AgentConfig = AgentConfig(),
    schedule: EpsilonSchedule = EpsilonSchedule(),
) -> tuple[DQNAgent, dict[str, str]]:
    """
    Восстановить агента из контрольной точки.

    Returns:
        (agent, extra) - агент и дополнительные поля сайдкара без префикса extra.
    """
    paths = checkpoint_paths(directory, stem)
    state = read_sidecar(paths["state"])
    try:
        if int(state["format_version"]) != STATE_FORMAT_VERSION:
            raise CheckpointError(f"{paths['state']}: версия сайдкара {state['format_version']}")
        agent = DQNAgent(spec, config, schedule, seed=0)
        agent.online = load_params(paths["online"], spec)
        agent.target = load_params(paths["target"], spec)
        agent.adam.m = dict(load_params(paths["adam_m"], spec).tensors)
        agent.adam.v = dict(load_params(paths["adam_v"], spec).tensors)
        agent.adam.t = int(state["adam_t"])
        agent.global_step = int(state["global_step"])
        agent.updates = int(state["updates"])
        _restore_rng(agent.init_rng, state["rng.init"])
        _restore_rng(agent.replay_rng, state["rng.replay"])
        _restore_rng(agent.action_rng, state["rng.action"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{paths['state']}: повреждённый сайдкар ({e})") from e
    if not paths["replay"].exists():
        raise CheckpointError(f"снимок буфера не найден: {paths['replay']}")
    buffer = ReplayBuffer.from_bytes(paths["replay"].read_bytes(), source=str(paths["replay"]))
    if buffer.capacity != config.replay_capacity:
        raise CheckpointError(
            f"ёмкость буфера в снимке {buffer.capacity} != agent.replay_capacity {config.replay_capacity}"
        )
    agent.buffer = buffer
    extra = {key[len("extra."):]: value for key, value in state.items() if key.startswith("extra.")}
    return agent, extra
