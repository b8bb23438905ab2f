"""
Точные оракулы для самопроверки сборки: проверка градиентов всех слоёв и
функции потерь, табличное Q-обучение на цепочке из 5 состояний против
итерации по ценности.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from dqn import (
    ReplayBuffer,
    TabularQ,
    Transition,
    TransitionBatch,
    loss_and_gradients,
    select_action,
    sync_target,
)
from gradcheck import numerical_gradient, relative_error
from tensor_nn import (
    ConvLayerSpec,
    NetworkSpec,
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    init_params,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    sgd_step,
)

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-6
TABULAR_TOLERANCE = 1e-2
# минимальное расстояние до излома ReLU и до второго максимума в окне пула
KINK_MARGIN = 1e-3


# --- цепочка состояний ----------------------------------------------------


@dataclass(frozen=True)
class ChainMDP:
    """
    Детерминированная цепочка: действие 0 - вправо, 1 - влево (у левого края - на месте).
    Попадание в последнее состояние даёт награду 1 и завершает эпизод.
    """

    n_states: int = 5
    discount: float = 0.99

    n_actions = 2

    @property
    def goal(self) -> int:
        return self.n_states - 1

    def step(self, state: int, action: int) -> tuple[int, float, bool]:
        nxt = state + 1 if action == 0 else max(state - 1, 0)
        if nxt == self.goal:
            return nxt, 1.0, True
        return nxt, 0.0, False


def value_iteration(mdp: ChainMDP, tolerance: float = 1e-12, max_sweeps: int = 10_000) -> np.ndarray:
    """Q* итерацией по ценности; строка целевого состояния остаётся нулевой."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_sweeps):
        updated = np.zeros_like(q)
        for s in range(mdp.goal):
            for a in range(mdp.n_actions):
                nxt, reward, done = mdp.step(s, a)
                updated[s, a] = reward if done else reward + mdp.discount * q[nxt].max()
        delta = float(np.max(np.abs(updated - q)))
        q = updated
        if delta < tolerance:
            break
    return q


@dataclass(frozen=True)
class TabularReport:
    steps: int
    max_error: float
    q: np.ndarray
    q_star: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_error < TABULAR_TOLERANCE


def run_tabular_oracle(
    seed: int = 0,
    steps: int = 10_000,
    mdp: ChainMDP = ChainMDP(),
    learning_rate: float = 0.5,
    batch_size: int = 32,
    target_sync_period: int = 50,
    epsilon: float = 1.0,
) -> TabularReport:
    """
    Q-обучение с буфером и целевой таблицей тем же кодом, что и у сети:
    td_target, loss_and_gradients, sync_target; шаг - обычный SGD.
    """
    env_seq, policy_seq, replay_seq = np.random.SeedSequence(seed).spawn(3)
    policy_rng = np.random.default_rng(policy_seq)
    replay_rng = np.random.default_rng(replay_seq)
    del env_seq

    online = TabularQ(mdp.n_states, mdp.n_actions)
    target = sync_target(online)
    buffer = ReplayBuffer(capacity=steps)
    state = 0
    for t in range(1, steps + 1):
        q_row, _ = online.forward(np.array([state]))
        action = select_action(q_row[0], epsilon, policy_rng)
        nxt, reward, done = mdp.step(state, action)
        buffer.push(Transition(np.array(state), action, reward, np.array(nxt), done))
        state = 0 if done else nxt

        if len(buffer) >= batch_size:
            batch = buffer.sample(batch_size, replay_rng)
            result = loss_and_gradients(batch, online, target, mdp.discount)
            online = online.with_tensors(sgd_step(online.tensors, result.gradients, learning_rate))
        if t % target_sync_period == 0:
            target = sync_target(online)

    q_star = value_iteration(mdp)
    q = online.tensors["table"]
    # строка цели в выборку не попадает
    error = float(np.max(np.abs(q[:mdp.goal] - q_star[:mdp.goal])))
    logger.info(f"Табличный оракул: {steps} шагов, max|Q - Q*| = {error:.2e}")
    return TabularReport(steps=steps, max_error=error, q=q.copy(), q_star=q_star)


# --- проверка градиентов --------------------------------------------------


@dataclass(frozen=True)
class GradientCheck:
    name: str
    instances: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < GRADIENT_TOLERANCE


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    signs = rng.choice([-1.0, 1.0], size=shape)
    return signs * rng.uniform(0.1, 1.0, size=shape)


def _distinct_values(rng: np.random.Generator, shape) -> np.ndarray:
    """Значения с шагом 0.01 без повторов: у max-pooling нет близких соперников."""
    size = int(np.prod(shape))
    return (rng.permutation(size) * 0.01 - 0.005 * size).reshape(shape)


def _check_conv(rng: np.random.Generator) -> float:
    x = rng.normal(size=(2, 2, 7, 7))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    stride = int(rng.integers(1, 3))
    out, cache = conv2d_forward(x, w, b, stride)
    dout = rng.normal(size=out.shape)
    dx, dw, db = conv2d_backward(dout, cache)

    def f() -> float:
        return float(np.sum(conv2d_forward(x, w, b, stride)[0] * dout))

    return max(
        relative_error(dx, numerical_gradient(f, x)),
        relative_error(dw, numerical_gradient(f, w)),
        relative_error(db, numerical_gradient(f, b)),
    )


def _check_pool(rng: np.random.Generator) -> float:
    x = _distinct_values(rng, (2, 3, 4, 6))
    out, argmax = maxpool2x2_forward(x)
    dout = rng.normal(size=out.shape)
    dx = maxpool2x2_backward(dout, argmax)

    def f() -> float:
        return float(np.sum(maxpool2x2_forward(x)[0] * dout))

    return relative_error(dx, numerical_gradient(f, x))


def _check_fc(rng: np.random.Generator) -> float:
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(5, 6))
    b = rng.normal(size=5)
    dout = rng.normal(size=(4, 5))
    _, cache = fc_forward(x, w, b)
    dx, dw, db = fc_backward(dout, cache)

    def f() -> float:
        return float(np.sum(fc_forward(x, w, b)[0] * dout))

    return max(
        relative_error(dx, numerical_gradient(f, x)),
        relative_error(dw, numerical_gradient(f, w)),
        relative_error(db, numerical_gradient(f, b)),
    )


def _check_relu(rng: np.random.Generator) -> float:
    x = _away_from_zero(rng, (3, 8))
    dout = rng.normal(size=x.shape)
    _, cache = relu_forward(x)
    dx = relu_backward(dout, cache)

    def f() -> float:
        return float(np.sum(relu_forward(x)[0] * dout))

    return relative_error(dx, numerical_gradient(f, x))


GRADIENT_NET = NetworkSpec(
    input_height=10,
    input_width=10,
    conv_layers=(ConvLayerSpec(3, 3), ConvLayerSpec(4, 3)),
    hidden_units=8,
)


def _has_margin(online, observations: np.ndarray) -> bool:
    """Все ReLU-входы и победители пулинга далеко от точек излома."""
    _, cache = online.forward(observations)
    caches, _, _, relu_fc_cache, _, _ = cache
    pre_activations = [relu_cache for _, relu_cache, _ in caches] + [relu_fc_cache]
    if any(np.min(np.abs(z)) < KINK_MARGIN for z in pre_activations):
        return False
    for (_, relu_cache, _) in caches:
        a = np.maximum(relu_cache, 0.0)
        n, c, h, w = a.shape
        windows = np.sort(
            a.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4), axis=1
        )
        live = windows[:, 3] > 0
        if np.any(windows[live, 3] - windows[live, 2] < KINK_MARGIN):
            return False
    return True


def _check_loss(rng: np.random.Generator) -> float:
    for _ in range(100):
        online = init_params(GRADIENT_NET, rng)
        target = init_params(GRADIENT_NET, rng)
        n = 4
        observations = rng.uniform(0.0, 1.0, size=(n, 10, 10))
        if _has_margin(online, observations):
            break
    else:
        raise RuntimeError("не удалось подобрать экземпляр без изломов")
    batch = TransitionBatch(
        observations=observations,
        actions=rng.integers(0, 14, size=n),
        rewards=rng.normal(size=n),
        next_observations=rng.uniform(0.0, 1.0, size=(n, 10, 10)),
        terminals=np.array([True, False, False, True]),
    )
    result = loss_and_gradients(batch, online, target, 0.99)

    def f() -> float:
        return loss_and_gradients(batch, online, target, 0.99).loss

    return max(
        relative_error(result.gradients[name], numerical_gradient(f, online.tensors[name]))
        for name in online.tensors
    )


_CHECKS = {
    "conv": _check_conv,
    "pool": _check_pool,
    "fc": _check_fc,
    "relu": _check_relu,
    "loss": _check_loss,
}


def run_gradient_suite(seed: int = 0, instances: int = 20) -> list[GradientCheck]:
    """Проверка аналитических градиентов центральными разностями для каждого слоя и потерь."""
    rng = np.random.default_rng(seed)
    results = []
    for name, check in _CHECKS.items():
        worst = max(check(rng) for _ in range(instances))
        results.append(GradientCheck(name=name, instances=instances, max_error=worst))
        logger.info(f"Градиенты {name}: {instances} экземпляров, max rel error = {worst:.2e}")
    return results
