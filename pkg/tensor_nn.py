"""
Минимальный движок нейросети на numpy: свёртка, max-pooling 2x2, полносвязный
слой, ReLU с точными аналитическими градиентами, Adam и формат контрольной точки.

Все тензоры - float64, раскладка батча (N, C, H, W).
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from exceptions import CheckpointError, ConfigError, NonFiniteGradientError, ShapeMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GDQNCKPT"
CHECKPOINT_VERSION = 1
_LAYER_CONV = 0
_LAYER_FC = 1


# --- слои -----------------------------------------------------------------


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """
    Свёртка без дополнения ("valid"), взаимная корреляция.

    Args:
        x: Вход (N, C, H, W)
        w: Фильтры (F, C, KH, KW)
        b: Смещения (F,)
        stride: Шаг окна

    Returns:
        (out, cache), out имеет форму (N, F, H', W'), H' = (H - KH) // stride + 1
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d: ожидаются 4D x и w, получено x{x.shape}, w{w.shape}")
    n, c, h, wd = x.shape
    f, wc, kh, kw = w.shape
    if wc != c:
        raise ShapeMismatchError(f"conv2d: каналы входа {c} != каналы фильтра {wc}")
    if b.shape != (f,):
        raise ShapeMismatchError(f"conv2d: bias{b.shape}, ожидалось ({f},)")
    if stride < 1:
        raise ShapeMismatchError(f"conv2d: stride={stride} должен быть >= 1")
    if kh > h or kw > wd:
        raise ShapeMismatchError(f"conv2d: ядро {kh}x{kw} не помещается во вход {h}x{wd}")

    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(f, -1).T + b
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    return out, (x.shape, w, stride, cols)


def conv2d_backward(dout: np.ndarray, cache):
    """Градиенты свёртки: (d_input, d_weights, d_bias)."""
    x_shape, w, stride, cols = cache
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    _, fo, ho, wo = dout.shape
    if fo != f or dout.shape[0] != n:
        raise ShapeMismatchError(f"conv2d_backward: dout{dout.shape} не соответствует выходу")

    dout_mat = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    db = dout_mat.sum(axis=0)
    dw = (dout_mat.T @ cols).reshape(w.shape)
    dcols = (dout_mat @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros(x_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dx, dw, db


def maxpool2x2_forward(x: np.ndarray):
    """
    Max-pooling 2x2 с шагом 2.

    Returns:
        (out, argmax), argmax - позиция максимума в окне (0..3, построчно);
        при равенстве выбирается наименьший линейный индекс
    """
    if x.ndim != 4:
        raise ShapeMismatchError(f"maxpool: ожидается 4D вход, получено {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"maxpool: нечётный размер {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2x2_backward(dout: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    """Весь градиент окна уходит в позицию максимума."""
    if dout.shape != argmax.shape:
        raise ShapeMismatchError(f"maxpool_backward: dout{dout.shape} != argmax{argmax.shape}")
    n, c, ho, wo = argmax.shape
    dwin = np.zeros((n, c, ho, wo, 4), dtype=np.float64)
    np.put_along_axis(dwin, argmax[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Аффинное отображение out = x @ w.T + b, w имеет форму (M, D)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeMismatchError(f"fc: ожидаются 2D x и w, получено x{x.shape}, w{w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"fc: ширина входа {x.shape[1]} != столбцы весов {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatchError(f"fc: bias{b.shape}, ожидалось ({w.shape[0]},)")
    return x @ w.T + b, (x, w)


def fc_backward(dout: np.ndarray, cache):
    x, w = cache
    if dout.shape != (x.shape[0], w.shape[0]):
        raise ShapeMismatchError(f"fc_backward: dout{dout.shape}, ожидалось ({x.shape[0]}, {w.shape[0]})")
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    # субградиент в нуле равен 0
    return dout * (x > 0)


# --- архитектура ----------------------------------------------------------


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel_size: int
    stride: int = 1


@dataclass(frozen=True)
class NetworkSpec:
    """
    Свёрточные блоки (conv -> relu -> pool 2x2), затем flatten,
    fc(hidden) -> relu -> fc(n_outputs).
    """

    input_height: int = 64
    input_width: int = 64
    input_channels: int = 1
    conv_layers: tuple[ConvLayerSpec, ...] = (
        ConvLayerSpec(16, 5, 1),
        ConvLayerSpec(32, 3, 1),
        ConvLayerSpec(32, 3, 1),
    )
    hidden_units: int = 256
    n_outputs: int = 14

    def __post_init__(self) -> None:
        if not self.conv_layers:
            raise ConfigError("нужен хотя бы один свёрточный блок", field="network.conv_channels")
        if self.hidden_units < 1:
            raise ConfigError("hidden_units >= 1", field="network.hidden_units")
        if self.n_outputs != 14:
            raise ConfigError("выходов должно быть 14 (по числу действий)", field="network.n_outputs")
        self.shape_table()

    def shape_table(self) -> list[tuple[str, tuple[int, ...]]]:
        """Формы выходов всех слоёв для одного наблюдения."""
        c, h, w = self.input_channels, self.input_height, self.input_width
        if min(c, h, w) < 1:
            raise ConfigError("размер входа должен быть положительным", field="network.input")
        table: list[tuple[str, tuple[int, ...]]] = [("input", (c, h, w))]
        for k, layer in enumerate(self.conv_layers):
            if layer.out_channels < 1 or layer.kernel_size < 1 or layer.stride < 1:
                raise ConfigError(f"некорректный свёрточный слой {k}", field="network.conv_channels")
            if layer.kernel_size > h or layer.kernel_size > w:
                raise ConfigError(f"ядро слоя conv{k} больше входа {h}x{w}", field="network.conv_kernels")
            h = (h - layer.kernel_size) // layer.stride + 1
            w = (w - layer.kernel_size) // layer.stride + 1
            c = layer.out_channels
            table.append((f"conv{k}", (c, h, w)))
            table.append((f"relu{k}", (c, h, w)))
            if h % 2 or w % 2:
                raise ConfigError(f"нечётный размер {h}x{w} перед pool{k}", field="network.conv_kernels")
            h, w = h // 2, w // 2
            table.append((f"pool{k}", (c, h, w)))
        table.append(("flatten", (c * h * w,)))
        table.append(("fc0", (self.hidden_units,)))
        table.append(("relu_fc0", (self.hidden_units,)))
        table.append(("fc1", (self.n_outputs,)))
        return table

    @property
    def flat_size(self) -> int:
        return dict(self.shape_table())["flatten"][0]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        channels = self.input_channels
        for k, layer in enumerate(self.conv_layers):
            shapes[f"conv{k}.weight"] = (layer.out_channels, channels, layer.kernel_size, layer.kernel_size)
            shapes[f"conv{k}.bias"] = (layer.out_channels,)
            channels = layer.out_channels
        shapes["fc0.weight"] = (self.hidden_units, self.flat_size)
        shapes["fc0.bias"] = (self.hidden_units,)
        shapes["fc1.weight"] = (self.n_outputs, self.hidden_units)
        shapes["fc1.bias"] = (self.n_outputs,)
        return shapes


@dataclass
class NetworkParams:
    """Веса и смещения сети в порядке NetworkSpec.param_shapes()."""

    spec: NetworkSpec
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        expected = self.spec.param_shapes()
        if list(self.tensors) != list(expected):
            raise ShapeMismatchError(f"набор параметров {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(f"{name}: форма {self.tensors[name].shape}, ожидалось {shape}")

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, {k: v.copy() for k, v in self.tensors.items()})

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        return digest.hexdigest()

    def equals(self, other: "NetworkParams") -> bool:
        return list(self.tensors) == list(other.tensors) and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "NetworkParams":
        return NetworkParams(self.spec, tensors)

    def forward(self, observations: np.ndarray):
        return forward_with_cache(self, observations)

    def backward(self, cache, dq: np.ndarray) -> dict[str, np.ndarray]:
        return network_backward(self, cache, dq)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Веса ~ N(0, 2/fan_in), смещения нулевые."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    return NetworkParams(spec, tensors)


def zero_params(spec: NetworkSpec) -> NetworkParams:
    return NetworkParams(spec, {k: np.zeros(s, dtype=np.float64) for k, s in spec.param_shapes().items()})


def as_batch(spec: NetworkSpec, observation: np.ndarray) -> np.ndarray:
    """Привести наблюдение к (N, C, H, W): принимает (H, W), (N, H, W) или (N, C, H, W)."""
    x = np.asarray(observation, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    expected = (spec.input_channels, spec.input_height, spec.input_width)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatchError(f"вход сети {np.shape(observation)}, ожидалось (N, {expected})")
    return x


def forward_with_cache(params: NetworkParams, observation: np.ndarray):
    """Прямой проход с сохранением промежуточных значений для backward."""
    spec = params.spec
    t = params.tensors
    x = as_batch(spec, observation)
    caches = []
    activations = []
    for k, layer in enumerate(spec.conv_layers):
        x, conv_cache = conv2d_forward(x, t[f"conv{k}.weight"], t[f"conv{k}.bias"], layer.stride)
        x, relu_cache = relu_forward(x)
        activations.append(x)
        x, argmax = maxpool2x2_forward(x)
        caches.append((conv_cache, relu_cache, argmax))
    pooled_shape = x.shape
    x = x.reshape(x.shape[0], -1)
    h, fc0_cache = fc_forward(x, t["fc0.weight"], t["fc0.bias"])
    h, relu_fc_cache = relu_forward(h)
    q, fc1_cache = fc_forward(h, t["fc1.weight"], t["fc1.bias"])
    cache = (caches, pooled_shape, fc0_cache, relu_fc_cache, fc1_cache, activations)
    return q, cache


def network_forward(params: NetworkParams, observation: np.ndarray) -> np.ndarray:
    """Q-значения: (N, 14) для батча или (14,) для одного кадра (H, W)."""
    q, _ = forward_with_cache(params, observation)
    if np.ndim(observation) == 2:
        return q[0]
    return q


def network_backward(params: NetworkParams, cache, dq: np.ndarray) -> dict[str, np.ndarray]:
    """Градиенты всех параметров по dL/dQ формы (N, 14)."""
    caches, pooled_shape, fc0_cache, relu_fc_cache, fc1_cache, _ = cache
    grads: dict[str, np.ndarray] = {}
    dh, grads["fc1.weight"], grads["fc1.bias"] = fc_backward(dq, fc1_cache)
    dh = relu_backward(dh, relu_fc_cache)
    dx, grads["fc0.weight"], grads["fc0.bias"] = fc_backward(dh, fc0_cache)
    dx = dx.reshape(pooled_shape)
    for k in reversed(range(len(caches))):
        conv_cache, relu_cache, argmax = caches[k]
        dx = maxpool2x2_backward(dx, argmax)
        dx = relu_backward(dx, relu_cache)
        dx, grads[f"conv{k}.weight"], grads[f"conv{k}.bias"] = conv2d_backward(dx, conv_cache)
    return {name: grads[name] for name in params.tensors}


def conv_activations(params: NetworkParams, observation: np.ndarray) -> list[np.ndarray]:
    """Карты признаков после ReLU каждого свёрточного слоя для одного кадра: [(C, H', W'), ...]."""
    _, cache = forward_with_cache(params, observation)
    return [a[0] for a in cache[-1]]


# --- оптимизаторы ---------------------------------------------------------


@dataclass
class AdamState:
    """Моменты Adam по каждому параметру и номер шага."""

    m: dict[str, np.ndarray] = field(repr=False)
    v: dict[str, np.ndarray] = field(repr=False)
    t: int = 0
    lr: float = 6e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: NetworkParams, lr: float = 6e-6, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.tensors.items()},
        v={k: np.zeros_like(v) for k, v in params.tensors.items()},
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def _check_grads(params: NetworkParams, grads: dict[str, np.ndarray]) -> None:
    if list(grads) != list(params.tensors):
        raise ShapeMismatchError(f"набор градиентов {list(grads)} != {list(params.tensors)}")
    for name, g in grads.items():
        if g.shape != params.tensors[name].shape:
            raise ShapeMismatchError(f"{name}: градиент {g.shape}, параметр {params.tensors[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"{name}: {bad} нечисловых значений в градиенте")


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray], state: AdamState) -> NetworkParams:
    """
    Один шаг Adam с поправкой смещения моментов.

    Моменты и t в state обновляются на месте, возвращаются новые параметры.
    """
    _check_grads(params, grads)
    if state.t < 0:
        raise ValueError(f"Adam: t={state.t} < 0")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    updated = {}
    for name, theta in params.tensors.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        updated[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return NetworkParams(params.spec, updated)


def sgd_step(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """Обычный градиентный шаг; используется табличным оракулом."""
    return {name: value - lr * grads[name] for name, value in tensors.items()}


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Масштабирует градиенты так, чтобы общая норма не превышала max_norm (0 - выключено)."""
    if max_norm <= 0:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}


# --- контрольная точка ----------------------------------------------------


def _layer_groups(spec: NetworkSpec) -> list[tuple[int, str]]:
    groups = [(_LAYER_CONV, f"conv{k}") for k in range(len(spec.conv_layers))]
    groups += [(_LAYER_FC, "fc0"), (_LAYER_FC, "fc1")]
    return groups


def _pack_tensor(tensor: np.ndarray) -> bytes:
    header = struct.pack("<I", tensor.ndim) + struct.pack(f"<{tensor.ndim}I", *tensor.shape)
    return header + np.ascontiguousarray(tensor, dtype="<f8").tobytes()


def params_to_bytes(params: NetworkParams) -> bytes:
    """
    Формат: magic, версия (u32), число слоёв (u32), затем для каждого слоя
    вид (u32), форма и данные весов, форма и данные смещений.
    Форма - ndim (u32) и размеры (u32), данные - little-endian float64.
    """
    groups = _layer_groups(params.spec)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(groups))]
    for kind, prefix in groups:
        chunks.append(struct.pack("<I", kind))
        chunks.append(_pack_tensor(params.tensors[f"{prefix}.weight"]))
        chunks.append(_pack_tensor(params.tensors[f"{prefix}.bias"]))
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"{self.source}: файл обрезан на смещении {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self) -> np.ndarray:
        ndim = self.u32()
        if ndim > 8:
            raise CheckpointError(f"{self.source}: недопустимая размерность {ndim}")
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        payload = np.frombuffer(self.take(8 * count), dtype="<f8")
        return payload.astype(np.float64).reshape(shape)


def params_from_bytes(data: bytes, spec: NetworkSpec, source: str = "<bytes>") -> NetworkParams:
    reader = _Reader(data, source)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: неверная сигнатура файла")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: неподдерживаемая версия формата {version}")
    groups = _layer_groups(spec)
    count = reader.u32()
    if count != len(groups):
        raise CheckpointError(f"{source}: {count} слоёв в файле, сеть ожидает {len(groups)}")
    tensors: dict[str, np.ndarray] = {}
    for kind, prefix in groups:
        stored_kind = reader.u32()
        if stored_kind != kind:
            raise CheckpointError(f"{source}: слой {prefix} имеет вид {stored_kind}, ожидался {kind}")
        tensors[f"{prefix}.weight"] = reader.tensor()
        tensors[f"{prefix}.bias"] = reader.tensor()
    if reader.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - reader.pos} лишних байт в конце файла")
    ordered = {name: tensors[name] for name in spec.param_shapes()}
    try:
        return NetworkParams(spec, ordered)
    except ShapeMismatchError as e:
        raise CheckpointError(f"{source}: {e}") from e


def save_params(path: str | Path, params: NetworkParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(params_to_bytes(params))
    logger.debug(f"Параметры сети сохранены: {path}")
    return path


def load_params(path: str | Path, spec: NetworkSpec) -> NetworkParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"файл контрольной точки не найден: {path}")
    return params_from_bytes(path.read_bytes(), spec, source=str(path))
