"""
Конфигурация эксперимента: текстовый файл строк `section.key = value`.

Пропущенные ключи берут значения по умолчанию, неизвестные секции и ключи
отклоняются. format_config записывает все поля, и разбор этого текста даёт
равный RunConfig.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from dqn import AgentConfig, EpsilonSchedule
from exceptions import ConfigError
from renderer import CameraSpec, RenderSpec
from sim import (
    N_JOINTS,
    CubeResample,
    KinematicChain,
    Link,
    ResetMode,
    ResetSpec,
    SimSpec,
    default_chain,
)
from tensor_nn import ConvLayerSpec, NetworkSpec

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GRASP_DQN_OUTPUT_ROOT"
RESOLVED_CONFIG_NAME = "resolved.conf"


@dataclass(frozen=True)
class RunSection:
    name: str = "grasp"
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if not self.name or any(c in self.name for c in "/\\ "):
            raise ConfigError("имя запуска не может быть пустым и содержать '/', '\\' или пробелы", field="run.name")
        if self.seed < 0:
            raise ConfigError("seed >= 0", field="run.seed")


@dataclass(frozen=True)
class NetworkSection:
    """Свёрточные блоки сети; размер входа берётся из render.width/height."""

    conv_channels: tuple[int, ...] = (16, 32, 32)
    conv_kernels: tuple[int, ...] = (5, 3, 3)
    conv_strides: tuple[int, ...] = (1, 1, 1)
    hidden_units: int = 256

    def __post_init__(self) -> None:
        if not len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides):
            raise ConfigError(
                "conv_channels, conv_kernels и conv_strides должны быть одной длины",
                field="network.conv_kernels",
            )


@dataclass(frozen=True)
class HarnessSection:
    episodes: int = 100
    checkpoint_every: int = 100
    eval_episodes: int = 50
    eval_epsilon: float = 0.1
    resume: bool = True
    # остановка, когда доля успехов в последних success_window эпизодах >= stop_success_rate; 0 - выключено
    stop_success_rate: float = 0.0
    success_window: int = 50

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ConfigError("episodes >= 1", field="harness.episodes")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every >= 1", field="harness.checkpoint_every")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes >= 1", field="harness.eval_episodes")
        if not 0.0 <= self.eval_epsilon <= 1.0:
            raise ConfigError("eval_epsilon в [0, 1]", field="harness.eval_epsilon")
        if not 0.0 <= self.stop_success_rate <= 1.0:
            raise ConfigError("stop_success_rate в [0, 1]", field="harness.stop_success_rate")
        if self.success_window < 1:
            raise ConfigError("success_window >= 1", field="harness.success_window")


@dataclass(frozen=True)
class RegistrySection:
    enabled: bool = True
    # пусто - DATABASE_URL или sqlite в каталоге запуска
    database_url: str = ""


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    chain: KinematicChain = field(default_factory=default_chain)
    reset: ResetSpec = field(default_factory=ResetSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    camera: CameraSpec = field(default_factory=CameraSpec)
    render: RenderSpec = field(default_factory=RenderSpec)
    network: NetworkSection = field(default_factory=NetworkSection)
    agent: AgentConfig = field(default_factory=AgentConfig)
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    harness: HarnessSection = field(default_factory=HarnessSection)
    registry: RegistrySection = field(default_factory=RegistrySection)

    def __post_init__(self) -> None:
        # форма сети зависит от размера кадра
        self.network_spec()

    def network_spec(self) -> NetworkSpec:
        layers = tuple(
            ConvLayerSpec(c, k, s)
            for c, k, s in zip(self.network.conv_channels, self.network.conv_kernels, self.network.conv_strides)
        )
        return NetworkSpec(
            input_height=self.render.height,
            input_width=self.render.width,
            input_channels=1,
            conv_layers=layers,
            hidden_units=self.network.hidden_units,
        )


# --- кодеки значений ------------------------------------------------------


@dataclass(frozen=True)
class Codec:
    parse: Callable[[str], Any]
    format: Callable[[Any], str]


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"ожидается true/false, получено {text!r}")


def _split(text: str, sep: str = ",") -> list[str]:
    parts = [p.strip() for p in text.split(sep)]
    if any(not p for p in parts):
        raise ValueError(f"пустой элемент в списке {text!r}")
    return parts


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in _split(text))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in _split(text))


def _vectors(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(part) for part in _split(text, ";"))


def _fmt_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _enum(kind) -> Codec:
    return Codec(parse=kind, format=lambda v: kind(v).value)


STR = Codec(parse=str, format=str)
INT = Codec(parse=int, format=str)
FLOAT = Codec(parse=float, format=lambda v: repr(float(v)))
BOOL = Codec(parse=_parse_bool, format=lambda v: "true" if v else "false")
FLOATS = Codec(parse=_floats, format=_fmt_floats)
INTS = Codec(parse=_ints, format=lambda v: ", ".join(str(int(x)) for x in v))
VECTORS = Codec(parse=_vectors, format=lambda v: "; ".join(_fmt_floats(vec) for vec in v))


def _section_codecs(section_type, overrides: dict[str, Codec] | None = None) -> dict[str, Codec]:
    """Кодеки по именам полей dataclass-секции; тип берётся из значения по умолчанию."""
    defaults = section_type()
    codecs: dict[str, Codec] = {}
    for f in fields(section_type):
        value = getattr(defaults, f.name)
        if isinstance(value, bool):
            codec = BOOL
        elif isinstance(value, ResetMode):
            codec = _enum(ResetMode)
        elif isinstance(value, CubeResample):
            codec = _enum(CubeResample)
        elif isinstance(value, int):
            codec = INT
        elif isinstance(value, float):
            codec = FLOAT
        elif isinstance(value, str):
            codec = STR
        elif isinstance(value, tuple) and all(isinstance(v, int) for v in value):
            codec = INTS
        else:
            codec = FLOATS
        codecs[f.name] = codec
    codecs.update(overrides or {})
    return codecs


# Звенья цепи описываются поэлементными списками по суставам
CHAIN_CODECS: dict[str, Codec] = {
    "axes": VECTORS,
    "lengths": FLOATS,
    "joint_min": FLOATS,
    "joint_max": FLOATS,
    "base_position": FLOATS,
    "gripper_reach": FLOAT,
    "reference_direction": FLOATS,
}

SECTION_TYPES = {
    "run": RunSection,
    "reset": ResetSpec,
    "sim": SimSpec,
    "camera": CameraSpec,
    "render": RenderSpec,
    "network": NetworkSection,
    "agent": AgentConfig,
    "schedule": EpsilonSchedule,
    "harness": HarnessSection,
    "registry": RegistrySection,
}

SECTION_ORDER = ("run", "chain", "reset", "sim", "camera", "render", "network", "agent", "schedule", "harness", "registry")


def _codecs(section: str) -> dict[str, Codec]:
    if section == "chain":
        return CHAIN_CODECS
    return _section_codecs(SECTION_TYPES[section])


def _chain_values(chain: KinematicChain) -> dict[str, Any]:
    return {
        "axes": tuple(link.rotation_axis for link in chain.links),
        "lengths": tuple(link.link_length for link in chain.links),
        "joint_min": tuple(link.joint_min for link in chain.links),
        "joint_max": tuple(link.joint_max for link in chain.links),
        "base_position": chain.base_position,
        "gripper_reach": chain.gripper_reach,
        "reference_direction": chain.reference_direction,
    }


def _build_chain(values: dict[str, Any]) -> KinematicChain:
    per_joint = ("axes", "lengths", "joint_min", "joint_max")
    for key in per_joint:
        if len(values[key]) != N_JOINTS:
            raise ConfigError(f"нужно {N_JOINTS} значений, получено {len(values[key])}", field=f"chain.{key}")
    for key in ("base_position", "reference_direction"):
        if len(values[key]) != 3:
            raise ConfigError("нужен вектор из 3 чисел", field=f"chain.{key}")
    for k, axis in enumerate(values["axes"]):
        if len(axis) != 3:
            raise ConfigError(f"ось сустава {k} должна иметь 3 компоненты", field="chain.axes")
    links = tuple(
        Link(tuple(axis), length, lo, hi)
        for axis, length, lo, hi in zip(values["axes"], values["lengths"], values["joint_min"], values["joint_max"])
    )
    return KinematicChain(
        links=links,
        base_position=tuple(values["base_position"]),
        gripper_reach=values["gripper_reach"],
        reference_direction=tuple(values["reference_direction"]),
    )


def config_values(config: RunConfig) -> dict[str, dict[str, Any]]:
    """Все поля конфигурации по секциям."""
    values: dict[str, dict[str, Any]] = {}
    for section in SECTION_ORDER:
        obj = getattr(config, section)
        if section == "chain":
            values[section] = _chain_values(obj)
        else:
            values[section] = {f.name: getattr(obj, f.name) for f in fields(obj)}
    return values


def build_config(values: dict[str, dict[str, Any]]) -> RunConfig:
    """Собрать RunConfig из значений по секциям с полной проверкой."""
    sections: dict[str, Any] = {}
    for section in SECTION_ORDER:
        if section == "chain":
            sections[section] = _build_chain(values[section])
            continue
        try:
            sections[section] = SECTION_TYPES[section](**values[section])
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"некорректные значения секции: {e}", field=section) from e
    return RunConfig(**sections)


def parse_config_text(text: str) -> RunConfig:
    values = config_values(RunConfig())
    seen: set[str] = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"ожидается 'section.key = value', получено {raw.strip()!r}", line=number)
        name, value = (part.strip() for part in line.split("=", 1))
        if "." not in name:
            raise ConfigError(f"ключ {name!r} без секции", line=number)
        section, key = name.split(".", 1)
        if section not in values:
            raise ConfigError(f"неизвестная секция {section!r}", line=number)
        codecs = _codecs(section)
        if key not in codecs:
            raise ConfigError(f"неизвестный ключ {name!r}", line=number)
        if name in seen:
            raise ConfigError(f"ключ {name!r} задан повторно", line=number)
        seen.add(name)
        try:
            values[section][key] = codecs[key].parse(value)
        except ValueError as e:
            raise ConfigError(f"{name}: не удалось разобрать {value!r} ({e})", line=number) from e
    return build_config(values)


def parse_config(path: str | Path) -> RunConfig:
    """
    Прочитать и проверить конфигурацию.

    Raises:
        ConfigError: файл не найден, ошибка разбора (с номером строки)
            или нарушение ограничения (с именем поля)
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"файл конфигурации не найден: {path}")
    config = parse_config_text(path.read_text(encoding="utf-8"))
    logger.debug(f"Конфигурация загружена: {path}")
    return config


def format_config(config: RunConfig) -> str:
    """Текст конфигурации со всеми полями, включая значения по умолчанию."""
    lines: list[str] = []
    for section, section_values in config_values(config).items():
        codecs = _codecs(section)
        lines.append(f"# {section}")
        for key, value in section_values.items():
            lines.append(f"{section}.{key} = {codecs[key].format(value)}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(config: RunConfig, **sections: dict[str, Any]) -> RunConfig:
    """Копия конфигурации с заменёнными полями: with_overrides(cfg, harness={"episodes": 3})."""
    values = config_values(config)
    for section, changes in sections.items():
        values[section].update(changes)
    return build_config(values)


def output_root(config: RunConfig) -> Path:
    """Корень вывода: переменная окружения GRASP_DQN_OUTPUT_ROOT или run.output_dir."""
    return Path(os.getenv(OUTPUT_ROOT_ENV) or config.run.output_dir)


def run_directory(config: RunConfig) -> Path:
    return output_root(config) / config.run.name


def write_resolved_config(config: RunConfig, directory: str | Path, source: str | Path | None = None) -> Path:
    """
    Записать полную конфигурацию в directory/resolved.conf.

    Если source - это сам resolved.conf (запуск из каталога запуска),
    файл не перезаписывается.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG_NAME
    if source is not None and path.exists() and path.resolve() == Path(source).resolve():
        logger.debug(f"resolved.conf совпадает с входным файлом, запись пропущена: {path}")
        return path
    path.write_text(format_config(config), encoding="utf-8")
    return path
