"""
Симуляция манипулятора с 6 управляемыми суставами, схватом и кубиком на столе.

Все операции чистые: принимают состояние и возвращают новое, ничего не
изменяя на месте. Геометрия в метрах, углы суставов в градусах, стол - плоскость
y = 0.

Действия (14 штук):
- 2k   - сустав k на +1°
- 2k+1 - сустав k на -1°
- 12   - открыть схват
- 13   - закрыть схват
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from exceptions import ConfigError, InvalidActionError, SimulationError

N_JOINTS = 6
N_ACTIONS = 14
OPEN_GRIPPER = 12
CLOSE_GRIPPER = 13

Vec3 = tuple[float, float, float]

# Запас, с которым сдвинутый кубик выталкивается за грань схвата
_KNOCK_MARGIN = 1e-9
# Сколько раз пересэмплировать случайную позу, если она уходит под стол
_RESET_ATTEMPTS = 100


@dataclass(frozen=True)
class Link:
    """Звено цепи: ось вращения сустава в системе родителя, длина и пределы."""

    rotation_axis: Vec3
    link_length: float
    joint_min: float
    joint_max: float


@dataclass(frozen=True)
class KinematicChain:
    """
    Кинематическая цепь из 6 звеньев.

    Звено k вытянуто вдоль reference_direction в своей системе координат,
    которая получается поворотами суставов 0..k по очереди.
    """

    links: tuple[Link, ...]
    base_position: Vec3 = (0.0, 0.0, 0.0)
    gripper_reach: float = 0.04
    reference_direction: Vec3 = (0.0, 1.0, 0.0)

    def __post_init__(self) -> None:
        if len(self.links) != N_JOINTS:
            raise ConfigError(f"ожидается {N_JOINTS} звеньев, получено {len(self.links)}", field="chain.links")
        for k, link in enumerate(self.links):
            norm = math.sqrt(sum(c * c for c in link.rotation_axis))
            if abs(norm - 1.0) > 1e-9:
                raise ConfigError(f"ось сустава {k} не единичная (|a| = {norm})", field="chain.axes")
            if not link.joint_min < link.joint_max:
                raise ConfigError(f"joint_min >= joint_max для сустава {k}", field="chain.joint_min")
            if not link.link_length > 0:
                raise ConfigError(f"длина звена {k} должна быть > 0", field="chain.lengths")
        ref_norm = math.sqrt(sum(c * c for c in self.reference_direction))
        if abs(ref_norm - 1.0) > 1e-9:
            raise ConfigError("reference_direction должен быть единичным", field="chain.reference_direction")
        if self.gripper_reach < 0:
            raise ConfigError("gripper_reach не может быть отрицательным", field="chain.gripper_reach")


def default_chain() -> KinematicChain:
    """Цепь по умолчанию: поворот основания, плечо, локоть, ролл, кисть, ролл кисти."""
    y_axis = (0.0, 1.0, 0.0)
    z_axis = (0.0, 0.0, 1.0)
    return KinematicChain(
        links=(
            Link(y_axis, 0.10, -170.0, 170.0),
            Link(z_axis, 0.30, -120.0, 120.0),
            Link(z_axis, 0.25, -150.0, 150.0),
            Link(y_axis, 0.05, -170.0, 170.0),
            Link(z_axis, 0.10, -120.0, 120.0),
            Link(y_axis, 0.03, -170.0, 170.0),
        ),
    )


@dataclass(frozen=True)
class ArmState:
    joint_angles: tuple[float, ...]
    gripper_closed: bool = False


@dataclass(frozen=True)
class CubeState:
    position: Vec3
    half_extent: float = 0.015
    grasped: bool = False


@dataclass(frozen=True)
class WorldState:
    arm: ArmState
    cube: CubeState
    step_count: int = 0
    succeeded: bool = False


class ResetMode(str, Enum):
    FIXED = "fixed"
    RANDOMIZED = "randomized"


class CubeResample(str, Enum):
    """Когда в режиме Randomized выбирается новая позиция кубика."""

    EVERY_EPISODE = "every_episode"
    ON_SUCCESS = "on_success"


@dataclass(frozen=True)
class ResetSpec:
    """Параметры сброса сцены и правила эпизода."""

    mode: ResetMode = ResetMode.FIXED
    base_joint_angles: tuple[float, ...] = (0.0, -10.0, -90.0, 0.0, -48.0, 0.0)
    joint_jitter: float = 20.0
    cube_base_position: Vec3 = (0.35, 0.0, 0.0)
    # 200 см² = 0.02 м², квадрат со стороной ~0.141 м
    cube_region: tuple[float, float] = (math.sqrt(0.02), math.sqrt(0.02))
    cube_half_extent: float = 0.015
    lift_height: float = 0.30
    max_episode_steps: int = 1000
    cube_resample: CubeResample = CubeResample.EVERY_EPISODE
    start_grasped: bool = False

    def __post_init__(self) -> None:
        if len(self.base_joint_angles) != N_JOINTS:
            raise ConfigError(f"нужно {N_JOINTS} базовых углов", field="reset.base_joint_angles")
        if self.joint_jitter < 0:
            raise ConfigError("joint_jitter >= 0", field="reset.joint_jitter")
        if self.mode == ResetMode.RANDOMIZED and not (self.cube_region[0] > 0 and self.cube_region[1] > 0):
            raise ConfigError("cube_region должна иметь положительную площадь", field="reset.cube_region")
        if not self.lift_height > 0:
            raise ConfigError("lift_height > 0", field="reset.lift_height")
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps >= 1", field="reset.max_episode_steps")
        if not self.cube_half_extent > 0:
            raise ConfigError("cube_half_extent > 0", field="reset.cube_half_extent")
        if self.cube_base_position[1] < 0:
            raise ConfigError("кубик не может стоять ниже стола", field="reset.cube_base_position")


@dataclass(frozen=True)
class SimSpec:
    """Параметры захвата, награды и набор управляемых суставов."""

    grasp_radius: float = 0.03
    reward_decay: float = 0.25
    success_reward: float = 100.0
    controlled_joints: tuple[int, ...] = (0, 1, 2, 3, 4, 5)

    def __post_init__(self) -> None:
        if not self.grasp_radius > 0:
            raise ConfigError("grasp_radius > 0", field="sim.grasp_radius")
        if self.reward_decay < 0:
            raise ConfigError("reward_decay >= 0", field="sim.reward_decay")
        if any(j < 0 or j >= N_JOINTS for j in self.controlled_joints):
            raise ConfigError("номера суставов в диапазоне [0, 5]", field="sim.controlled_joints")
        if len(set(self.controlled_joints)) != len(self.controlled_joints):
            raise ConfigError("суставы не должны повторяться", field="sim.controlled_joints")


class Termination(str, Enum):
    CONTINUE = "continue"
    SUCCESS = "success"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Kinematics:
    """Результат прямой кинематики: 7 точек (основание + концы звеньев) и точка захвата."""

    segment_endpoints: np.ndarray = field(repr=False)
    gripper_point: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class StepResult:
    next: WorldState
    reward: float
    status: Termination


def _rotation(axis: Vec3, angle_deg: float) -> np.ndarray:
    """Матрица поворота вокруг единичной оси (формула Родрига)."""
    theta = math.radians(angle_deg)
    x, y, z = axis
    c = math.cos(theta)
    s = math.sin(theta)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


def forward_kinematics(chain: KinematicChain, arm: ArmState) -> Kinematics:
    """
    Прямая кинематика.

    Args:
        chain: Кинематическая цепь
        arm: Углы суставов (в пределах ограничений)

    Returns:
        Kinematics с точками основания/концов звеньев и точкой захвата
    """
    reference = np.asarray(chain.reference_direction, dtype=np.float64)
    frame = np.eye(3)
    point = np.asarray(chain.base_position, dtype=np.float64)
    endpoints = [point]
    for link, angle in zip(chain.links, arm.joint_angles):
        frame = frame @ _rotation(link.rotation_axis, angle)
        point = point + frame @ (link.link_length * reference)
        endpoints.append(point)
    gripper = point + frame @ (chain.gripper_reach * reference)
    return Kinematics(segment_endpoints=np.stack(endpoints), gripper_point=gripper)


def gripper_point(world: WorldState, chain: KinematicChain) -> np.ndarray:
    return forward_kinematics(chain, world.arm).gripper_point


def gripper_cube_distance(world: WorldState, chain: KinematicChain) -> float:
    """Евклидово расстояние от точки захвата до кубика, в метрах."""
    delta = gripper_point(world, chain) - np.asarray(world.cube.position)
    return float(math.sqrt(float(delta @ delta)))


def _above_table(kin: Kinematics) -> bool:
    return bool(np.all(kin.segment_endpoints[1:, 1] >= 0.0) and kin.gripper_point[1] >= 0.0)


def _inside_cube(point: np.ndarray, cube: CubeState) -> bool:
    delta = np.abs(point - np.asarray(cube.position))
    return bool(np.all(delta < cube.half_extent))


def _knock_cube(cube: CubeState, point: np.ndarray) -> CubeState:
    """
    Открытый схват вошёл в кубик: сдвигаем кубик по горизонтали вдоль
    направления контакта, пока точка захвата не окажется снаружи.
    """
    center = np.asarray(cube.position, dtype=np.float64)
    direction = np.array([center[0] - point[0], 0.0, center[2] - point[2]])
    norm = math.sqrt(float(direction @ direction))
    if norm == 0.0:
        direction = np.array([1.0, 0.0, 0.0])
    else:
        direction = direction / norm

    shifts = []
    for axis in (0, 2):
        component = direction[axis]
        if component == 0.0:
            continue
        offset = (center[axis] - point[axis]) * math.copysign(1.0, component)
        shifts.append((cube.half_extent - offset) / abs(component))
    shift = max(0.0, min(shifts)) + _KNOCK_MARGIN
    moved = center + shift * direction
    return replace(cube, position=(float(moved[0]), float(center[1]), float(moved[2])))


def grasp_check(world: WorldState, chain: KinematicChain, grasp_radius: float = 0.03) -> bool:
    """
    Проверка захвата в момент закрытия схвата.

    Returns:
        True, если точка захвата не дальше grasp_radius от кубика
        (граница включительно) и кубик ещё не захвачен
    """
    if world.cube.grasped:
        return False
    return gripper_cube_distance(world, chain) <= grasp_radius


def validate_action(action: int) -> int:
    if isinstance(action, bool) or not isinstance(action, (int, np.integer)):
        raise InvalidActionError(f"действие должно быть целым числом, получено {action!r}")
    if not 0 <= int(action) < N_ACTIONS:
        raise InvalidActionError(f"действие {action} вне диапазона [0, {N_ACTIONS - 1}]")
    return int(action)


def apply_action(
    world: WorldState,
    chain: KinematicChain,
    action: int,
    spec: ResetSpec,
    sim: SimSpec = SimSpec(),
) -> WorldState:
    """
    Применить одно действие и вернуть новое состояние мира.

    Суставные действия меняют угол на ±1° с ограничением пределами; движение,
    уводящее руку под стол, отменяется. Открытие схвата роняет захваченный
    кубик на стол, закрытие запускает grasp_check.
    """
    action = validate_action(action)
    if world.step_count >= spec.max_episode_steps:
        raise SimulationError(
            f"эпизод исчерпан: step_count={world.step_count}, лимит {spec.max_episode_steps}"
        )

    arm = world.arm
    cube = world.cube

    if action < OPEN_GRIPPER:
        joint, direction = divmod(action, 2)
        if joint in sim.controlled_joints:
            link = chain.links[joint]
            delta = 1.0 if direction == 0 else -1.0
            angles = list(arm.joint_angles)
            angles[joint] = min(link.joint_max, max(link.joint_min, angles[joint] + delta))
            moved = replace(arm, joint_angles=tuple(angles))
            if _above_table(forward_kinematics(chain, moved)):
                arm = moved
    elif action == OPEN_GRIPPER:
        if cube.grasped:
            x, _, z = cube.position
            cube = replace(cube, position=(x, 0.0, z), grasped=False)
        arm = replace(arm, gripper_closed=False)
    else:
        if not arm.gripper_closed:
            arm = replace(arm, gripper_closed=True)
            if grasp_check(replace(world, arm=arm, cube=cube), chain, sim.grasp_radius):
                cube = replace(cube, grasped=True)

    point = forward_kinematics(chain, arm).gripper_point
    if cube.grasped:
        cube = replace(cube, position=(float(point[0]), float(point[1]), float(point[2])))
    elif not arm.gripper_closed and _inside_cube(point, cube):
        cube = _knock_cube(cube, point)

    succeeded = cube.grasped and cube.position[1] >= spec.lift_height
    return WorldState(arm=arm, cube=cube, step_count=world.step_count + 1, succeeded=succeeded)


def compute_reward(
    world: WorldState,
    chain: KinematicChain,
    spec: ResetSpec,
    sim: SimSpec = SimSpec(),
) -> float:
    """
    Награда с промежуточными бонусами:
    успех - success_reward; кубик в схвате - 1 + высота; иначе exp(-β·d).
    """
    if world.succeeded:
        return float(sim.success_reward)
    if world.cube.grasped:
        return 1.0 + world.cube.position[1]
    return math.exp(-sim.reward_decay * gripper_cube_distance(world, chain))


def is_terminal(world: WorldState, spec: ResetSpec) -> Termination:
    if world.succeeded:
        return Termination.SUCCESS
    if world.step_count >= spec.max_episode_steps:
        return Termination.TIMEOUT
    return Termination.CONTINUE


def step(
    world: WorldState,
    chain: KinematicChain,
    action: int,
    spec: ResetSpec,
    sim: SimSpec = SimSpec(),
) -> StepResult:
    """apply_action, затем награда и статус по новому состоянию."""
    next_world = apply_action(world, chain, action, spec, sim)
    reward = compute_reward(next_world, chain, spec, sim)
    return StepResult(next=next_world, reward=reward, status=is_terminal(next_world, spec))


def sample_cube_position(spec: ResetSpec, rng: np.random.Generator) -> Vec3:
    """Равномерная точка в прямоугольнике cube_region на столе (y = 0)."""
    width, depth = spec.cube_region
    cx, _, cz = spec.cube_base_position
    x = cx + rng.uniform(-0.5 * width, 0.5 * width)
    z = cz + rng.uniform(-0.5 * depth, 0.5 * depth)
    return (float(x), 0.0, float(z))


def _clamped(chain: KinematicChain, angles) -> tuple[float, ...]:
    return tuple(
        float(min(link.joint_max, max(link.joint_min, angle)))
        for link, angle in zip(chain.links, angles)
    )


def reset(
    spec: ResetSpec,
    rng: np.random.Generator,
    chain: KinematicChain | None = None,
    sim: SimSpec = SimSpec(),
    cube_position: Vec3 | None = None,
) -> WorldState:
    """
    Начальное состояние эпизода.

    Args:
        spec: Режим сброса и параметры сцены
        rng: Генератор случайных чисел (в режиме Fixed не используется)
        chain: Цепь для ограничения углов пределами
        sim: Параметры симуляции (радиус захвата для start_grasped)
        cube_position: Позиция кубика, переопределяющая выбор по режиму

    Returns:
        WorldState с открытым схватом и step_count = 0
    """
    chain = chain or default_chain()
    base = _clamped(chain, spec.base_joint_angles)

    if spec.mode == ResetMode.FIXED:
        angles = base
        cube_at = spec.cube_base_position
    else:
        angles = base
        for _ in range(_RESET_ATTEMPTS):
            jitter = rng.uniform(-spec.joint_jitter, spec.joint_jitter, size=N_JOINTS)
            candidate = _clamped(chain, np.asarray(spec.base_joint_angles) + jitter)
            if _above_table(forward_kinematics(chain, ArmState(candidate))):
                angles = candidate
                break
        cube_at = sample_cube_position(spec, rng)

    if cube_position is not None:
        cube_at = cube_position

    arm = ArmState(joint_angles=angles, gripper_closed=False)
    cube = CubeState(position=tuple(float(c) for c in cube_at), half_extent=spec.cube_half_extent)

    if spec.start_grasped:
        point = forward_kinematics(chain, arm).gripper_point
        arm = replace(arm, gripper_closed=True)
        cube = replace(cube, position=(float(point[0]), float(point[1]), float(point[2])), grasped=True)

    return WorldState(arm=arm, cube=cube, step_count=0, succeeded=False)


def _format_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def world_to_record(world: WorldState) -> str:
    """Плоская запись key = value для отладки."""
    lines = [
        f"arm.joint_angles = {_format_floats(world.arm.joint_angles)}",
        f"arm.gripper_closed = {str(world.arm.gripper_closed).lower()}",
        f"cube.position = {_format_floats(world.cube.position)}",
        f"cube.half_extent = {world.cube.half_extent!r}",
        f"cube.grasped = {str(world.cube.grasped).lower()}",
        f"world.step_count = {world.step_count}",
        f"world.succeeded = {str(world.succeeded).lower()}",
    ]
    return "\n".join(lines) + "\n"


def world_from_record(text: str) -> WorldState:
    """Обратная операция к world_to_record."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("ожидается 'key = value'", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value

    def floats(key: str) -> tuple[float, ...]:
        return tuple(float(v) for v in values[key].split(","))

    def flag(key: str) -> bool:
        return values[key] == "true"

    try:
        return WorldState(
            arm=ArmState(joint_angles=floats("arm.joint_angles"), gripper_closed=flag("arm.gripper_closed")),
            cube=CubeState(
                position=floats("cube.position"),
                half_extent=float(values["cube.half_extent"]),
                grasped=flag("cube.grasped"),
            ),
            step_count=int(values["world.step_count"]),
            succeeded=flag("world.succeeded"),
        )
    except KeyError as e:
        raise ConfigError(f"в записи нет поля {e.args[0]}") from e
