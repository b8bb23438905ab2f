"""
Программный растеризатор наблюдения: ортографическая камера, серое изображение.

Слои рисуются по порядку, каждый следующий перекрывает предыдущий:
фон, стол, звенья руки, маркер схвата, кубик.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from exceptions import ConfigError, ShapeMismatchError
from sim import KinematicChain, WorldState, forward_kinematics


@dataclass(frozen=True)
class CameraSpec:
    """Ортографическая камера: направление взгляда, верх, центр кадра, пиксели на метр."""

    view_direction: tuple[float, float, float] = (0.0, 0.0, -1.0)
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    center: tuple[float, float, float] = (0.25, 0.2, 0.0)
    scale: float = 80.0

    def __post_init__(self) -> None:
        view = np.asarray(self.view_direction, dtype=np.float64)
        up = np.asarray(self.up, dtype=np.float64)
        if abs(float(np.linalg.norm(view)) - 1.0) > 1e-9:
            raise ConfigError("view_direction должен быть единичным", field="camera.view_direction")
        if abs(float(np.linalg.norm(up)) - 1.0) > 1e-9:
            raise ConfigError("up должен быть единичным", field="camera.up")
        if abs(float(view @ up)) > 1e-9:
            raise ConfigError("view_direction и up должны быть перпендикулярны", field="camera.up")
        if not self.scale > 0:
            raise ConfigError("scale > 0", field="camera.scale")

    @property
    def right(self) -> np.ndarray:
        return np.cross(np.asarray(self.view_direction, dtype=np.float64), np.asarray(self.up, dtype=np.float64))


@dataclass(frozen=True)
class RenderSpec:
    """Размер кадра, яркости слоёв, толщины и геометрия стола."""

    width: int = 64
    height: int = 64
    background: float = 0.0
    table: float = 0.2
    arm: float = 0.6
    gripper_open: float = 0.5
    gripper_closed: float = 0.9
    cube: float = 1.0
    link_thickness_px: float = 1.5
    gripper_radius_px: float = 2.0
    table_x: tuple[float, float] = (-0.2, 0.8)
    table_z: tuple[float, float] = (-0.4, 0.4)
    table_thickness: float = 0.05

    def __post_init__(self) -> None:
        for name in ("background", "table", "arm", "gripper_open", "gripper_closed", "cube"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"яркость {name} должна быть в [0, 1]", field=f"render.{name}")
        if self.gripper_open == self.gripper_closed:
            raise ConfigError("открытый и закрытый схват должны различаться", field="render.gripper_closed")
        if self.link_thickness_px < 0 or self.gripper_radius_px < 0:
            raise ConfigError("толщины не могут быть отрицательными", field="render.link_thickness_px")
        if not (self.table_x[0] < self.table_x[1] and self.table_z[0] < self.table_z[1]):
            raise ConfigError("пустая область стола", field="render.table_x")
        if self.table_thickness < 0:
            raise ConfigError("table_thickness >= 0", field="render.table_thickness")


@dataclass(frozen=True)
class Observation:
    """Кадр width x height, яркости в [0, 1], порядок строк сверху вниз."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width):
            raise ShapeMismatchError(
                f"pixels.shape={self.pixels.shape}, ожидалось ({self.height}, {self.width})"
            )
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("яркости наблюдения должны быть в [0, 1]")


def project(points: np.ndarray, camera: CameraSpec, width: int, height: int) -> np.ndarray:
    """Мировые точки (N, 3) -> пиксельные координаты (N, 2) как (x=столбец, y=строка)."""
    rel = np.atleast_2d(points) - np.asarray(camera.center, dtype=np.float64)
    u = (width - 1) / 2.0 + (rel @ camera.right) * camera.scale
    v = (height - 1) / 2.0 - (rel @ np.asarray(camera.up, dtype=np.float64)) * camera.scale
    return np.stack([u, v], axis=1)


def rasterize_segment(
    image: np.ndarray,
    p0,
    p1,
    thickness: float,
    intensity: float,
) -> np.ndarray:
    """
    Закрасить все пиксели не дальше thickness от отрезка p0-p1.

    Центр пикселя (строка r, столбец c) имеет координаты (x=c, y=r).
    Возвращает новое изображение; исходное не меняется.
    """
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"intensity={intensity} вне [0, 1]")
    out = image.copy()
    height, width = out.shape
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])

    c_lo = max(0, math.floor(min(x0, x1) - thickness))
    c_hi = min(width - 1, math.ceil(max(x0, x1) + thickness))
    r_lo = max(0, math.floor(min(y0, y1) - thickness))
    r_hi = min(height - 1, math.ceil(max(y0, y1) + thickness))
    if c_lo > c_hi or r_lo > r_hi:
        return out

    cols = np.arange(c_lo, c_hi + 1, dtype=np.float64)[None, :]
    rows = np.arange(r_lo, r_hi + 1, dtype=np.float64)[:, None]
    dx = x1 - x0
    dy = y1 - y0
    length2 = dx * dx + dy * dy
    if length2 == 0.0:
        t = np.zeros((rows.size, cols.size))
    else:
        t = np.clip(((cols - x0) * dx + (rows - y0) * dy) / length2, 0.0, 1.0)
    px = x0 + t * dx
    py = y0 + t * dy
    dist2 = (cols - px) ** 2 + (rows - py) ** 2
    mask = dist2 <= thickness * thickness
    out[r_lo:r_hi + 1, c_lo:c_hi + 1][mask] = intensity
    return out


def _table_mask(camera: CameraSpec, spec: RenderSpec) -> np.ndarray:
    """Пиксели, чей луч пересекает параллелепипед стола (метод пластин)."""
    width, height = spec.width, spec.height
    cols = np.arange(width, dtype=np.float64)[None, :]
    rows = np.arange(height, dtype=np.float64)[:, None]
    a = (cols - (width - 1) / 2.0) / camera.scale
    b = ((height - 1) / 2.0 - rows) / camera.scale
    center = np.asarray(camera.center, dtype=np.float64)
    right = camera.right
    up = np.asarray(camera.up, dtype=np.float64)
    view = np.asarray(camera.view_direction, dtype=np.float64)

    lows = (spec.table_x[0], -spec.table_thickness, spec.table_z[0])
    highs = (spec.table_x[1], 0.0, spec.table_z[1])
    t_enter = np.full((height, width), -np.inf)
    t_exit = np.full((height, width), np.inf)
    hit = np.ones((height, width), dtype=bool)
    for axis in range(3):
        origin = center[axis] + a * right[axis] + b * up[axis]
        direction = view[axis]
        if direction == 0.0:
            hit &= (origin >= lows[axis]) & (origin <= highs[axis])
            continue
        t1 = (lows[axis] - origin) / direction
        t2 = (highs[axis] - origin) / direction
        t_enter = np.maximum(t_enter, np.minimum(t1, t2))
        t_exit = np.minimum(t_exit, np.maximum(t1, t2))
    return hit & (t_exit >= t_enter)


def render(
    world: WorldState,
    chain: KinematicChain,
    camera: CameraSpec,
    width: int | None = None,
    height: int | None = None,
    spec: RenderSpec | None = None,
) -> Observation:
    """
    Отрисовать сцену.

    Args:
        world: Состояние мира (не изменяется)
        chain: Кинематическая цепь
        camera: Камера
        width, height: Размер кадра (перекрывают spec)
        spec: Яркости и толщины слоёв

    Returns:
        Observation
    """
    spec = spec or RenderSpec()
    width = spec.width if width is None else width
    height = spec.height if height is None else height
    if width <= 0 or height <= 0:
        raise ShapeMismatchError(f"размер кадра должен быть положительным, получено {width}x{height}")
    if (width, height) != (spec.width, spec.height):
        spec = _resized(spec, width, height)

    image = np.full((height, width), spec.background, dtype=np.float64)
    image[_table_mask(camera, spec)] = spec.table

    kin = forward_kinematics(chain, world.arm)
    joints = project(kin.segment_endpoints, camera, width, height)
    grip = project(kin.gripper_point, camera, width, height)[0]
    for start, end in zip(joints[:-1], joints[1:]):
        image = rasterize_segment(image, start, end, spec.link_thickness_px, spec.arm)
    image = rasterize_segment(image, joints[-1], grip, spec.link_thickness_px, spec.arm)

    marker = spec.gripper_closed if world.arm.gripper_closed else spec.gripper_open
    image = rasterize_segment(image, grip, grip, spec.gripper_radius_px, marker)

    image = _fill_cube(image, world, camera, spec)
    return Observation(width=width, height=height, pixels=image)


def _resized(spec: RenderSpec, width: int, height: int) -> RenderSpec:
    return replace(spec, width=width, height=height)


def _fill_cube(image: np.ndarray, world: WorldState, camera: CameraSpec, spec: RenderSpec) -> np.ndarray:
    """Кубик - закрашенный квадрат, не меньше одного пикселя."""
    height, width = image.shape
    u, v = project(np.asarray(world.cube.position, dtype=np.float64), camera, width, height)[0]
    half = max(world.cube.half_extent * camera.scale, 0.5)
    cols = np.arange(width, dtype=np.float64)[None, :]
    rows = np.arange(height, dtype=np.float64)[:, None]
    mask = (np.abs(cols - u) <= half) & (np.abs(rows - v) <= half)
    out = image.copy()
    out[mask] = spec.cube
    return out


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Яркости [0, 1] -> 8-битные коды, округление к ближайшему (половина вверх)."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path: str | Path, pixels: np.ndarray) -> Path:
    """Сохранить изображение в бинарный PGM (P5, 8 бит)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = pixels if pixels.dtype == np.uint8 else quantize(pixels)
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    """Прочитать бинарный PGM, записанный write_pgm."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: не бинарный PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: поддерживается только maxval 255")
    pos += 1
    data = np.frombuffer(raw[pos:pos + width * height], dtype=np.uint8)
    if data.size != width * height:
        raise ValueError(f"{path}: файл обрезан")
    return data.reshape(height, width).copy()
