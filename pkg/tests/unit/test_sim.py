#!/usr/bin/env python3
"""
Тесты симулятора: кинематика, захват, награда, лимит шагов, стол.
"""

import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

# Добавляем корневую директорию в путь для импортов
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from exceptions import InvalidActionError, SimulationError
from sim import (
    CLOSE_GRIPPER,
    N_ACTIONS,
    OPEN_GRIPPER,
    ArmState,
    CubeState,
    KinematicChain,
    Link,
    ResetMode,
    ResetSpec,
    SimSpec,
    Termination,
    WorldState,
    apply_action,
    compute_reward,
    default_chain,
    forward_kinematics,
    gripper_cube_distance,
    grasp_check,
    reset,
    sample_cube_position,
    step,
    world_from_record,
    world_to_record,
)

CHAIN = default_chain()
# поза в пределах радиуса захвата от кубика в (0.35, 0, 0), схват над кубиком
GRASP_POSE = (0.0, -20.0, -110.0, 0.0, -48.0, 0.0)


def _random_world(rng: np.random.Generator, spec: ResetSpec, moves: int) -> WorldState:
    world = reset(spec, rng, CHAIN)
    for _ in range(moves):
        world = apply_action(world, CHAIN, int(rng.integers(0, N_ACTIONS)), spec)
        if world.succeeded:
            break
    return world


def test_forward_kinematics():
    """Прямая кинематика в нулевой и базовой позе."""
    print("TEST: Прямая кинематика")
    print("=" * 50)

    print("1. Нулевые углы - рука вытянута вверх...")
    kin = forward_kinematics(CHAIN, ArmState((0.0,) * 6))
    total = sum(link.link_length for link in CHAIN.links) + CHAIN.gripper_reach
    assert np.allclose(kin.gripper_point, (0.0, total, 0.0)), f"Схват должен быть в (0, {total}, 0)"
    assert kin.segment_endpoints.shape == (7, 3), "Должно быть 7 точек цепи"
    print("   [OK]")

    print("2. Базовая поза сброса...")
    kin = forward_kinematics(CHAIN, ArmState(ResetSpec().base_joint_angles))
    assert kin.gripper_point[0] == pytest.approx(0.4376, abs=1e-3)
    assert kin.gripper_point[1] == pytest.approx(0.1992, abs=1e-3)
    assert kin.gripper_point[2] == pytest.approx(0.0, abs=1e-12)
    print("   [OK]")

    print("3. Поза захвата рядом с кубиком...")
    world = WorldState(ArmState(GRASP_POSE), CubeState((0.35, 0.0, 0.0)))
    distance = gripper_cube_distance(world, CHAIN)
    assert distance == pytest.approx(0.0225, abs=1e-3)
    assert distance <= SimSpec().grasp_radius
    print("   [OK]")


def test_grasp_boundary_inclusive():
    """Расстояние ровно grasp_radius засчитывается как захват."""
    print("TEST: Граница захвата")
    print("=" * 50)

    world = WorldState(ArmState(GRASP_POSE), CubeState((0.35, 0.0, 0.0)))
    distance = gripper_cube_distance(world, CHAIN)

    print("1. d == radius...")
    assert grasp_check(world, CHAIN, distance), "Граница должна быть включительной"
    print("   [OK]")

    print("2. d чуть больше radius...")
    assert not grasp_check(world, CHAIN, distance * (1.0 - 1e-9)), "За границей захвата быть не должно"
    print("   [OK]")

    print("3. Уже захваченный кубик...")
    held = replace(world, cube=replace(world.cube, grasped=True))
    assert not grasp_check(held, CHAIN, 1.0), "Повторный захват невозможен"
    print("   [OK]")


def test_close_then_lift_succeeds():
    """Закрыть схват у кубика и поднимать локтем до успеха."""
    print("TEST: Захват и подъём")
    print("=" * 50)

    spec = ResetSpec()
    world = WorldState(ArmState(GRASP_POSE), CubeState((0.35, 0.0, 0.0)))

    print("1. Закрытие схвата...")
    result = step(world, CHAIN, CLOSE_GRIPPER, spec)
    assert result.next.cube.grasped, "Кубик должен быть захвачен"
    assert result.next.arm.gripper_closed
    assert result.reward == pytest.approx(1.0 + result.next.cube.position[1])
    assert result.status == Termination.CONTINUE
    print("   [OK]")

    print("2. Подъём (локоть +1°)...")
    world = result.next
    for _ in range(100):
        result = step(world, CHAIN, 4, spec)
        world = result.next
        if result.status != Termination.CONTINUE:
            break
    assert result.status == Termination.SUCCESS, "Подъём должен закончиться успехом"
    assert result.reward == 100.0
    assert world.cube.position[1] >= spec.lift_height
    print(f"   Шагов: {world.step_count}")
    print("   [OK]")

    print("3. Открытие схвата роняет кубик...")
    held = replace(world, succeeded=False)
    dropped = apply_action(held, CHAIN, OPEN_GRIPPER, spec)
    assert not dropped.cube.grasped
    assert dropped.cube.position[1] == 0.0
    print("   [OK]")


def test_reward_formula():
    """Награда совпадает с формулой во всех трёх ветвях: успех, кубик в схвате, расстояние."""
    print("TEST: Формула награды")
    print("=" * 50)

    rng = np.random.default_rng(0)
    spec = ResetSpec(mode=ResetMode.RANDOMIZED)
    sim = SimSpec()

    print("1. Кубик на столе: exp(-0.25·d)...")
    for _ in range(300):
        world = _random_world(rng, spec, int(rng.integers(0, 20)))
        world = replace(world, cube=CubeState(sample_cube_position(spec, rng)), succeeded=False)
        point = forward_kinematics(CHAIN, world.arm).gripper_point
        d = math.dist(point.tolist(), world.cube.position)
        reward = compute_reward(world, CHAIN, spec, sim)
        assert abs(reward - math.exp(-0.25 * d)) <= 1e-12, f"Награда {reward} != exp(-0.25·{d})"
    print("   [OK]")

    print("2. Кубик в схвате: 1 + высота...")
    world = step(WorldState(ArmState(GRASP_POSE), CubeState((0.35, 0.0, 0.0))), CHAIN, CLOSE_GRIPPER, spec).next
    held = 0
    for _ in range(300):
        world = apply_action(world, CHAIN, int(rng.choice([2, 3, 4, 5])), spec)
        if world.succeeded or not world.cube.grasped:
            break
        reward = compute_reward(world, CHAIN, spec, sim)
        assert abs(reward - (1.0 + world.cube.position[1])) <= 1e-12
        held += 1
    assert held > 10, "Нужны состояния с кубиком в схвате"
    print("   [OK]")

    print("3. Успех: 100...")
    lifted = replace(world, cube=replace(world.cube, position=(0.3, 0.31, 0.0), grasped=True), succeeded=True)
    assert compute_reward(lifted, CHAIN, spec, sim) == 100.0
    print("   [OK]")


def test_episode_cap():
    """Эпизод заканчивается ровно на 1000-м шаге."""
    print("TEST: Лимит шагов")
    print("=" * 50)

    spec = ResetSpec()
    world = reset(spec, np.random.default_rng(0), CHAIN)
    statuses = []
    for _ in range(spec.max_episode_steps):
        result = step(world, CHAIN, OPEN_GRIPPER, spec)
        world = result.next
        statuses.append(result.status)

    assert world.step_count == 1000
    assert statuses[-1] == Termination.TIMEOUT
    assert all(s == Termination.CONTINUE for s in statuses[:-1])
    print("   [OK]")

    print("Шаг после лимита...")
    with pytest.raises(SimulationError):
        apply_action(world, CHAIN, OPEN_GRIPPER, spec)
    print("   [OK]")


def test_invalid_action():
    world = reset(ResetSpec(), np.random.default_rng(0), CHAIN)
    for bad in (-1, 14, 2.0, True):
        with pytest.raises(InvalidActionError):
            apply_action(world, CHAIN, bad, ResetSpec())


def test_arm_stays_above_table():
    """Случайное блуждание: ни одна точка руки не уходит под стол."""
    print("TEST: Контакт со столом")
    print("=" * 50)

    rng = np.random.default_rng(3)
    spec = ResetSpec(mode=ResetMode.RANDOMIZED)
    world = reset(spec, rng, CHAIN)
    for _ in range(999):
        world = apply_action(world, CHAIN, int(rng.integers(0, 12)), spec)
        kin = forward_kinematics(CHAIN, world.arm)
        assert np.all(kin.segment_endpoints[1:, 1] >= 0.0), "Звено ушло под стол"
        assert kin.gripper_point[1] >= 0.0, "Схват ушёл под стол"
        for link, angle in zip(CHAIN.links, world.arm.joint_angles):
            assert link.joint_min <= angle <= link.joint_max
    print("   [OK]")


def test_controlled_joints_mask():
    """Неуправляемый сустав не двигается, шаг всё равно считается."""
    spec = ResetSpec()
    sim = SimSpec(controlled_joints=(1, 2))
    world = reset(spec, np.random.default_rng(0), CHAIN, sim)
    moved = apply_action(world, CHAIN, 0, spec, sim)
    assert moved.arm.joint_angles == world.arm.joint_angles
    assert moved.step_count == 1
    moved = apply_action(world, CHAIN, 2, spec, sim)
    assert moved.arm.joint_angles[1] == world.arm.joint_angles[1] + 1.0


def test_reset_modes():
    """Fixed не зависит от rng, Randomized кладёт кубик в область."""
    print("TEST: Режимы сброса")
    print("=" * 50)

    print("1. Fixed...")
    a = reset(ResetSpec(), np.random.default_rng(1), CHAIN)
    b = reset(ResetSpec(), np.random.default_rng(2), CHAIN)
    assert a == b, "Fixed сброс должен быть одинаковым"
    assert not a.arm.gripper_closed and a.step_count == 0
    print("   [OK]")

    print("2. Randomized...")
    spec = ResetSpec(mode=ResetMode.RANDOMIZED)
    rng = np.random.default_rng(5)
    half_w, half_d = spec.cube_region[0] / 2, spec.cube_region[1] / 2
    for _ in range(200):
        world = reset(spec, rng, CHAIN)
        x, y, z = world.cube.position
        assert y == 0.0
        assert abs(x - 0.35) <= half_w and abs(z) <= half_d
        kin = forward_kinematics(CHAIN, world.arm)
        assert np.all(kin.segment_endpoints[1:, 1] >= 0.0)
    print("   [OK]")

    print("3. Тот же seed - тот же сброс...")
    assert reset(spec, np.random.default_rng(9), CHAIN) == reset(spec, np.random.default_rng(9), CHAIN)
    print("   [OK]")


def test_planar_chain_matches_trigonometry():
    """Все оси z, звенья по 0.1 м: точка схвата считается по плоской тригонометрии."""
    print("TEST: Плоская цепь")
    print("=" * 50)

    planar = KinematicChain(
        links=tuple(Link((0.0, 0.0, 1.0), 0.1, -180.0, 180.0) for _ in range(6)),
        gripper_reach=0.0,
    )

    print("1. Поворот основания на 90°...")
    point = forward_kinematics(planar, ArmState((90.0, 0.0, 0.0, 0.0, 0.0, 0.0))).gripper_point
    assert np.allclose(point, (-0.6, 0.0, 0.0), rtol=0.0, atol=1e-12), f"Ожидалось (-0.6, 0, 0), получено {point}"
    print("   [OK]")

    print("2. Случайные углы...")
    rng = np.random.default_rng(2)
    for _ in range(100):
        angles = rng.uniform(-90.0, 90.0, size=6)
        heading = np.radians(np.cumsum(angles))
        expected = (-0.1 * np.sin(heading).sum(), 0.1 * np.cos(heading).sum(), 0.0)
        point = forward_kinematics(planar, ArmState(tuple(angles))).gripper_point
        assert np.allclose(point, expected, rtol=0.0, atol=1e-12)
    print("   [OK]")


def test_joint_step_is_reversible():
    """+1° и затем -1° на том же суставе возвращают схват в ту же точку."""
    spec = ResetSpec()
    world = reset(spec, np.random.default_rng(0), CHAIN)
    start = forward_kinematics(CHAIN, world.arm).gripper_point
    for joint in range(6):
        there = apply_action(world, CHAIN, 2 * joint, spec)
        assert there.arm.joint_angles[joint] == world.arm.joint_angles[joint] + 1.0
        back = apply_action(there, CHAIN, 2 * joint + 1, spec)
        assert back.arm.joint_angles == world.arm.joint_angles
        point = forward_kinematics(CHAIN, back.arm).gripper_point
        assert np.allclose(point, start, rtol=0.0, atol=1e-12)
        assert back.step_count == 2


def test_open_gripper_knocks_cube():
    """Открытый схват внутри кубика сдвигает его по горизонтали, закрытый - нет."""
    print("TEST: Столкновение с кубиком")
    print("=" * 50)

    spec = ResetSpec()
    # сустав 0 не управляется: действие 0 не двигает руку
    sim = SimSpec(controlled_joints=(1, 2))
    arm = ArmState(GRASP_POSE)
    px, py, pz = forward_kinematics(CHAIN, arm).gripper_point.tolist()

    print("1. Точка захвата в 5 мм от центра по x...")
    world = WorldState(arm, CubeState((px + 0.005, py, pz)))
    moved = apply_action(world, CHAIN, 0, spec, sim)
    x, y, z = moved.cube.position
    assert moved.arm == arm
    assert abs(x - (px + 0.015)) <= 1e-8, f"Кубик должен отъехать до x={px + 0.015}, получено {x}"
    assert y == py and z == pz, "Высота и z кубика не меняются"
    assert abs(x - px) >= moved.cube.half_extent, "Точка захвата должна оказаться снаружи"
    assert not moved.cube.grasped
    print("   [OK]")

    print("2. Точка в самом центре - сдвиг вдоль +x...")
    world = WorldState(arm, CubeState((px, py, pz)))
    moved = apply_action(world, CHAIN, 0, spec, sim)
    assert moved.cube.position[0] > px + 0.015 - 1e-12
    assert moved.cube.position[1:] == (py, pz)
    print("   [OK]")

    print("3. Закрытый схват...")
    closed = WorldState(replace(arm, gripper_closed=True), CubeState((px + 0.005, py, pz)))
    assert apply_action(closed, CHAIN, 0, spec, sim).cube == closed.cube
    print("   [OK]")


def test_randomized_reset_bounds():
    """1000 сбросов: углы в пределах ±20° от базы, кубик во всех четырёх квадрантах области."""
    print("TEST: Разброс сброса Randomized")
    print("=" * 50)

    spec = ResetSpec(mode=ResetMode.RANDOMIZED)
    rng = np.random.default_rng(21)
    quadrants = set()
    for _ in range(1000):
        world = reset(spec, rng, CHAIN)
        jitter = np.abs(np.subtract(world.arm.joint_angles, spec.base_joint_angles))
        assert np.all(jitter <= spec.joint_jitter), f"Углы {world.arm.joint_angles} дальше 20° от базы"
        x, _, z = world.cube.position
        quadrants.add((x >= spec.cube_base_position[0], z >= spec.cube_base_position[2]))
    assert len(quadrants) == 4, f"Покрыты квадранты {quadrants}"
    print("   [OK]")


def test_joint_limits_under_random_actions():
    """10^5 случайных действий: углы в пределах, у захваченного кубика расстояние 0."""
    print("TEST: Случайные действия")
    print("=" * 50)

    specs = (
        ResetSpec(mode=ResetMode.RANDOMIZED, start_grasped=True, max_episode_steps=500),
        ResetSpec(mode=ResetMode.RANDOMIZED, base_joint_angles=(165.0, -10.0, -90.0, 165.0, -48.0, -165.0),
                  max_episode_steps=500),
    )
    rng = np.random.default_rng(13)
    episode = 0
    spec = specs[0]
    world = reset(spec, rng, CHAIN)
    grasped_states = 0
    limit_hits = 0
    for _ in range(100_000):
        if world.succeeded or world.step_count >= spec.max_episode_steps:
            episode += 1
            spec = specs[episode % 2]
            world = reset(spec, rng, CHAIN)
        world = apply_action(world, CHAIN, int(rng.integers(0, N_ACTIONS)), spec)
        for link, angle in zip(CHAIN.links, world.arm.joint_angles):
            assert link.joint_min <= angle <= link.joint_max, f"Угол {angle} вне [{link.joint_min}, {link.joint_max}]"
            limit_hits += angle in (link.joint_min, link.joint_max)
        if world.cube.grasped:
            assert gripper_cube_distance(world, CHAIN) <= 1e-12
            grasped_states += 1
    assert grasped_states > 0 and limit_hits > 0
    print(f"   С кубиком: {grasped_states}, на пределе: {limit_hits}")
    print("   [OK]")


def test_joint_clamped_at_limit():
    spec = ResetSpec()
    world = WorldState(ArmState((170.0, -10.0, -90.0, 0.0, -48.0, 0.0)), CubeState((0.35, 0.0, 0.0)))
    pushed = apply_action(world, CHAIN, 0, spec)
    assert pushed.arm.joint_angles[0] == 170.0
    assert pushed.step_count == 1


def test_world_record_roundtrip():
    rng = np.random.default_rng(11)
    world = _random_world(rng, ResetSpec(mode=ResetMode.RANDOMIZED), 50)
    assert world_from_record(world_to_record(world)) == world


if __name__ == "__main__":
    test_forward_kinematics()
    test_grasp_boundary_inclusive()
    test_close_then_lift_succeeds()
    test_reward_formula()
    test_episode_cap()
    test_arm_stays_above_table()
    test_reset_modes()
    test_planar_chain_matches_trigonometry()
    test_open_gripper_knocks_cube()
    test_randomized_reset_bounds()
    print("\nВсе тесты симулятора пройдены")
