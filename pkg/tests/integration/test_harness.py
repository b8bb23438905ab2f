#!/usr/bin/env python3
"""
Интеграционные тесты оркестрации: эпизоды, обучение с возобновлением,
оценка, перекрёстная оценка, трасса и карты признаков.
"""

import csv
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

# Добавляем корневую директорию в путь для импортов
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from config import RunConfig, format_config, parse_config, with_overrides
from dqn import checkpoint_paths
from harness import (
    METRICS_COLUMNS,
    REFERENCE_MATRIX,
    OpenForeverPolicy,
    QPolicy,
    RandomPolicy,
    ScriptedOraclePolicy,
    activation_dump,
    cross_evaluate,
    environment_spec,
    evaluate,
    moving_average,
    read_metrics,
    render_observation,
    target_reached,
    train,
    value_trace,
)
from renderer import read_pgm
from sim import ResetMode
from tensor_nn import init_params, load_params

CONFIGS_DIR = Path(__file__).parent.parent.parent / "configs"


def small_config(**sections) -> RunConfig:
    """Конфигурация для быстрых тестов: кадр 32x32, маленькая сеть, короткие эпизоды."""
    base = {
        "run": {"name": "itest", "seed": 5},
        "reset": {"max_episode_steps": 20},
        "render": {"width": 32, "height": 32, "link_thickness_px": 1.0, "gripper_radius_px": 1.5},
        "camera": {"scale": 40.0},
        "network": {"conv_channels": (4, 8, 8), "hidden_units": 16},
        "agent": {
            "batch_size": 4,
            "min_replay_before_learning": 10,
            "replay_capacity": 200,
            "target_sync_period": 7,
            "learning_rate": 1e-3,
        },
        "schedule": {"anneal_span": 100},
        "harness": {"episodes": 3, "checkpoint_every": 2},
        "registry": {"enabled": False},
    }
    for section, changes in sections.items():
        base.setdefault(section, {}).update(changes)
    return with_overrides(RunConfig(), **base)


def test_scripted_oracle_lifts():
    """Эталонная политика с кубиком в схвате поднимает его до успеха."""
    print("TEST: Эталонная политика")
    print("=" * 50)

    config = small_config(reset={"start_grasped": True, "max_episode_steps": 1000})
    report = evaluate(ScriptedOraclePolicy(), config, episodes=3, epsilon=0.0, seed=0)
    print(f"   Длины эпизодов: {report.lengths}")
    assert report.success_rate == 1.0, "Все эпизоды должны закончиться успехом"
    assert max(report.lengths) <= 60
    print("   [OK]")


def test_scripted_oracle_solves_environment_a():
    """Эталонная политика из обычного старта A: 50 эпизодов при ε = 0.1, все успешны."""
    print("TEST: Эталонная политика в окружении A")
    print("=" * 50)

    config = small_config(reset={"max_episode_steps": 1000})
    report = evaluate(ScriptedOraclePolicy(), config, episodes=50, epsilon=0.1, seed=0,
                      reset_spec=environment_spec(config, "A"))
    print(f"   Длины эпизодов: {min(report.lengths)}..{max(report.lengths)}")
    assert report.success_rate == 1.0, f"Успехов {report.successes} из 50"
    print("   [OK]")


def test_random_policy_rarely_succeeds():
    """Случайная политика на настольном пресете: меньше 10% успехов."""
    config = with_overrides(parse_config(CONFIGS_DIR / "desk.conf"), registry={"enabled": False})
    report = evaluate(RandomPolicy(np.random.default_rng(0)), config, episodes=50, epsilon=0.1, seed=0)
    assert report.success_rate < 0.1, f"Случайная политика: {report.success_rate:.0%} успехов"


def test_train_stops_at_target_rate():
    """Обучение останавливается, когда доля успехов в окне достигла порога."""
    print("TEST: Досрочная остановка")
    print("=" * 50)

    # кубик в схвате и низкая планка: почти любое первое действие - успех
    config = small_config(
        reset={"start_grasped": True, "lift_height": 0.01},
        harness={"episodes": 10, "checkpoint_every": 5, "stop_success_rate": 0.5, "success_window": 2},
    )
    assert not target_reached([], config.harness)
    with tempfile.TemporaryDirectory() as tmp:
        result = train(config, Path(tmp) / "run")
        stopped = len(result.episodes)
        print(f"   Остановка на эпизоде {stopped}")
        assert stopped < 10, "Обучение должно остановиться раньше лимита эпизодов"
        assert target_reached(result.episodes, config.harness)
        assert not target_reached(result.episodes[:-1], config.harness)
        checkpoints = Path(tmp) / "run" / "checkpoints"
        assert result.last_checkpoint == checkpoints / f"ep{stopped:06d}.ckpt"
        assert sorted(p.name for p in checkpoints.glob("*.replay")) == [f"ep{stopped:06d}.replay"]
        print("   [OK]")

        print("Повторный запуск после остановки...")
        again = train(config, Path(tmp) / "run")
        assert again.resumed_from == stopped and len(again.episodes) == stopped
        print("   [OK]")


def test_train_keeps_input_resolved_conf():
    """Если входной файл и есть resolved.conf каталога запуска, он не перезаписывается."""
    config = small_config(harness={"episodes": 1})
    with tempfile.TemporaryDirectory() as tmp:
        run_dir = Path(tmp) / "run"
        run_dir.mkdir()
        source = run_dir / "resolved.conf"
        text = "# правленый вручную\n" + format_config(config)
        source.write_text(text, encoding="utf-8")
        train(parse_config(source), run_dir, config_path=source)
        assert source.read_text(encoding="utf-8") == text, "resolved.conf не должен перезаписываться"

        train(parse_config(source), run_dir)
        assert source.read_text(encoding="utf-8") == format_config(config)


@pytest.mark.slow
def test_desk_preset_reaches_target():
    """Настольный пресет: 80% успехов в последних 50 эпизодах за отведённые 30 минут."""
    print("TEST: Настольный пресет")
    print("=" * 50)

    config = with_overrides(parse_config(CONFIGS_DIR / "desk.conf"), registry={"enabled": False})
    with tempfile.TemporaryDirectory() as tmp:
        started = time.monotonic()
        result = train(config, Path(tmp) / "desk")
        elapsed = time.monotonic() - started
    print(f"   Эпизодов: {len(result.episodes)}, {elapsed / 60:.1f} мин")
    assert result.trailing_success_rate(50) >= 0.8
    assert elapsed <= 30 * 60, f"Обучение заняло {elapsed / 60:.1f} мин"
    print("   [OK]")


def test_open_forever_times_out():
    """Политика, которая только открывает схват, доходит до лимита 1000 шагов."""
    config = small_config(reset={"max_episode_steps": 1000})
    report = evaluate(OpenForeverPolicy(), config, episodes=1, epsilon=0.0, seed=0)
    assert report.outcomes == (False,)
    assert report.lengths == (1000,)


def test_evaluate_is_read_only_and_deterministic():
    """Оценка не меняет параметры; тот же seed - те же исходы."""
    print("TEST: Оценка")
    print("=" * 50)

    config = small_config(reset={"max_episode_steps": 10})
    params = init_params(config.network_spec(), np.random.default_rng(0))
    checksum = params.checksum()

    report = evaluate(QPolicy(params), config, episodes=50, epsilon=0.1, seed=3)
    assert report.episodes == 50 and len(report.outcomes) == 50
    assert 0.0 <= report.success_rate <= 1.0
    assert all(length == 10 for length in report.lengths)
    assert params.checksum() == checksum, "Оценка не должна менять параметры"
    print("   [OK]")

    again = evaluate(QPolicy(params), config, episodes=50, epsilon=0.1, seed=3)
    assert again == report
    print("   [OK]")


def test_train_writes_metrics_and_checkpoints():
    """Каждый эпизод - строка metrics.csv, контрольные точки по расписанию и в конце."""
    print("TEST: Обучение")
    print("=" * 50)

    config = small_config()
    with tempfile.TemporaryDirectory() as tmp:
        result = train(config, Path(tmp) / "run")

        print("1. Метрики...")
        with open(result.metrics_path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == METRICS_COLUMNS
        assert len(rows) == 1 + 3
        episodes = read_metrics(result.metrics_path)
        assert [m.episode_index for m in episodes] == [1, 2, 3]
        assert all(m.length == 20 and not m.success for m in episodes)
        assert all(m.cumulative_successes == 0 for m in episodes)
        assert episodes[0].epsilon > episodes[-1].epsilon
        print("   [OK]")

        print("2. Контрольные точки...")
        checkpoints = Path(tmp) / "run" / "checkpoints"
        for stem in ("ep000002", "ep000003"):
            for key, path in checkpoint_paths(checkpoints, stem).items():
                if key != "replay":
                    assert path.exists(), f"Нет файла {path.name}"
        assert result.last_checkpoint == checkpoints / "ep000003.ckpt"
        assert (Path(tmp) / "run" / "resolved.conf").exists()
        print("   [OK]")

        print("3. Снимок буфера только у последней точки...")
        assert sorted(p.name for p in checkpoints.glob("*.replay")) == ["ep000003.replay"]
        params = load_params(checkpoints / "ep000002.ckpt", config.network_spec())
        assert params.spec == config.network_spec(), "Ранняя контрольная точка должна читаться без буфера"
        print("   [OK]")


def test_resume_matches_uninterrupted_run():
    """Прерванный и возобновлённый запуск совпадает с непрерывным побайтно."""
    print("TEST: Возобновление")
    print("=" * 50)

    full = small_config(reset={"mode": ResetMode.RANDOMIZED}, harness={"episodes": 4})
    half = with_overrides(full, harness={"episodes": 2})
    with tempfile.TemporaryDirectory() as tmp:
        straight = train(full, Path(tmp) / "straight")

        resumed_dir = Path(tmp) / "resumed"
        train(half, resumed_dir)
        resumed = train(full, resumed_dir)
        assert resumed.resumed_from == 2

        assert straight.metrics_path.read_bytes() == resumed.metrics_path.read_bytes()
        a = checkpoint_paths(Path(tmp) / "straight" / "checkpoints", "ep000004")
        b = checkpoint_paths(resumed_dir / "checkpoints", "ep000004")
        for key in ("online", "target", "adam_m", "adam_v", "replay"):
            assert a[key].read_bytes() == b[key].read_bytes(), f"{key} различается"
        print("   [OK]")

        print("Повторный запуск без новых эпизодов...")
        again = train(full, resumed_dir)
        assert again.resumed_from == 4 and len(again.episodes) == 4
        assert straight.metrics_path.read_bytes() == again.metrics_path.read_bytes()
        print("   [OK]")


def test_cross_evaluate_matrix():
    config = small_config(reset={"max_episode_steps": 5})
    spec = config.network_spec()
    policy_a = QPolicy(init_params(spec, np.random.default_rng(1)))
    policy_b = QPolicy(init_params(spec, np.random.default_rng(2)))
    report = cross_evaluate(policy_a, policy_b, config, episodes=2, epsilon=0.1, seed=0)
    assert set(report.matrix) == {("A", "A"), ("A", "B"), ("B", "A"), ("B", "B")}
    assert report.reference == REFERENCE_MATRIX
    assert all(r.episodes == 2 for r in report.reports.values())
    assert "Agent A" in report.format()


def test_value_trace():
    """Трасса: кадр и max Q на каждый шаг жадного эпизода."""
    config = small_config(reset={"max_episode_steps": 15})
    params = init_params(config.network_spec(), np.random.default_rng(0))
    with tempfile.TemporaryDirectory() as tmp:
        trace = value_trace(QPolicy(params), config, seed=0, out_dir=tmp)
        assert [f.frame for f in trace.frames] == list(range(15))
        assert len(trace.frame_paths) == 15
        assert read_pgm(trace.frame_paths[0]).shape == (32, 32)
        lines = trace.csv_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "frame,max_q,reward" and len(lines) == 16
        assert not trace.success


def test_activation_dump_zero_input():
    """Нулевой кадр даёт чёрные карты признаков."""
    config = small_config()
    params = init_params(config.network_spec(), np.random.default_rng(0))
    with tempfile.TemporaryDirectory() as tmp:
        dump = activation_dump(params, np.zeros((32, 32), dtype=np.uint8), tmp)
        assert [layer.shape[0] for layer in dump.layers] == [4, 8, 8]
        assert len(dump.paths) == 4 + 8 + 8
        assert dump.paths[0].name == "conv0_ch00.pgm"
        assert all(np.all(read_pgm(p) == 0) for p in dump.paths)


def test_render_observation_and_helpers():
    config = small_config()
    codes = render_observation(config)
    assert codes.shape == (32, 32) and codes.dtype == np.uint8
    assert np.array_equal(codes, render_observation(config))
    assert np.allclose(moving_average([1, 0, 1, 1], 2), [1.0, 0.5, 0.5, 1.0])
    policy = RandomPolicy(np.random.default_rng(0))
    assert policy.action_scores(codes).shape == (14,)


if __name__ == "__main__":
    test_scripted_oracle_lifts()
    test_open_forever_times_out()
    test_evaluate_is_read_only_and_deterministic()
    test_train_writes_metrics_and_checkpoints()
    test_resume_matches_uninterrupted_run()
    print("\nВсе интеграционные тесты пройдены")
