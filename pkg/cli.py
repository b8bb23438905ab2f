"""
Точка входа командной строки.

Подкоманды:
    train <config>                              обучение (с возобновлением)
    eval <config> <checkpoint>                  50 эпизодов с ε = 0.1
    cross-eval <config> <ckpt_A> <ckpt_B>       матрица успехов 2x2
    trace <config> <checkpoint>                 трасса функции ценности
    activations <config> <checkpoint> <image>   карты признаков
    render <config>                             один кадр наблюдения
    selftest                                    градиенты и табличный оракул

Запуск:
    python cli.py train configs/desk.conf
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from config import RunConfig, parse_config, run_directory, write_resolved_config
from exceptions import GraspDQNError
from harness import (
    QPolicy,
    RunRecorder,
    activation_dump,
    cross_evaluate,
    evaluate,
    render_observation,
    train,
    value_trace,
)
from logging_config import log_error_with_context, log_startup_info, setup_logging
from models import RunKind
from oracles import run_gradient_suite, run_tabular_oracle
from renderer import read_pgm, write_pgm
from tensor_nn import load_params
from version import get_version

logger = logging.getLogger("grasp_dqn")


def _prepare(config_path: str, log_to_file: bool = True) -> tuple[RunConfig, Path]:
    """Загрузить конфигурацию, настроить логи и записать resolved.conf в каталог запуска."""
    config = parse_config(config_path)
    run_dir = run_directory(config)
    setup_logging(os.getenv("LOG_LEVEL", "INFO"), run_dir / "logs" if log_to_file else None)
    write_resolved_config(config, run_dir, source=config_path)
    return config, run_dir


def cmd_train(args: argparse.Namespace) -> int:
    config, run_dir = _prepare(args.config)
    log_startup_info(logger, config)
    result = train(config, run_dir, config_path=args.config)
    print(f"episodes={len(result.episodes)}")
    print(f"trailing_success_rate={result.trailing_success_rate():.4f}")
    print(f"metrics={result.metrics_path}")
    print(f"checkpoint={result.last_checkpoint}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config, _ = _prepare(args.config)
    params = load_params(args.checkpoint, config.network_spec())
    episodes = args.episodes or config.harness.eval_episodes
    epsilon = config.harness.eval_epsilon if args.epsilon is None else args.epsilon
    report = evaluate(QPolicy(params), config, episodes, epsilon, seed=config.run.seed)
    RunRecorder(config, RunKind.EVAL).record_evaluation(config.reset.mode.value, str(args.checkpoint), report)
    print(f"episodes={report.episodes}")
    print(f"epsilon={report.epsilon}")
    print(f"successes={report.successes}")
    print(f"success_rate={report.success_rate}")
    return 0


def cmd_cross_eval(args: argparse.Namespace) -> int:
    config, run_dir = _prepare(args.config)
    spec = config.network_spec()
    policy_a = QPolicy(load_params(args.checkpoint_a, spec))
    policy_b = QPolicy(load_params(args.checkpoint_b, spec))
    report = cross_evaluate(
        policy_a,
        policy_b,
        config,
        episodes=config.harness.eval_episodes,
        epsilon=config.harness.eval_epsilon,
        seed=config.run.seed,
    )
    recorder = RunRecorder(config, RunKind.CROSS_EVAL)
    agents = {"A": str(args.checkpoint_a), "B": str(args.checkpoint_b)}
    lines = ["environment,agent,success_rate,reference"]
    for (env_label, agent_label), rate in report.matrix.items():
        recorder.record_evaluation(env_label, agents[agent_label], report.reports[(env_label, agent_label)])
        lines.append(f"{env_label},{agent_label},{rate!r},{report.reference[(env_label, agent_label)]!r}")
    out = run_dir / "cross_eval.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(report.format())
    print(f"matrix={out}")
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    config, run_dir = _prepare(args.config)
    params = load_params(args.checkpoint, config.network_spec())
    seed = config.run.seed if args.seed is None else args.seed
    result = value_trace(QPolicy(params), config, seed, run_dir / "trace")
    print(f"frames={len(result.frames)}")
    print(f"success={int(result.success)}")
    print(f"trace={result.csv_path}")
    return 0


def cmd_activations(args: argparse.Namespace) -> int:
    config, run_dir = _prepare(args.config)
    params = load_params(args.checkpoint, config.network_spec())
    codes = read_pgm(args.image)
    result = activation_dump(params, codes, run_dir / "activations" / Path(args.image).stem)
    for k, layer in enumerate(result.layers):
        print(f"conv{k}: {layer.shape[0]} channels {layer.shape[1]}x{layer.shape[2]}")
    print(f"images={len(result.paths)}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    config, run_dir = _prepare(args.config)
    codes = render_observation(config)
    out = Path(args.out) if args.out else run_dir / "observation.pgm"
    write_pgm(out, codes)
    print(f"image={out}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    setup_logging(os.getenv("LOG_LEVEL", "INFO"))
    ok = True
    for check in run_gradient_suite(seed=args.seed, instances=args.instances):
        status = "ok" if check.passed else "FAIL"
        print(f"gradient {check.name}: max_rel_error={check.max_error:.3e} {status}")
        ok = ok and check.passed
    tabular = run_tabular_oracle(seed=args.seed)
    print(f"tabular: max_abs_error={tabular.max_error:.3e} {'ok' if tabular.passed else 'FAIL'}")
    ok = ok and tabular.passed
    print("selftest=ok" if ok else "selftest=FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grasp_dqn", description="DQN для захвата и подъёма кубика")
    parser.add_argument("--version", action="version", version=f"grasp_dqn v{get_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Обучение агента")
    p.add_argument("config")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Оценка контрольной точки")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int, default=None, help="Число эпизодов (по умолчанию harness.eval_episodes)")
    p.add_argument("--epsilon", type=float, default=None, help="ε (по умолчанию harness.eval_epsilon)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("cross-eval", help="Перекрёстная оценка двух агентов в окружениях A и B")
    p.add_argument("config")
    p.add_argument("checkpoint_a")
    p.add_argument("checkpoint_b")
    p.set_defaults(handler=cmd_cross_eval)

    p = sub.add_parser("trace", help="Трасса max Q по кадрам жадного эпизода")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_trace)

    p = sub.add_parser("activations", help="Карты признаков свёрточных слоёв")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("image", help="Наблюдение в формате PGM")
    p.set_defaults(handler=cmd_activations)

    p = sub.add_parser("render", help="Сохранить кадр начального состояния")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="Путь к PGM (по умолчанию <run>/observation.pgm)")
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("selftest", help="Проверка градиентов и табличный оракул")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(handler=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except (GraspDQNError, OSError, ValueError) as e:
        log_error_with_context(logger, e, f"Команда {args.command} завершилась ошибкой")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
