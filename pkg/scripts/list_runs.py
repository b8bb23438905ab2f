"""
Список запусков из реестра с последними метриками.

Запуск:
    python scripts/list_runs.py [--output-dir runs] [--kind train] [--episodes]
"""

import argparse
import os
import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dotenv import load_dotenv

from db import get_database_url
from registry import get_run_episodes, get_run_evaluations, list_runs


def main() -> None:
    load_dotenv()
    parser = argparse.ArgumentParser(description="Показать запуски из реестра")
    parser.add_argument("--output-dir", default=os.getenv("GRASP_DQN_OUTPUT_ROOT", "runs"), help="Корень вывода")
    parser.add_argument("--kind", default=None, help="train, eval или cross-eval")
    parser.add_argument("--episodes", action="store_true", help="Показать последние 10 эпизодов каждого запуска")
    args = parser.parse_args()

    url = get_database_url(args.output_dir)
    try:
        runs = list_runs(url, args.kind)
    except Exception as e:
        print(f"❌ Не удалось прочитать реестр {url}: {e}")
        sys.exit(1)

    if not runs:
        print("📁 Запусков нет")
        return

    print(f"📋 Запуски ({len(runs)}):")
    print("-" * 60)
    for run in runs:
        episodes = get_run_episodes(url, run.id)
        last = episodes[-1] if episodes else None
        summary = f"эпизодов {len(episodes)}"
        if last:
            summary += f", успехов {last.cumulative_successes}, ε {last.epsilon:.3f}"
        print(f"{run.id:>4}  {run.name:<30} {run.kind:<10} {run.status:<10} seed={run.seed}  {summary}")
        for evaluation in get_run_evaluations(url, run.id):
            print(f"      env {evaluation.environment}: {evaluation.success_rate:.0%} ({evaluation.episodes} эп., ε={evaluation.epsilon})  {evaluation.agent}")
        if args.episodes:
            for record in episodes[-10:]:
                print(
                    f"      #{record.episode}: success={int(record.success)} reward={record.mean_reward:.4f} "
                    f"max_q={record.mean_max_q:.4f} length={record.length}"
                )


if __name__ == "__main__":
    main()
