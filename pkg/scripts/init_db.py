"""
Небольшой скрипт для инициализации реестра запусков (создания таблиц).

Запуск (из активированного виртуального окружения):
    python scripts/init_db.py [--output-dir runs]
"""

import argparse
import os
import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dotenv import load_dotenv

from db import get_database_url, init_db


def main() -> None:
    load_dotenv()
    parser = argparse.ArgumentParser(description="Создать таблицы реестра запусков")
    parser.add_argument("--output-dir", default=os.getenv("GRASP_DQN_OUTPUT_ROOT", "runs"), help="Корень вывода")
    args = parser.parse_args()

    url = get_database_url(args.output_dir)
    init_db(url)
    print(f"Реестр инициализирован: {url}")


if __name__ == "__main__":
    main()
