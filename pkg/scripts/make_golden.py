"""
Сгенерировать эталонный кадр сцены по умолчанию для регрессионного теста рендерера.

Запуск:
    python scripts/make_golden.py
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathlib import Path

import numpy as np

from renderer import CameraSpec, render, write_pgm
from sim import ResetSpec, default_chain, reset

GOLDEN_PATH = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_scene_64.pgm"


def main() -> None:
    chain = default_chain()
    world = reset(ResetSpec(), np.random.default_rng(0), chain)
    observation = render(world, chain, CameraSpec(), 64, 64)
    write_pgm(GOLDEN_PATH, observation.pixels)
    print(f"✅ Эталонный кадр сохранён: {GOLDEN_PATH}")


if __name__ == "__main__":
    main()
