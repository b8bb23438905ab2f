#!/usr/bin/env python3
"""
Табличный оракул: код обучения агента сходится к точному Q* на цепочке.
"""

import sys
from pathlib import Path

import numpy as np

# Добавляем корневую директорию в путь для импортов
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from oracles import TABULAR_TOLERANCE, ChainMDP, run_tabular_oracle, value_iteration


def test_chain_mdp():
    mdp = ChainMDP()
    assert mdp.step(0, 1) == (0, 0.0, False), "Шаг влево у края остаётся на месте"
    assert mdp.step(mdp.goal - 1, 0) == (mdp.goal, 1.0, True)


def test_value_iteration():
    """Q* на цепочке: γ^k до цели."""
    mdp = ChainMDP()
    q_star = value_iteration(mdp)
    # из состояния перед целью шаг вправо сразу даёт 1
    assert np.isclose(q_star[mdp.goal - 1, 0], 1.0)
    assert np.isclose(q_star[0, 0], mdp.discount ** (mdp.goal - 1))
    assert np.isclose(q_star[0, 1], mdp.discount ** mdp.goal)


def test_tabular_oracle_converges():
    """max |Q - Q*| < 1e-2 после 10^4 шагов."""
    print("TEST: Табличный оракул")
    print("=" * 50)

    report = run_tabular_oracle(seed=0)
    print(f"   max|Q - Q*| = {report.max_error:.2e}")
    assert report.steps == 10_000
    assert report.max_error < TABULAR_TOLERANCE, f"Ошибка {report.max_error:.2e} >= {TABULAR_TOLERANCE}"
    assert report.passed
    print("   [OK]")


if __name__ == "__main__":
    test_chain_mdp()
    test_value_iteration()
    test_tabular_oracle_converges()
    print("\nВсе тесты оракулов пройдены")
