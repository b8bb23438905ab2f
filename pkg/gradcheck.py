"""
Проверка аналитических градиентов центральными разностями.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-5


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """
    Центральные разности df/dx.

    x меняется на месте и восстанавливается; f вычисляет скаляр, читая x.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=[["readwrite"]])
    while not it.finished:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + h
        f_plus = f()
        x[idx] = original - h
        f_minus = f()
        x[idx] = original
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
        it.iternext()
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Максимальная относительная ошибка по элементам.

    Знаменатель |a| + |n| ограничен снизу 1e-3 от наибольшей компоненты
    тензора, иначе почти нулевые компоненты дают шум округления.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"формы не совпадают: {analytic.shape} и {numeric.shape}")
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    floor = max(1e-3 * scale, 1e-300)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))
