"""
Модуль наивных (plug-in) оценок.

Эмпирическая функция распределения F̂, оценка квантиля q̂ через порядковые
статистики, теоретическая ковариация σ_F и переход от панели наблюдений
к выборке зашумленных оценок (фиксированные эффекты и s²ᵢ).
"""

import logging
import math
from typing import Callable, Tuple, Union

import numpy as np

from core import (
    ArrayLike,
    BadTau,
    CdfEstimate,
    NoisySample,
    Panel,
    ThetaGrid,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

# Допуск при вычислении ⌈τn⌉: τ = 0.3, n = 10 дает 3.0000000000000004
RANK_TOLERANCE = 1e-9


def check_tau(tau: float) -> float:
    """
    Проверяет уровень квантиля.

    Raises:
        BadTau: Если τ не лежит в (0, 1)
    """
    try:
        tau = float(tau)
    except (TypeError, ValueError):
        raise BadTau(f"Уровень квантиля должен быть числом, получено {tau!r}")
    if not (0.0 < tau < 1.0):
        raise BadTau(f"Уровень квантиля должен лежать в (0, 1), получено {tau}")
    return tau


def order_rank(tau: float, n: int) -> int:
    """
    Ранг ⌈τn⌉, ограниченный отрезком [1, n].

    Args:
        tau (float): Доля (может выходить за (0, 1) для скорректированных рангов)
        n (int): Размер выборки

    Returns:
        int: Номер порядковой статистики (с единицы)
    """
    k = math.ceil(tau * n - RANK_TOLERANCE)
    return min(max(k, 1), n)


def ecdf_values(values: ArrayLike, points: ArrayLike) -> np.ndarray:
    """
    Доля значений, не превосходящих каждую из точек (индикатор с ≤).

    Args:
        values (ArrayLike): Наблюдения
        points (ArrayLike): Точки вычисления

    Returns:
        np.ndarray: Значения из {0, 1/n, …, 1}
    """
    ordered = np.sort(np.asarray(values, dtype=float), kind="stable")
    counts = np.searchsorted(ordered, np.asarray(points, dtype=float), side="right")
    return counts / ordered.size


def ecdf(sample: NoisySample, grid: ThetaGrid) -> np.ndarray:
    """
    Эмпирическая функция распределения F̂(θ) = n⁻¹ Σ 1{ϑᵢ ≤ θ} на сетке.

    Args:
        sample (NoisySample): Выборка зашумленных оценок
        grid (ThetaGrid): Сетка θ

    Returns:
        np.ndarray: Неубывающий вектор значений в [0, 1]
    """
    counts = np.searchsorted(sample.sorted_draws, grid.points, side="right")
    return counts / sample.n


def order_statistic(values: ArrayLike, tau: float) -> float:
    """⌈τn⌉-я порядковая статистика произвольного вектора."""
    ordered = np.sort(np.asarray(values, dtype=float), kind="stable")
    return float(ordered[order_rank(tau, ordered.size) - 1])


def quantile_plugin(sample: NoisySample, tau: float) -> float:
    """
    Наивная оценка квантиля q̂(τ) = ϑ_(⌈τn⌉).

    Args:
        sample (NoisySample): Выборка
        tau (float): Уровень квантиля в (0, 1)

    Returns:
        float: k-я по величине оценка, k = ⌈τn⌉

    Raises:
        BadTau: Если τ вне (0, 1)
    """
    tau = check_tau(tau)
    return float(sample.sorted_draws[order_rank(tau, sample.n) - 1])


def sigma_F(
    F: Callable[[float], float], theta1: float, theta2: float
) -> float:
    """Ковариация σ_F(θ, θ′) = F(θ ∧ θ′) − F(θ)F(θ′)."""
    return float(F(min(theta1, theta2)) - F(theta1) * F(theta2))


def panel_moments(panel: Panel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Средние по строкам и несмещенные внутригрупповые дисперсии.

    Args:
        panel (Panel): Панель наблюдений

    Returns:
        Tuple[np.ndarray, np.ndarray]: (ϑᵢ, s²ᵢ) с делителем m − 1
    """
    means = panel.data.mean(axis=1)
    residuals = panel.data - means[:, None]
    variances = (residuals * residuals).sum(axis=1) / (panel.m - 1)
    return means, variances


def reduce_panel(panel: Panel) -> NoisySample:
    """
    Переход от панели к выборке зашумленных оценок.

    Args:
        panel (Panel): Панель n×m

    Returns:
        NoisySample: draws - средние по строкам, noise_var - s²ᵢ, m - число периодов

    Raises:
        ZeroVariance: Если какая-либо строка постоянна
    """
    means, variances = panel_moments(panel)
    constant = variances <= 0.0
    if constant.any():
        i = int(np.flatnonzero(constant)[0])
        unit = panel.units[i]
        raise ZeroVariance(
            f"Единица {unit}: нулевая внутригрупповая дисперсия (все наблюдения равны)",
            index=i,
            unit=unit,
        )
    return NoisySample(means, variances, panel.m)


def basis_se(basis: np.ndarray) -> Union[float, np.ndarray]:
    """
    Стандартная ошибка среднего по единицам: std(ddof=1)/√n по оси 0.

    Args:
        basis (np.ndarray): Значения базиса влияния, единицы по оси 0

    Returns:
        Union[float, np.ndarray]: SE для каждого столбца
    """
    n = basis.shape[0]
    se = basis.std(axis=0, ddof=1) / math.sqrt(n)
    return float(se) if np.ndim(se) == 0 else se


def indicator_basis(sample: NoisySample, points: ArrayLike) -> np.ndarray:
    """Матрица 1{ϑᵢ ≤ θ} размера n × len(points)."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    return (sample.draws[:, None] <= points[None, :]).astype(float)


def naive_cdf(sample: NoisySample, grid: ThetaGrid) -> CdfEstimate:
    """
    Наивная оценка F̂ в виде CdfEstimate с SE индикаторного базиса.

    Args:
        sample (NoisySample): Выборка
        grid (ThetaGrid): Сетка θ

    Returns:
        CdfEstimate: bias_hat = 0, f_corrected = f_hat
    """
    f_hat = ecdf(sample, grid)
    return CdfEstimate(
        grid=grid,
        f_hat=f_hat,
        bias_hat=np.zeros_like(f_hat),
        f_corrected=f_hat,
        se=basis_se(indicator_basis(sample, grid.points)),
        method="naive",
        m=sample.m,
    )
